//! Text file formats for datasets and standalone trajectories.
//!
//! Dataset layout (one record per line, whitespace separated):
//!
//! ```text
//! METALIFT-DATASET 1
//! joints <J>
//! joint <index> <name> <parent index or -1>      (J lines)
//! mirror <left bone> <right bone>                (zero or more)
//! head <neck joint> <head-top joint>
//! sequences <S>
//! sequence <index>
//! seed <u64>
//! fps <f64>
//! intrinsics <fx> <fy> <cx> <cy>
//! frames <T>
//! gt3d                                           followed by T lines of J·3 numbers
//! projected                                      followed by T lines of J·2 numbers
//! detected                                       followed by T lines of J·2 numbers
//! end
//! ```
//!
//! Trajectory layout:
//!
//! ```text
//! METALIFT-TRAJECTORY 1
//! intrinsics <fx> <fy> <cx> <cy>
//! frames <T> joints <J>
//! <J·2 numbers>                                  (T lines)
//! ```
//!
//! Numbers are written with 17 significant digits so every `f64` survives a
//! round trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::camera::{Intrinsics, PixelPoint};
use crate::datagen::{DatasetEntry, MotionSequence, Trajectory2D};
use crate::error::{Error, Result};
use crate::skeleton::{Pose3D, Pose3DSequence, SkeletonTopology};

pub const DATASET_MAGIC: &str = "METALIFT-DATASET";
pub const DATASET_VERSION: &str = "1";
pub const TRAJECTORY_MAGIC: &str = "METALIFT-TRAJECTORY";
pub const TRAJECTORY_VERSION: &str = "1";

fn num(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

fn write_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        num(out, v);
    }
    out.push('\n');
}

fn write_points(out: &mut String, t: &Trajectory2D) {
    for f in 0..t.frames {
        write_row(out, t.frame(f).iter().flat_map(|p| [p.a, p.b]));
    }
}

fn write_intrinsics(out: &mut String, k: &Intrinsics) {
    out.push_str("intrinsics ");
    write_row(out, [k.fx, k.fy, k.cx, k.cy]);
}

pub fn dataset_to_string(entries: &[DatasetEntry]) -> Result<String> {
    let Some(first) = entries.first() else {
        return Err(Error::invalid("cannot save an empty dataset"));
    };
    let topo = &first.motion.topology;
    if entries.iter().any(|e| &e.motion.topology != topo) {
        return Err(Error::invalid("all sequences in a dataset must share one topology"));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{DATASET_MAGIC} {DATASET_VERSION}");
    let _ = writeln!(out, "joints {}", topo.num_joints());
    for (i, (name, p)) in topo.joint_names.iter().zip(&topo.parent).enumerate() {
        let p = p.map_or(-1, |p| p as i64);
        let _ = writeln!(out, "joint {i} {name} {p}");
    }
    for (l, r) in &topo.mirror_pairs {
        let _ = writeln!(out, "mirror {l} {r}");
    }
    let _ = writeln!(out, "head {} {}", topo.head_segment.0, topo.head_segment.1);
    let _ = writeln!(out, "sequences {}", entries.len());
    for (i, e) in entries.iter().enumerate() {
        let m = &e.motion;
        let _ = writeln!(out, "sequence {i}");
        let _ = writeln!(out, "seed {}", m.seed);
        out.push_str("fps ");
        write_row(&mut out, [m.fps]);
        write_intrinsics(&mut out, &m.intrinsics);
        let _ = writeln!(out, "frames {}", m.len());
        out.push_str("gt3d\n");
        for f in &m.gt3d.frames {
            write_row(&mut out, f.joints.iter().flatten().copied());
        }
        out.push_str("projected\n");
        write_points(&mut out, &e.projected);
        out.push_str("detected\n");
        write_points(&mut out, &e.detected);
        out.push_str("end\n");
    }
    Ok(out)
}

pub fn save_dataset(path: impl AsRef<Path>, entries: &[DatasetEntry]) -> Result<()> {
    fs::write(path, dataset_to_string(entries)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, path)
}

pub fn save_trajectory(path: impl AsRef<Path>, t: &Trajectory2D, k: &Intrinsics) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{TRAJECTORY_MAGIC} {TRAJECTORY_VERSION}");
    write_intrinsics(&mut out, k);
    let _ = writeln!(out, "frames {} joints {}", t.frames, t.joints);
    write_points(&mut out, t);
    fs::write(path, out)?;
    Ok(())
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<(Trajectory2D, Intrinsics)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut c = Cursor::new(&text, path);
    c.header(TRAJECTORY_MAGIC, TRAJECTORY_VERSION)?;
    let k = c.intrinsics()?;
    let toks = c.keyword_line("frames")?;
    let (line, _) = c.last();
    if toks.len() != 3 || toks[1] != "joints" {
        return Err(c.err(line, "frames", "expected `frames <T> joints <J>`"));
    }
    let frames: usize = c.parse_tok(toks[0], "frames")?;
    let joints: usize = c.parse_tok(toks[2], "joints")?;
    let t = c.points(frames, joints, "points")?;
    c.expect_eof()?;
    Ok((t, k))
}

struct Cursor<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
    path: PathBuf,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, path: &Path) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Cursor {
            lines,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    fn err(&self, line: usize, field: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn last(&self) -> (usize, &'a str) {
        self.lines[self.pos.saturating_sub(1)]
    }

    fn next(&mut self, field: &str) -> Result<(usize, &'a str)> {
        match self.lines.get(self.pos) {
            Some(&l) => {
                self.pos += 1;
                Ok(l)
            }
            None => {
                let line = self.lines.last().map_or(1, |l| l.0 + 1);
                Err(self.err(line, field, "unexpected end of file"))
            }
        }
    }

    fn expect_eof(&self) -> Result<()> {
        match self.lines.get(self.pos) {
            None => Ok(()),
            Some(&(line, _)) => Err(self.err(line, "eof", "trailing content")),
        }
    }

    fn header(&mut self, magic: &str, version: &str) -> Result<()> {
        let (line, text) = self.next("header")?;
        let mut toks = text.split_whitespace();
        if toks.next() != Some(magic) {
            return Err(self.err(line, "header", format!("expected `{magic} <version>`")));
        }
        let found = toks.next().unwrap_or("");
        if found != version {
            return Err(Error::Version {
                found: found.to_string(),
                supported: version.to_string(),
            });
        }
        Ok(())
    }

    /// Reads a line that must start with `keyword`; returns the remaining tokens.
    fn keyword_line(&mut self, keyword: &str) -> Result<Vec<&'a str>> {
        let (line, text) = self.next(keyword)?;
        let mut toks = text.split_whitespace();
        if toks.next() != Some(keyword) {
            return Err(self.err(line, keyword, format!("expected `{keyword}`, found `{text}`")));
        }
        Ok(toks.collect())
    }

    fn parse_tok<T: FromStr>(&self, tok: &str, field: &str) -> Result<T> {
        let (line, _) = self.last();
        tok.parse()
            .map_err(|_| self.err(line, field, format!("cannot parse `{tok}`")))
    }

    fn single<T: FromStr>(&mut self, keyword: &str) -> Result<T> {
        let toks = self.keyword_line(keyword)?;
        if toks.len() != 1 {
            let (line, _) = self.last();
            return Err(self.err(line, keyword, "expected exactly one value"));
        }
        self.parse_tok(toks[0], keyword)
    }

    fn floats(&mut self, expected: usize, field: &str) -> Result<Vec<f64>> {
        let (line, text) = self.next(field)?;
        let vals = text
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| self.err(line, field, format!("cannot parse `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != expected {
            return Err(self.err(
                line,
                field,
                format!("expected {expected} numbers, found {}", vals.len()),
            ));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(self.err(line, field, "non-finite value"));
        }
        Ok(vals)
    }

    fn intrinsics(&mut self) -> Result<Intrinsics> {
        let toks = self.keyword_line("intrinsics")?;
        let (line, _) = self.last();
        let v = toks
            .iter()
            .map(|t| self.parse_tok::<f64>(t, "intrinsics"))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != 4 {
            return Err(self.err(line, "intrinsics", "expected fx fy cx cy"));
        }
        Intrinsics::new(v[0], v[1], v[2], v[3]).map_err(|e| self.err(line, "intrinsics", e.to_string()))
    }

    fn points(&mut self, frames: usize, joints: usize, field: &str) -> Result<Trajectory2D> {
        let mut points = Vec::with_capacity(frames * joints);
        for _ in 0..frames {
            let row = self.floats(joints * 2, field)?;
            points.extend(row.chunks_exact(2).map(|c| PixelPoint::new(c[0], c[1])));
        }
        Trajectory2D::new(frames, joints, points)
    }
}

fn parse_dataset(text: &str, path: &Path) -> Result<Vec<DatasetEntry>> {
    let mut c = Cursor::new(text, path);
    c.header(DATASET_MAGIC, DATASET_VERSION)?;
    let topology = parse_topology(&mut c)?;
    let n: usize = c.single("sequences")?;
    let j = topology.num_joints();
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let idx: usize = c.single("sequence")?;
        if idx != i {
            let (line, _) = c.last();
            return Err(c.err(line, "sequence", format!("expected index {i}, found {idx}")));
        }
        let seed: u64 = c.single("seed")?;
        let fps: f64 = c.single("fps")?;
        let intrinsics = c.intrinsics()?;
        let frames: usize = c.single("frames")?;
        c.keyword_line("gt3d")?;
        let mut poses = Vec::with_capacity(frames);
        for _ in 0..frames {
            let row = c.floats(j * 3, "gt3d")?;
            poses.push(Pose3D::new(
                row.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(),
            ));
        }
        let gt3d = Pose3DSequence::new(poses).map_err(|e| {
            let (line, _) = c.last();
            c.err(line, "gt3d", e.to_string())
        })?;
        c.keyword_line("projected")?;
        let projected = c.points(frames, j, "projected")?;
        c.keyword_line("detected")?;
        let detected = c.points(frames, j, "detected")?;
        c.keyword_line("end")?;
        entries.push(DatasetEntry {
            motion: MotionSequence {
                gt3d,
                intrinsics,
                fps,
                seed,
                topology: topology.clone(),
            },
            projected,
            detected,
        });
    }
    c.expect_eof()?;
    Ok(entries)
}

fn parse_topology(c: &mut Cursor<'_>) -> Result<SkeletonTopology> {
    let j: usize = c.single("joints")?;
    let mut joint_names = Vec::with_capacity(j);
    let mut parent = Vec::with_capacity(j);
    for i in 0..j {
        let toks = c.keyword_line("joint")?;
        let (line, _) = c.last();
        if toks.len() != 3 {
            return Err(c.err(line, "joint", "expected `joint <index> <name> <parent>`"));
        }
        let idx: usize = c.parse_tok(toks[0], "joint")?;
        if idx != i {
            return Err(c.err(line, "joint", format!("expected index {i}, found {idx}")));
        }
        joint_names.push(toks[1].to_string());
        let p: i64 = c.parse_tok(toks[2], "joint.parent")?;
        parent.push(match p {
            -1 => None,
            p if p >= 0 => Some(p as usize),
            _ => return Err(c.err(line, "joint.parent", format!("invalid parent {p}"))),
        });
    }
    let mut mirror_pairs = Vec::new();
    let head_segment = loop {
        let (line, text) = c.next("head")?;
        let toks: Vec<&str> = text.split_whitespace().collect();
        match toks.as_slice() {
            ["mirror", l, r] => {
                mirror_pairs.push((c.parse_tok(l, "mirror")?, c.parse_tok(r, "mirror")?));
            }
            ["head", n, h] => break (c.parse_tok(n, "head")?, c.parse_tok(h, "head")?),
            _ => return Err(c.err(line, "head", format!("expected `mirror` or `head`, found `{text}`"))),
        }
    };
    let topo = SkeletonTopology {
        joint_names,
        parent,
        mirror_pairs,
        head_segment,
    };
    topo.validate().map_err(|e| {
        let (line, _) = c.last();
        c.err(line, "topology", e.to_string())
    })?;
    Ok(topo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_dataset, DataConfig};
    use crate::skeleton::default_topology;

    fn tiny() -> Vec<DatasetEntry> {
        let cfg = DataConfig {
            sequences: 2,
            frames: 12,
            ..DataConfig::default()
        };
        gen_dataset(&default_topology(), &cfg, 42).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        let data = tiny();
        save_dataset(&path, &data).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), data);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let text = dataset_to_string(&tiny()).unwrap();
        let cut: String = text.lines().take(40).collect::<Vec<_>>().join("\n");
        let err = parse_dataset(&cut, Path::new("cut.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        // half a line
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            parse_dataset(cut, Path::new("cut.txt")),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn unknown_version_names_supported() {
        let text = dataset_to_string(&tiny()).unwrap().replacen("DATASET 1", "DATASET 7", 1);
        let err = parse_dataset(&text, Path::new("v.txt")).unwrap_err();
        match &err {
            Error::Version { found, supported } => {
                assert_eq!(found, "7");
                assert_eq!(supported, "1");
            }
            e => panic!("unexpected {e}"),
        }
        assert!(err.to_string().contains("supported: 1"));
    }

    #[test]
    fn malformed_number_reports_line_and_field() {
        let text = dataset_to_string(&tiny()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let target = lines.iter().position(|l| *l == "gt3d").unwrap() + 1;
        let mut broken: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        broken[target] = broken[target].replacen('e', "x", 1);
        let err = parse_dataset(&broken.join("\n"), Path::new("m.txt")).unwrap_err();
        match err {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, target + 1);
                assert_eq!(field, "gt3d");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn cyclic_topology_rejected() {
        let text = dataset_to_string(&tiny())
            .unwrap()
            .replacen("joint 0 pelvis -1", "joint 0 pelvis 3", 1);
        let err = parse_dataset(&text, Path::new("t.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { ref field, .. } if field == "topology"), "{err}");
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        let data = tiny();
        let k = data[0].motion.intrinsics;
        save_trajectory(&path, &data[0].detected, &k).unwrap();
        let (t, k2) = load_trajectory(&path).unwrap();
        assert_eq!(t, data[0].detected);
        assert_eq!(k, k2);
    }
}
