//! Binary checkpoint container: a short text header followed by raw
//! little-endian `f64` payloads.
//!
//! ```text
//! METALIFT-CKPT 1
//! meta <key> <value...>
//! segment <name> <rows> <cols>
//! sha256 <hex digest of the payload>
//! data
//! <rows·cols·8 bytes per segment, in header order>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::training::hex;

pub const CHECKPOINT_MAGIC: &str = "METALIFT-CKPT";
pub const CHECKPOINT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedSegment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub segments: Vec<NamedSegment>,
}

impl Checkpoint {
    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta
            .get(key)
            .ok_or_else(|| Error::invalid(format!("checkpoint is missing meta key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::invalid(format!("checkpoint meta `{key}` = `{raw}` is malformed")))
    }

    pub fn push(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) {
        assert_eq!(rows * cols, values.len());
        self.segments.push(NamedSegment {
            name: name.to_string(),
            rows,
            cols,
            values,
        });
    }

    pub fn segment(&self, name: &str) -> Option<&NamedSegment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        for (k, v) in &self.meta {
            head.push_str(&format!("meta {k} {v}\n"));
        }
        for s in &self.segments {
            head.push_str(&format!("segment {} {} {}\n", s.name, s.rows, s.cols));
        }
        let mut payload = Vec::new();
        for s in &self.segments {
            for v in &s.values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        head.push_str(&format!("sha256 {}\ndata\n", hex(&Sha256::digest(&payload))));
        let mut bytes = head.into_bytes();
        bytes.extend_from_slice(&payload);
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut line_no = 0;
        let mut next_line = |pos: &mut usize| -> Result<String> {
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::invalid("checkpoint header is truncated"))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| Error::invalid("checkpoint header is not UTF-8"))?
                .to_string();
            *pos += end + 1;
            line_no += 1;
            Ok(line)
        };

        let first = next_line(&mut pos)?;
        let mut toks = first.split_whitespace();
        if toks.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::invalid("not a metalift checkpoint"));
        }
        let version = toks.next().unwrap_or("");
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version.to_string(),
                supported: CHECKPOINT_VERSION.to_string(),
            });
        }

        let mut ckpt = Checkpoint::default();
        let mut shapes = Vec::new();
        let mut digest = None;
        loop {
            let line = next_line(&mut pos)?;
            let mut toks = line.splitn(2, ' ');
            match (toks.next(), toks.next()) {
                (Some("data"), None) => break,
                (Some("sha256"), Some(d)) => digest = Some(d.to_string()),
                (Some("meta"), Some(rest)) => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ckpt.meta.insert(k.to_string(), v.to_string());
                }
                (Some("segment"), Some(rest)) => {
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    let parsed = match parts.as_slice() {
                        [name, r, c] => r.parse().ok().zip(c.parse().ok()).map(|(r, c)| (name.to_string(), r, c)),
                        _ => None,
                    };
                    shapes.push(parsed.ok_or_else(|| Error::invalid(format!("malformed segment line `{line}`")))?);
                }
                _ => return Err(Error::invalid(format!("unexpected checkpoint header line `{line}`"))),
            }
        }

        let digest = digest.ok_or_else(|| Error::invalid("checkpoint header has no sha256 line"))?;
        if hex(&Sha256::digest(&bytes[pos..])) != digest {
            return Err(Error::invalid("checkpoint payload does not match its sha256 digest (corrupt or truncated file)"));
        }
        for (name, rows, cols) in shapes {
            let n: usize = rows * cols;
            let need = n * 8;
            if bytes.len() < pos + need {
                return Err(Error::invalid(format!("checkpoint payload for `{name}` is truncated")));
            }
            let values = bytes[pos..pos + need]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            pos += need;
            ckpt.segments.push(NamedSegment {
                name,
                rows,
                cols,
                values,
            });
        }
        if pos != bytes.len() {
            return Err(Error::invalid("trailing bytes after checkpoint payload"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
