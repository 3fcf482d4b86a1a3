//! Procedural motion capture: rigid-bone skeletons driven by smooth joint
//! rotations, a pinhole projection of every frame, and a keypoint-detector
//! jitter model.

use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{self, Intrinsics, PixelPoint, DEFAULT_Z_MIN};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};
use crate::skeleton::{Pose3D, Pose3DSequence, SkeletonTopology};

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    /// Camera-frame joints in millimeters.
    pub gt3d: Pose3DSequence,
    pub intrinsics: Intrinsics,
    pub fps: f64,
    pub seed: u64,
    pub topology: SkeletonTopology,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.gt3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt3d.is_empty()
    }
}

/// `frames × joints` pixel keypoints, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory2D {
    pub frames: usize,
    pub joints: usize,
    pub points: Vec<PixelPoint>,
}

impl Trajectory2D {
    pub fn new(frames: usize, joints: usize, points: Vec<PixelPoint>) -> Result<Self> {
        if points.len() != frames * joints {
            return Err(Error::invalid(format!(
                "{} points for {frames} frames × {joints} joints",
                points.len()
            )));
        }
        if points.iter().any(|p| !(p.a.is_finite() && p.b.is_finite())) {
            return Err(Error::invalid("trajectory contains non-finite points"));
        }
        Ok(Trajectory2D {
            frames,
            joints,
            points,
        })
    }

    pub fn get(&self, t: usize, j: usize) -> PixelPoint {
        self.points[t * self.joints + j]
    }

    pub fn frame(&self, t: usize) -> &[PixelPoint] {
        &self.points[t * self.joints..(t + 1) * self.joints]
    }

    pub fn map_points(&self, f: impl FnMut(PixelPoint) -> Result<PixelPoint>) -> Result<Self> {
        let points = self.points.iter().copied().map(f).collect::<Result<_>>()?;
        Trajectory2D::new(self.frames, self.joints, points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub fps: f64,
    pub intrinsics: Intrinsics,
    /// Pelvis depth range in mm.
    pub depth_min: f64,
    pub depth_max: f64,
    /// Lateral half-range of the pelvis center, as a fraction of depth.
    pub lateral_fraction: f64,
    /// Scales every joint-angle amplitude.
    pub motion_amplitude: f64,
    /// Global body-size range (multiplies all bone lengths).
    pub body_scale_min: f64,
    pub body_scale_max: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            fps: 50.0,
            intrinsics: Intrinsics::synthetic_default(),
            depth_min: 2000.0,
            depth_max: 5000.0,
            lateral_fraction: 0.3,
            motion_amplitude: 1.0,
            body_scale_min: 0.9,
            body_scale_max: 1.1,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let ok = self.fps > 0.0
            && self.depth_min > 0.0
            && self.depth_max >= self.depth_min
            && self.lateral_fraction >= 0.0
            && self.motion_amplitude >= 0.0
            && self.body_scale_min > 0.0
            && self.body_scale_max >= self.body_scale_min;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid motion config {self:?}")))
        }
    }
}

/// Rest direction (y points down, x to the subject's left as seen by the
/// camera), nominal length in mm, and swing amplitude in radians for the bone
/// ending at the named joint.
fn bone_prior(child: &str) -> ([f64; 3], f64, f64) {
    const UP: [f64; 3] = [0.0, -1.0, 0.0];
    const DOWN: [f64; 3] = [0.0, 1.0, 0.0];
    const LEFT: [f64; 3] = [1.0, 0.0, 0.0];
    const RIGHT: [f64; 3] = [-1.0, 0.0, 0.0];
    match child {
        "r_hip" => (RIGHT, 130.0, 0.08),
        "l_hip" => (LEFT, 130.0, 0.08),
        "r_knee" | "l_knee" => (DOWN, 450.0, 0.55),
        "r_ankle" | "l_ankle" => (DOWN, 440.0, 0.45),
        "spine" => (UP, 230.0, 0.12),
        "thorax" => (UP, 250.0, 0.10),
        "neck" => (UP, 110.0, 0.15),
        "head_top" => (UP, 190.0, 0.25),
        "r_shoulder" => (RIGHT, 150.0, 0.10),
        "l_shoulder" => (LEFT, 150.0, 0.10),
        "r_elbow" | "l_elbow" => (DOWN, 280.0, 0.75),
        "r_wrist" | "l_wrist" => (DOWN, 250.0, 0.60),
        _ => (DOWN, 250.0, 0.3),
    }
}

type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

/// Rotation `Ry(yaw) · Rx(pitch) · Rz(roll)`.
fn euler(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&ry, &mat_mul(&rx, &rz))
}

/// Sum of two sinusoids with random frequencies (Hz) and phases.
#[derive(Debug, Clone, Copy)]
struct Oscillator {
    terms: [(f64, f64, f64); 2],
}

impl Oscillator {
    fn sample(rng: &mut Rng, amplitude: f64) -> Self {
        let mut term = |scale: f64| {
            (
                amplitude * scale,
                rng.random_range(0.15..1.2),
                rng.random_range(0.0..TAU),
            )
        };
        Oscillator {
            terms: [term(0.7), term(0.3)],
        }
    }

    fn at(&self, seconds: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(amp, freq, phase)| amp * (TAU * freq * seconds + phase).sin())
            .sum()
    }
}

/// Generates one sequence. Bone lengths are fixed for the whole sequence and
/// mirrored bones share a length.
pub fn gen_motion(
    topology: &SkeletonTopology,
    n_frames: usize,
    seed: u64,
    cfg: &MotionConfig,
) -> Result<MotionSequence> {
    if n_frames == 0 {
        return Err(Error::invalid("n_frames must be at least 1"));
    }
    topology.validate()?;
    cfg.validate()?;
    let mut rng = rng_for(seed, &[0x6d6f74]);
    let j = topology.num_joints();
    let root = topology.root();

    let body_scale = rng.random_range(cfg.body_scale_min..=cfg.body_scale_max);
    let mut length = vec![0.0; j];
    let mut rest = vec![[0.0; 3]; j];
    let mut swing = vec![[Oscillator { terms: [(0.0, 0.0, 0.0); 2] }; 3]; j];
    for child in 0..j {
        if topology.parent[child].is_none() {
            continue;
        }
        let (dir, nominal, amp) = bone_prior(&topology.joint_names[child]);
        rest[child] = dir;
        length[child] = nominal * body_scale * rng.random_range(0.95..1.05);
        let amp = amp * cfg.motion_amplitude;
        swing[child] = [
            Oscillator::sample(&mut rng, amp),
            Oscillator::sample(&mut rng, 0.5 * amp),
            Oscillator::sample(&mut rng, 0.3 * amp),
        ];
    }
    // Left/right symmetric body: mirrored bones take the left length.
    let bone_child: Vec<usize> = topology.bones().iter().map(|&(_, c)| c).collect();
    for &(l, r) in &topology.mirror_pairs {
        length[bone_child[r]] = length[bone_child[l]];
    }

    let yaw0 = rng.random_range(0.0..TAU);
    let yaw_osc = Oscillator::sample(&mut rng, 0.8);
    let tilt = [
        Oscillator::sample(&mut rng, 0.08),
        Oscillator::sample(&mut rng, 0.05),
    ];
    let depth_mid = 0.5 * (cfg.depth_min + cfg.depth_max);
    let depth_half = 0.5 * (cfg.depth_max - cfg.depth_min);
    let z0 = depth_mid + rng.random_range(-0.5..0.5) * depth_half;
    let z_osc = Oscillator::sample(&mut rng, 0.45 * depth_half);
    let x0 = rng.random_range(-0.5..0.5) * cfg.lateral_fraction * z0;
    let x_osc = Oscillator::sample(&mut rng, 0.5 * cfg.lateral_fraction * z0);
    let y0 = rng.random_range(0.0..250.0);
    let y_osc = Oscillator::sample(&mut rng, 40.0);

    let order = topological_order(topology);
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let s = t as f64 / cfg.fps;
        let mut global = vec![[[0.0; 3]; 3]; j];
        let mut pos = vec![[0.0; 3]; j];
        global[root] = euler(yaw0 + yaw_osc.at(s), tilt[0].at(s), tilt[1].at(s));
        let z = (z0 + z_osc.at(s)).clamp(cfg.depth_min, cfg.depth_max);
        pos[root] = [x0 + x_osc.at(s), y0 + y_osc.at(s), z];
        for &c in &order {
            let Some(p) = topology.parent[c] else { continue };
            let [a, b, g] = &swing[c];
            let local = euler(b.at(s), a.at(s), g.at(s));
            global[c] = mat_mul(&global[p], &local);
            let off = mat_vec(&global[c], rest[c].map(|v| v * length[c]));
            pos[c] = [pos[p][0] + off[0], pos[p][1] + off[1], pos[p][2] + off[2]];
        }
        frames.push(Pose3D::new(pos));
    }

    // Keep every joint strictly in front of the camera.
    let min_z = frames
        .iter()
        .flat_map(|f| f.joints.iter().map(|p| p[2]))
        .fold(f64::INFINITY, f64::min);
    if min_z <= DEFAULT_Z_MIN {
        let shift = DEFAULT_Z_MIN - min_z + 500.0;
        for f in &mut frames {
            for p in &mut f.joints {
                p[2] += shift;
            }
        }
    }

    Ok(MotionSequence {
        gt3d: Pose3DSequence::new(frames)?,
        intrinsics: cfg.intrinsics,
        fps: cfg.fps,
        seed,
        topology: topology.clone(),
    })
}

fn topological_order(topology: &SkeletonTopology) -> Vec<usize> {
    let j = topology.num_joints();
    let mut children = vec![Vec::new(); j];
    for (c, p) in topology.parent.iter().enumerate() {
        if let Some(p) = *p {
            children[p].push(c);
        }
    }
    let mut order = Vec::with_capacity(j);
    let mut stack = vec![topology.root()];
    while let Some(n) = stack.pop() {
        order.push(n);
        stack.extend(children[n].iter().rev());
    }
    order
}

pub fn project_sequence(m: &MotionSequence) -> Result<Trajectory2D> {
    let points = m
        .gt3d
        .frames
        .iter()
        .flat_map(|f| f.joints.iter())
        .map(|&p| camera::project(p, &m.intrinsics))
        .collect::<Result<Vec<_>>>()?;
    Trajectory2D::new(m.len(), m.gt3d.num_joints(), points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Gaussian std-dev in pixels, applied to every joint.
    pub sigma_px: f64,
    /// Optional per-joint std-dev overriding `sigma_px`.
    pub per_joint_sigma_px: Option<Vec<f64>>,
    pub outlier_prob: f64,
    /// Outliers are displaced by a uniformly random radius up to this many pixels.
    pub outlier_max_px: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_px: 2.0,
            per_joint_sigma_px: None,
            outlier_prob: 0.01,
            outlier_max_px: 30.0,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            sigma_px: 0.0,
            per_joint_sigma_px: None,
            outlier_prob: 0.0,
            outlier_max_px: 0.0,
        }
    }

    pub fn is_none(&self) -> bool {
        let sigmas_zero = match &self.per_joint_sigma_px {
            Some(s) => s.iter().all(|&v| v == 0.0),
            None => self.sigma_px == 0.0,
        };
        sigmas_zero && (self.outlier_prob == 0.0 || self.outlier_max_px == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let sig_ok = self.sigma_px >= 0.0
            && self
                .per_joint_sigma_px
                .as_ref()
                .is_none_or(|s| s.iter().all(|&v| v >= 0.0 && v.is_finite()));
        if sig_ok && (0.0..=1.0).contains(&self.outlier_prob) && self.outlier_max_px >= 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid noise config {self:?}")))
        }
    }
}

/// Simulates a 2D keypoint detector by jittering clean keypoints.
pub fn simulate_detector(t: &Trajectory2D, noise: &NoiseConfig, seed: u64) -> Result<Trajectory2D> {
    noise.validate()?;
    if noise.is_none() {
        return Ok(t.clone());
    }
    if let Some(s) = &noise.per_joint_sigma_px {
        if s.len() != t.joints {
            return Err(Error::invalid(format!(
                "{} per-joint sigmas for {} joints",
                s.len(),
                t.joints
            )));
        }
    }
    let mut rng = rng_for(seed, &[0x646574]);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut points = t.points.clone();
    for (i, p) in points.iter_mut().enumerate() {
        let sigma = noise
            .per_joint_sigma_px
            .as_ref()
            .map_or(noise.sigma_px, |s| s[i % t.joints]);
        p.a += sigma * unit.sample(&mut rng);
        p.b += sigma * unit.sample(&mut rng);
        if rng.random::<f64>() < noise.outlier_prob {
            let radius = rng.random_range(0.0..=noise.outlier_max_px);
            let angle = rng.random_range(0.0..TAU);
            p.a += radius * angle.cos();
            p.b += radius * angle.sin();
        }
    }
    Trajectory2D::new(t.frames, t.joints, points)
}

/// A generated sequence with its clean projection and detector-style keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub motion: MotionSequence,
    pub projected: Trajectory2D,
    pub detected: Trajectory2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub sequences: usize,
    pub frames: usize,
    pub motion: MotionConfig,
    pub noise: NoiseConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            sequences: 24,
            frames: 240,
            motion: MotionConfig::default(),
            noise: NoiseConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequences == 0 || self.frames == 0 {
            return Err(Error::invalid("data.sequences and data.frames must be positive"));
        }
        self.motion.validate()?;
        self.noise.validate()
    }
}

/// Generates `cfg.sequences` entries in parallel; entry `i` is seeded from
/// `(seed, i)` so the result does not depend on scheduling.
pub fn gen_dataset(topology: &SkeletonTopology, cfg: &DataConfig, seed: u64) -> Result<Vec<DatasetEntry>> {
    cfg.validate()?;
    (0..cfg.sequences)
        .into_par_iter()
        .map(|i| {
            let seq_seed = crate::rng::derive_seed(seed, &[i as u64]);
            let motion = gen_motion(topology, cfg.frames, seq_seed, &cfg.motion)?;
            let projected = project_sequence(&motion)?;
            let detected = simulate_detector(&projected, &cfg.noise, seq_seed)?;
            Ok(DatasetEntry {
                motion,
                projected,
                detected,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{bone_lengths, default_topology};

    #[test]
    fn motion_is_deterministic_and_seed_dependent() {
        let topo = default_topology();
        let cfg = MotionConfig::default();
        let a = gen_motion(&topo, 50, 0, &cfg).unwrap();
        let b = gen_motion(&topo, 50, 0, &cfg).unwrap();
        assert_eq!(a, b);
        let c = gen_motion(&topo, 50, 1, &cfg).unwrap();
        assert_ne!(a.gt3d.frames[0], c.gt3d.frames[0]);
        assert!(gen_motion(&topo, 0, 0, &cfg).is_err());
    }

    #[test]
    fn motion_invariants_hold() {
        let topo = default_topology();
        for seed in 0..8 {
            let m = gen_motion(&topo, 300, seed, &MotionConfig::default()).unwrap();
            assert!(m.gt3d.frames.iter().flat_map(|f| f.joints.iter()).all(|p| p[2] > DEFAULT_Z_MIN));
            let bl = bone_lengths(&m.gt3d, &topo).unwrap();
            for t in 0..bl.frames {
                for b in 0..bl.bones {
                    let rel = (bl.get(t, b) - bl.get(0, b)).abs() / bl.get(0, b);
                    assert!(rel <= 1e-9, "seed {seed} frame {t} bone {b}: {rel}");
                }
            }
            for &(l, r) in &topo.mirror_pairs {
                assert!((bl.get(0, l) - bl.get(0, r)).abs() <= 1e-9 * bl.get(0, l));
            }
            let pelvis_z: Vec<f64> = m.gt3d.frames.iter().map(|f| f.joints[0][2]).collect();
            assert!(pelvis_z.iter().all(|&z| (2000.0..=5000.0).contains(&z)));
        }
    }

    #[test]
    fn near_camera_config_is_shifted_back() {
        let topo = default_topology();
        let cfg = MotionConfig {
            depth_min: 10.0,
            depth_max: 20.0,
            ..MotionConfig::default()
        };
        let m = gen_motion(&topo, 20, 3, &cfg).unwrap();
        assert!(m.gt3d.frames.iter().flat_map(|f| f.joints.iter()).all(|p| p[2] > DEFAULT_Z_MIN));
    }

    fn single_frame(joints: Vec<[f64; 3]>) -> MotionSequence {
        let topo = default_topology();
        MotionSequence {
            gt3d: Pose3DSequence::new(vec![Pose3D::new(joints)]).unwrap(),
            intrinsics: Intrinsics::synthetic_default(),
            fps: 50.0,
            seed: 0,
            topology: topo,
        }
    }

    #[test]
    fn projection_examples() {
        let mut joints = vec![[100.0, -50.0, 3000.0]; 17];
        joints[4] = [0.0, 0.0, 2500.0];
        let m = single_frame(joints.clone());
        let t = project_sequence(&m).unwrap();
        assert_eq!(t.get(0, 4), PixelPoint::new(500.0, 500.0));

        let doubled = single_frame(joints.iter().map(|p| p.map(|v| 2.0 * v)).collect());
        let t2 = project_sequence(&doubled).unwrap();
        for (p, q) in t.points.iter().zip(&t2.points) {
            assert!((p.a - q.a).abs() < 1e-12 && (p.b - q.b).abs() < 1e-12);
        }

        let topo = default_topology();
        let m = gen_motion(&topo, 5, 11, &MotionConfig::default()).unwrap();
        let t = project_sequence(&m).unwrap();
        let k = m.intrinsics;
        for (f, frame) in m.gt3d.frames.iter().enumerate() {
            for (j, p) in frame.joints.iter().enumerate() {
                let q = t.get(f, j);
                assert_eq!(q.a, k.fx * p[0] / p[2] + k.cx);
                assert_eq!(q.b, k.fy * p[1] / p[2] + k.cy);
            }
        }

        let bad = single_frame(vec![[0.0, 0.0, -5.0]; 17]);
        assert!(matches!(project_sequence(&bad), Err(Error::DegenerateDepth { .. })));
    }

    fn flat_trajectory(frames: usize, joints: usize) -> Trajectory2D {
        Trajectory2D::new(frames, joints, vec![PixelPoint::new(500.0, 400.0); frames * joints]).unwrap()
    }

    #[test]
    fn detector_noise_free_is_identity() {
        let t = flat_trajectory(10, 17);
        assert_eq!(simulate_detector(&t, &NoiseConfig::none(), 9).unwrap(), t);
    }

    #[test]
    fn detector_is_seed_deterministic() {
        let t = flat_trajectory(10, 17);
        let cfg = NoiseConfig::default();
        assert_eq!(
            simulate_detector(&t, &cfg, 4).unwrap(),
            simulate_detector(&t, &cfg, 4).unwrap()
        );
        assert_ne!(
            simulate_detector(&t, &cfg, 4).unwrap(),
            simulate_detector(&t, &cfg, 5).unwrap()
        );
    }

    #[test]
    fn detector_noise_is_zero_mean() {
        // 10⁵ samples per axis; the mean must sit within 3 standard errors.
        let t = flat_trajectory(10_000, 10);
        let cfg = NoiseConfig::default();
        let noisy = simulate_detector(&t, &cfg, 17).unwrap();
        let n = t.points.len() as f64;
        // variance per axis: σ² + p·E[R²cos²] = σ² + p·R²/6
        let var = cfg.sigma_px.powi(2) + cfg.outlier_prob * cfg.outlier_max_px.powi(2) / 6.0;
        let se = (var / n).sqrt();
        let (mut ma, mut mb) = (0.0, 0.0);
        for (p, q) in t.points.iter().zip(&noisy.points) {
            ma += q.a - p.a;
            mb += q.b - p.b;
        }
        assert!((ma / n).abs() < 3.0 * se, "mean a {}", ma / n);
        assert!((mb / n).abs() < 3.0 * se, "mean b {}", mb / n);
    }

    #[test]
    fn per_joint_sigma_length_checked() {
        let t = flat_trajectory(2, 17);
        let cfg = NoiseConfig {
            per_joint_sigma_px: Some(vec![1.0; 3]),
            ..NoiseConfig::default()
        };
        assert!(simulate_detector(&t, &cfg, 0).is_err());
    }

    #[test]
    fn dataset_generation_is_schedule_independent() {
        let topo = default_topology();
        let cfg = DataConfig {
            sequences: 4,
            frames: 30,
            ..DataConfig::default()
        };
        let a = gen_dataset(&topo, &cfg, 5).unwrap();
        let b = gen_dataset(&topo, &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_ne!(a[0].projected, a[0].detected);
    }
}
