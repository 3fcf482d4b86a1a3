//! Distortion sampling and construction of meta-learning tasks.
//!
//! A task is one camera: every frame and joint of a sequence is distorted with
//! the same parameters. Each task carries two disjoint sets of window starts,
//! a support set for the inner step and a query set for the outer loss.

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{self, DistortionParams, Intrinsics};
use crate::datagen::{simulate_detector, DatasetEntry, NoiseConfig, Trajectory2D};
use crate::error::{Error, Result};
use crate::lifter::WindowBatch;
use crate::rng::{rng_for, Rng};
use crate::skeleton::Pose3DSequence;

pub const PRESET_NAMES: [&str; 5] = ["d1", "d2", "d3", "d4", "h36m"];

/// Named distortion presets: d1/d2 heavy, d3/d4 moderate, h36m near-native.
pub fn preset(name: &str) -> Option<DistortionParams> {
    let p = match name {
        "d1" => (-4.142, 4.956, -0.062, -0.488, -0.712),
        "d2" => (4.142, -4.956, 0.062, -0.488, -0.712),
        "d3" => (-2.071, 2.478, -0.031, -0.010, -0.014),
        "d4" => (2.071, -2.478, 0.031, -0.010, -0.014),
        "h36m" => (-0.207, 0.248, -0.003, -0.001, -0.001),
        "none" => (0.0, 0.0, 0.0, 0.0, 0.0),
        _ => return None,
    };
    Some(DistortionParams::new(p.0, p.1, p.2, p.3, p.4))
}

pub fn preset_or_err(name: &str) -> Result<DistortionParams> {
    preset(name).ok_or_else(|| {
        Error::invalid(format!(
            "unknown distortion preset `{name}` (known: {}, none)",
            PRESET_NAMES.join(", ")
        ))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Bound on |k1|, |k2|, |k3|.
    pub lambda1: f64,
    /// Bound on |p1|, |p2|.
    pub lambda2: f64,
    pub n_tasks: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            lambda1: 5.0,
            lambda2: 0.5,
            n_tasks: 5,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 > 0.0 && self.lambda2 > 0.0 && self.n_tasks >= 1 {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid sampler config {self:?}")))
        }
    }

    /// `[lo, hi]` range of k1 for stratum `i` (1-based).
    pub fn k1_bin(&self, i: usize) -> (f64, f64) {
        let n = self.n_tasks as f64;
        let l = self.lambda1;
        (-l + 2.0 * l * (i - 1) as f64 / n, -l + 2.0 * l * i as f64 / n)
    }
}

pub fn sample_uniform(cfg: &SamplerConfig, rng: &mut Rng) -> DistortionParams {
    let (l1, l2) = (cfg.lambda1, cfg.lambda2);
    DistortionParams::new(
        rng.random_range(-l1..=l1),
        rng.random_range(-l1..=l1),
        rng.random_range(-l1..=l1),
        rng.random_range(-l2..=l2),
        rng.random_range(-l2..=l2),
    )
}

/// k1 drawn from stratum `i` of `n_tasks` equal-width bins over `[-λ1, λ1]`.
pub fn sample_k1_stratified(cfg: &SamplerConfig, i: usize, rng: &mut Rng) -> Result<f64> {
    if i < 1 || i > cfg.n_tasks {
        return Err(Error::invalid(format!(
            "stratum {i} outside 1..={}",
            cfg.n_tasks
        )));
    }
    let n = cfg.n_tasks as f64;
    let u = rng.random_range((i - 1) as f64 / n..=i as f64 / n);
    Ok(-cfg.lambda1 + 2.0 * cfg.lambda1 * u)
}

/// Uniform parameters with k1 replaced by a draw from stratum `i`.
pub fn sample_stratified(cfg: &SamplerConfig, i: usize, rng: &mut Rng) -> Result<DistortionParams> {
    let k1 = sample_k1_stratified(cfg, i, rng)?;
    Ok(DistortionParams {
        k1,
        ..sample_uniform(cfg, rng)
    })
}

/// A distorted keypoint sequence with its untouched 3D targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionTask {
    pub input: Trajectory2D,
    pub target: Pose3DSequence,
    pub params: DistortionParams,
    pub intrinsics: Intrinsics,
    /// Window starts for the inner (support) step.
    pub support: Vec<usize>,
    /// Window starts for the outer (query) loss; disjoint from `support`.
    pub query: Vec<usize>,
}

impl DistortionTask {
    fn batch(&self, starts: &[usize], frames: usize, root: usize) -> Result<WindowBatch> {
        let mut b = WindowBatch::new(frames, self.input.joints, root);
        for &s in starts {
            b.push(&self.input, s, &self.intrinsics, &self.target.frames[s + frames / 2])?;
        }
        Ok(b)
    }

    pub fn support_batch(&self, frames: usize, root: usize) -> Result<WindowBatch> {
        self.batch(&self.support, frames, root)
    }

    pub fn query_batch(&self, frames: usize, root: usize) -> Result<WindowBatch> {
        self.batch(&self.query, frames, root)
    }

    /// Support and query windows together.
    pub fn all_windows(&self, frames: usize, root: usize) -> Result<WindowBatch> {
        let mut b = self.support_batch(frames, root)?;
        b.extend(&self.query_batch(frames, root)?);
        Ok(b)
    }
}

fn distort_trajectory(t: &Trajectory2D, k: &Intrinsics, d: &DistortionParams) -> Result<Trajectory2D> {
    d.validate()?;
    if d.is_zero() {
        return Ok(t.clone());
    }
    t.map_points(|p| camera::distort_pixel(p, k, d))
}

/// Distorts detector-style keypoints; the 3D target is passed through.
pub fn task_from_predicted(
    traj: &Trajectory2D,
    gt: &Pose3DSequence,
    k: &Intrinsics,
    d: &DistortionParams,
) -> Result<DistortionTask> {
    if traj.frames != gt.len() || traj.joints != gt.num_joints() {
        return Err(Error::invalid(format!(
            "trajectory {}×{} does not match 3D sequence {}×{}",
            traj.frames,
            traj.joints,
            gt.len(),
            gt.num_joints()
        )));
    }
    Ok(DistortionTask {
        input: distort_trajectory(traj, k, d)?,
        target: gt.clone(),
        params: *d,
        intrinsics: *k,
        support: Vec::new(),
        query: Vec::new(),
    })
}

/// Projects the 3D joints, optionally jitters them, then distorts. The
/// standard clean-projection path passes [`NoiseConfig::none`].
pub fn task_from_gt3d(
    gt: &Pose3DSequence,
    k: &Intrinsics,
    d: &DistortionParams,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<DistortionTask> {
    gt.validate()?;
    let points = gt
        .frames
        .iter()
        .flat_map(|f| f.joints.iter())
        .map(|&j| camera::project(j, k))
        .collect::<Result<Vec<_>>>()?;
    let clean = Trajectory2D::new(gt.len(), gt.num_joints(), points)?;
    let jittered = simulate_detector(&clean, noise, seed)?;
    task_from_predicted(&jittered, gt, k, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// k1 of task `i` from stratum `i`.
    Stratified,
    Uniform,
    /// No distortion at all.
    Undistorted,
}

/// Where a task's 2D keypoints come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSource {
    /// Detector-style (jittered) keypoints stored with the dataset.
    Predicted,
    /// Clean projection of the 3D ground truth.
    Gt3d,
}

/// Draws windows from a dataset to build tasks.
#[derive(Debug, Clone, Copy)]
pub struct TaskSampler<'a> {
    pub entries: &'a [DatasetEntry],
    pub source: TaskSource,
    /// Window length (the lifter's receptive field).
    pub frames: usize,
    /// Windows in each of the support and query sets.
    pub windows_per_split: usize,
}

impl<'a> TaskSampler<'a> {
    pub fn new(entries: &'a [DatasetEntry], source: TaskSource, frames: usize, windows_per_split: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("cannot sample tasks from an empty dataset"));
        }
        if windows_per_split == 0 {
            return Err(Error::invalid("windows_per_split must be positive"));
        }
        for e in entries {
            let starts = (e.motion.len() + 1).saturating_sub(frames);
            if starts < 2 * windows_per_split {
                return Err(Error::invalid(format!(
                    "sequence of {} frames has {starts} window starts; {} disjoint ones are needed",
                    e.motion.len(),
                    2 * windows_per_split
                )));
            }
        }
        Ok(TaskSampler {
            entries,
            source,
            frames,
            windows_per_split,
        })
    }

    fn keypoints(&self, e: &'a DatasetEntry) -> &'a Trajectory2D {
        match self.source {
            TaskSource::Predicted => &e.detected,
            TaskSource::Gt3d => &e.projected,
        }
    }

    /// One task on a random sequence with the given distortion.
    pub fn sample_task(&self, d: &DistortionParams, rng: &mut Rng) -> Result<DistortionTask> {
        let e = &self.entries[rng.random_range(0..self.entries.len())];
        let mut task = task_from_predicted(self.keypoints(e), &e.motion.gt3d, &e.motion.intrinsics, d)?;
        let starts = e.motion.len() + 1 - self.frames;
        let picked = index::sample(rng, starts, 2 * self.windows_per_split).into_vec();
        let (s, q) = picked.split_at(self.windows_per_split);
        task.support = s.to_vec();
        task.query = q.to_vec();
        Ok(task)
    }
}

/// `cfg.n_tasks` tasks, task `i` seeded from `(seed, i)`.
pub fn make_meta_batch(
    sampler: &TaskSampler<'_>,
    cfg: &SamplerConfig,
    mode: SamplingMode,
    seed: u64,
) -> Result<Vec<DistortionTask>> {
    cfg.validate()?;
    (0..cfg.n_tasks)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, &[i as u64]);
            let d = match mode {
                SamplingMode::Stratified => sample_stratified(cfg, i + 1, &mut rng)?,
                SamplingMode::Uniform => sample_uniform(cfg, &mut rng),
                SamplingMode::Undistorted => DistortionParams::ZERO,
            };
            sampler.sample_task(&d, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::PixelPoint;
    use crate::datagen::{gen_dataset, DataConfig};
    use crate::skeleton::default_topology;
    use proptest::prelude::*;

    #[test]
    fn uniform_bounds_and_mean() {
        let cfg = SamplerConfig::default();
        let mut rng = rng_for(1, &[]);
        let draws: Vec<DistortionParams> = (0..10_000).map(|_| sample_uniform(&cfg, &mut rng)).collect();
        for d in &draws {
            assert!([d.k1, d.k2, d.k3].iter().all(|k| k.abs() <= 5.0));
            assert!([d.p1, d.p2].iter().all(|p| p.abs() <= 0.5));
        }
        let mean = draws.iter().map(|d| d.k1).sum::<f64>() / 1e4;
        // std of U[-5, 5] is 10/√12
        let se = 10.0 / 12f64.sqrt() / 100.0;
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
        let mut a = rng_for(9, &[]);
        let mut b = rng_for(9, &[]);
        assert_eq!(sample_uniform(&cfg, &mut a), sample_uniform(&cfg, &mut b));
    }

    #[test]
    fn stratified_bins() {
        let cfg = SamplerConfig::default();
        let mut rng = rng_for(2, &[]);
        for _ in 0..1000 {
            let k = sample_k1_stratified(&cfg, 1, &mut rng).unwrap();
            assert!((-5.0..=-3.0).contains(&k));
            let k = sample_k1_stratified(&cfg, 5, &mut rng).unwrap();
            assert!((3.0..=5.0).contains(&k));
        }
        assert!(sample_k1_stratified(&cfg, 0, &mut rng).is_err());
        assert!(sample_k1_stratified(&cfg, 6, &mut rng).is_err());
        let one = SamplerConfig {
            n_tasks: 1,
            ..cfg
        };
        assert_eq!(one.k1_bin(1), (-5.0, 5.0));
    }

    #[test]
    fn presets_match_table() {
        assert_eq!(preset("d1").unwrap().as_array(), [-4.142, 4.956, -0.062, -0.488, -0.712]);
        assert_eq!(preset("d4").unwrap().as_array(), [2.071, -2.478, 0.031, -0.010, -0.014]);
        assert_eq!(preset("h36m").unwrap().k1, -0.207);
        assert!(preset("d9").is_none());
        assert!(preset_or_err("d9").is_err());
    }

    fn tiny_dataset(noise: NoiseConfig) -> Vec<DatasetEntry> {
        let cfg = DataConfig {
            sequences: 3,
            frames: 60,
            noise,
            ..DataConfig::default()
        };
        gen_dataset(&default_topology(), &cfg, 4).unwrap()
    }

    #[test]
    fn predicted_task_distorts_points_only() {
        let data = tiny_dataset(NoiseConfig::default());
        let e = &data[0];
        let k = e.motion.intrinsics;
        let zero = task_from_predicted(&e.detected, &e.motion.gt3d, &k, &DistortionParams::ZERO).unwrap();
        assert_eq!(zero.input, e.detected);
        let d2 = preset("d2").unwrap();
        let t = task_from_predicted(&e.detected, &e.motion.gt3d, &k, &d2).unwrap();
        assert_eq!(t.target, e.motion.gt3d);
        for j in 0..e.detected.joints {
            let p = e.detected.get(7, j);
            // scalar oracle, written out
            let (an, bn) = ((p.a - k.cx) / k.fx, (p.b - k.cy) / k.fy);
            let r2 = an * an + bn * bn;
            let dr = 1.0 + d2.k1 * r2 + d2.k2 * r2 * r2 + d2.k3 * r2 * r2 * r2;
            let dt = 2.0 * d2.p1 * an + 2.0 * d2.p2 * bn;
            let a = (an * (dr + dt) + d2.p1 * r2) * k.fx + k.cx;
            let b = (bn * (dr + dt) + d2.p2 * r2) * k.fy + k.cy;
            let q = t.input.get(7, j);
            assert!((q.a - a).abs() < 1e-9 && (q.b - b).abs() < 1e-9);
        }

        let center = PixelPoint::new(k.cx, k.cy);
        let fixed = Trajectory2D::new(1, 1, vec![center]).unwrap();
        let one = Pose3DSequence::new(vec![e.motion.gt3d.frames[0].clone()]).unwrap();
        let mismatched = task_from_predicted(&fixed, &one, &k, &d2);
        assert!(mismatched.is_err());
    }

    #[test]
    fn gt3d_path_equals_predicted_path_without_jitter() {
        let data = tiny_dataset(NoiseConfig::none());
        let e = &data[1];
        let d4 = preset("d4").unwrap();
        let a = task_from_gt3d(&e.motion.gt3d, &e.motion.intrinsics, &d4, &NoiseConfig::none(), 0).unwrap();
        let b = task_from_predicted(&e.projected, &e.motion.gt3d, &e.motion.intrinsics, &d4).unwrap();
        assert_eq!(a, b);
        let zero = task_from_gt3d(&e.motion.gt3d, &e.motion.intrinsics, &DistortionParams::ZERO, &NoiseConfig::none(), 0)
            .unwrap();
        assert_eq!(zero.input, e.projected);
    }

    #[test]
    fn meta_batch_properties() {
        let data = tiny_dataset(NoiseConfig::default());
        let sampler = TaskSampler::new(&data, TaskSource::Predicted, 9, 8).unwrap();
        let cfg = SamplerConfig::default();
        let a = make_meta_batch(&sampler, &cfg, SamplingMode::Stratified, 11).unwrap();
        let b = make_meta_batch(&sampler, &cfg, SamplingMode::Stratified, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for (i, t) in a.iter().enumerate() {
            let (lo, hi) = cfg.k1_bin(i + 1);
            assert!(lo <= t.params.k1 && t.params.k1 <= hi);
            assert_eq!(t.support.len(), 8);
            assert!(t.support.iter().all(|s| !t.query.contains(s)));
            let sb = t.support_batch(9, 0).unwrap();
            assert_eq!(sb.len(), 8);
        }
        let z = make_meta_batch(&sampler, &cfg, SamplingMode::Undistorted, 1).unwrap();
        assert!(z.iter().all(|t| t.params.is_zero()));
        assert!(TaskSampler::new(&[], TaskSource::Predicted, 9, 8).is_err());
        assert!(TaskSampler::new(&data, TaskSource::Predicted, 9, 40).is_err());
    }

    proptest! {
        #[test]
        fn every_stratified_batch_fills_each_bin(seed in any::<u64>(), n in 1usize..8) {
            let cfg = SamplerConfig { n_tasks: n, ..SamplerConfig::default() };
            let ks: Vec<f64> = (1..=n)
                .map(|i| sample_k1_stratified(&cfg, i, &mut rng_for(seed, &[i as u64])).unwrap())
                .collect();
            for (i, k) in ks.iter().enumerate() {
                let (lo, hi) = cfg.k1_bin(i + 1);
                prop_assert!(lo <= *k && *k <= hi);
            }
        }
    }
}
