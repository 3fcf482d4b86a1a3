//! Test-time adaptation.
//!
//! Scenario 1 fine-tunes on a small labeled set from the target camera.
//! Scenario 2 (inference-stage optimization) sees only unlabeled keypoints
//! and minimizes bone-length symmetry and consistency of its own predictions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifter::{self, ClipWindows, IsoWeights, LifterParams, Loss, WindowBatch};
use crate::optim::{Optimizer, OptimizerKind};
use crate::skeleton::{bone_lengths, Pose3DSequence, SkeletonTopology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub lr: f64,
    pub epochs: usize,
    /// 1: supervised fine-tuning; 2: label-free bone-length optimization.
    pub scenario: u8,
    pub optimizer: OptimizerKind,
    pub weights: IsoWeights,
    /// Share of target-camera windows that are labeled (scenario 1).
    pub labeled_fraction: f64,
    /// Share of target-camera frames available unlabeled (scenario 2).
    pub unlabeled_fraction: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            lr: 0.6,
            epochs: 100,
            scenario: 1,
            optimizer: OptimizerKind::Sgd,
            weights: IsoWeights::default(),
            labeled_fraction: 0.05,
            unlabeled_fraction: 0.1,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |f: f64| f > 0.0 && f <= 1.0;
        if self.lr > 0.0
            && matches!(self.scenario, 1 | 2)
            && self.weights.symmetry >= 0.0
            && self.weights.consistency >= 0.0
            && frac(self.labeled_fraction)
            && frac(self.unlabeled_fraction)
        {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid adaptation config {self:?}")))
        }
    }
}

/// Per-epoch values; index 0 is before any update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptCurve {
    /// Monitor value (typically held-out MPJPE, mm).
    pub eval: Vec<f64>,
    /// Adaptation objective in its optimization units.
    pub objective: Vec<f64>,
    /// First epoch whose update produced a non-finite value, if any.
    pub diverged_at: Option<usize>,
}

impl AdaptCurve {
    pub const CSV_HEADER: &'static str = "epoch,eval,objective";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for (i, (e, o)) in self.eval.iter().zip(&self.objective).enumerate() {
            let _ = writeln!(s, "{i},{e:.9e},{o:.9e}");
        }
        s
    }

    pub fn first(&self) -> f64 {
        self.eval[0]
    }

    pub fn last(&self) -> f64 {
        *self.eval.last().expect("curve has epoch 0")
    }
}

fn mirror_and_bones(topo: &SkeletonTopology) -> Result<()> {
    topo.validate()?;
    if topo.mirror_pairs.is_empty() {
        return Err(Error::invalid("topology has no mirror pairs"));
    }
    Ok(())
}

/// `Σ_t Σ_(l,r) |len_l - len_r|` over mirror bone pairs.
pub fn symmetry_loss(pred: &Pose3DSequence, topo: &SkeletonTopology) -> Result<f64> {
    mirror_and_bones(topo)?;
    let bl = bone_lengths(pred, topo)?;
    Ok((0..bl.frames)
        .map(|t| {
            let f = bl.frame(t);
            topo.mirror_pairs.iter().map(|&(l, r)| (f[l] - f[r]).abs()).sum::<f64>()
        })
        .sum())
}

/// `Σ_t Σ_b |len_b(t+1) - len_b(t)|`.
pub fn consistency_loss(pred: &Pose3DSequence, topo: &SkeletonTopology) -> Result<f64> {
    topo.validate()?;
    if pred.len() < 2 {
        return Err(Error::invalid(format!(
            "consistency needs at least two frames, got {}",
            pred.len()
        )));
    }
    let bl = bone_lengths(pred, topo)?;
    Ok((0..bl.frames - 1)
        .map(|t| {
            bl.frame(t + 1)
                .iter()
                .zip(bl.frame(t))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .sum())
}

/// Weighted sum of the two bone-length losses.
pub fn iso_loss(pred: &Pose3DSequence, topo: &SkeletonTopology, w: IsoWeights) -> Result<f64> {
    Ok(w.symmetry * symmetry_loss(pred, topo)? + w.consistency * consistency_loss(pred, topo)?)
}

/// Full-batch gradient descent on `loss` with a label-free divergence guard:
/// on a non-finite step the parameters with the lowest objective so far are
/// returned and the rest of the curve repeats their monitor value.
fn descend(
    params: &LifterParams,
    loss: Loss<'_>,
    cfg: &AdaptConfig,
    monitor: &mut dyn FnMut(&LifterParams) -> Result<f64>,
) -> Result<(LifterParams, AdaptCurve)> {
    cfg.validate()?;
    let mut current = params.clone();
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    let mut curve = AdaptCurve::default();
    let mut g = lifter::grad(&current, loss)?;
    curve.eval.push(monitor(&current)?);
    curve.objective.push(g.loss);
    let mut best = (g.loss, current.clone(), curve.eval[0]);

    for epoch in 1..=cfg.epochs {
        let mut next = current.clone();
        opt.step(&mut next.values, &g.grad, cfg.lr);
        let ng = if next.is_finite() {
            lifter::grad(&next, loss).ok()
        } else {
            None
        };
        match ng {
            Some(ng) if ng.loss.is_finite() => {
                current = next;
                g = ng;
                curve.eval.push(monitor(&current)?);
                curve.objective.push(g.loss);
                if g.loss < best.0 {
                    best = (g.loss, current.clone(), *curve.eval.last().expect("pushed"));
                }
            }
            _ => {
                curve.diverged_at = Some(epoch);
                while curve.eval.len() <= cfg.epochs {
                    curve.eval.push(best.2);
                    curve.objective.push(best.0);
                }
                return Ok((best.1, curve));
            }
        }
    }
    Ok((current, curve))
}

/// Supervised fine-tuning on a small labeled set.
pub fn finetune_scenario1(
    params: &LifterParams,
    labeled: &WindowBatch,
    cfg: &AdaptConfig,
    mut monitor: impl FnMut(&LifterParams) -> Result<f64>,
) -> Result<(LifterParams, AdaptCurve)> {
    if labeled.is_empty() {
        return Err(Error::invalid("scenario 1 needs at least one labeled window"));
    }
    descend(params, Loss::Mpjpe(labeled), cfg, &mut monitor)
}

/// Label-free adaptation on consecutive windows of target-camera clips. The
/// objective is the weighted symmetry + consistency loss averaged over
/// predicted frames and bones, in meters. `monitor` only observes the parameters.
pub fn iso_scenario2(
    params: &LifterParams,
    windows: &ClipWindows,
    topology: &SkeletonTopology,
    cfg: &AdaptConfig,
    mut monitor: impl FnMut(&LifterParams) -> Result<f64>,
) -> Result<(LifterParams, AdaptCurve)> {
    mirror_and_bones(topology)?;
    if windows.clips.iter().any(|c| c.1 < 2) {
        return Err(Error::invalid("every clip needs at least two windows"));
    }
    let loss = Loss::Iso {
        windows,
        topology,
        weights: cfg.weights,
    };
    descend(params, loss, cfg, &mut monitor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::datagen::{gen_dataset, DataConfig};
    use crate::lifter::{init_params, predict, LifterConfig, LOSS_SCALE};
    use crate::rng::rng_for;
    use crate::skeleton::{default_topology, Pose3D};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_seq(seed: u64, t: usize) -> Pose3DSequence {
        let mut rng = rng_for(seed, &[]);
        Pose3DSequence::new(
            (0..t)
                .map(|_| Pose3D::new((0..17).map(|_| [0, 1, 2].map(|_| rng.random_range(-400.0..400.0))).collect()))
                .collect(),
        )
        .unwrap()
    }

    fn oracle(seq: &Pose3DSequence, topo: &SkeletonTopology) -> (f64, f64) {
        let bones = topo.bones();
        let len = |t: usize, b: usize| {
            let (p, c) = bones[b];
            let (x, y) = (seq.frames[t].joints[p], seq.frames[t].joints[c]);
            ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt()
        };
        let mut sym = 0.0;
        for t in 0..seq.len() {
            for &(l, r) in &topo.mirror_pairs {
                sym += (len(t, l) - len(t, r)).abs();
            }
        }
        let mut con = 0.0;
        for t in 0..seq.len() - 1 {
            for b in 0..bones.len() {
                con += (len(t + 1, b) - len(t, b)).abs();
            }
        }
        (sym, con)
    }

    /// A left-right symmetric pose: left joints are mirror images of right ones.
    fn mirrored_pose() -> Pose3D {
        let mut j = vec![[0.0; 3]; 17];
        let right = [(1, [-120.0, 0.0, 0.0]), (2, [-120.0, -400.0, 20.0]), (3, [-120.0, -800.0, 20.0])];
        for (i, p) in right {
            j[i] = p;
            j[i + 3] = [-p[0], p[1], p[2]];
        }
        j[7] = [0.0, 250.0, 0.0];
        j[8] = [0.0, 500.0, 0.0];
        j[9] = [0.0, 580.0, 0.0];
        j[10] = [0.0, 700.0, 0.0];
        for (k, p) in [(14, [-150.0, 480.0, 0.0]), (15, [-400.0, 480.0, 0.0]), (16, [-650.0, 480.0, 10.0])] {
            j[k] = p;
            j[k - 3] = [-p[0], p[1], p[2]];
        }
        Pose3D::new(j)
    }

    #[test]
    fn fixtures() {
        let topo = default_topology();
        let still = Pose3DSequence::new(vec![mirrored_pose(); 5]).unwrap();
        assert_eq!(symmetry_loss(&still, &topo).unwrap(), 0.0);
        assert_eq!(consistency_loss(&still, &topo).unwrap(), 0.0);

        // left shin 10 mm longer than the right one in every frame
        let mut longer = mirrored_pose();
        longer.joints[6][1] -= 10.0;
        let seq = Pose3DSequence::new(vec![longer; 4]).unwrap();
        assert!((symmetry_loss(&seq, &topo).unwrap() - 40.0).abs() < 1e-9);

        // right shin grows 1 mm per frame
        let frames: Vec<Pose3D> = (0..6)
            .map(|t| {
                let mut p = mirrored_pose();
                p.joints[3][1] -= t as f64;
                p
            })
            .collect();
        let seq = Pose3DSequence::new(frames).unwrap();
        assert!((consistency_loss(&seq, &topo).unwrap() - 5.0).abs() < 1e-9);

        let single = Pose3DSequence::new(vec![mirrored_pose()]).unwrap();
        assert!(consistency_loss(&single, &topo).is_err());
    }

    #[test]
    fn losses_match_double_loop() {
        let topo = default_topology();
        for seed in 0..50 {
            let seq = random_seq(seed, 2 + seed as usize % 7);
            let (s, c) = oracle(&seq, &topo);
            assert!((symmetry_loss(&seq, &topo).unwrap() - s).abs() <= 1e-12 * s.max(1.0));
            assert!((consistency_loss(&seq, &topo).unwrap() - c).abs() <= 1e-12 * c.max(1.0));
            let w = IsoWeights::default();
            assert_eq!(
                iso_loss(&seq, &topo, w).unwrap(),
                symmetry_loss(&seq, &topo).unwrap() + consistency_loss(&seq, &topo).unwrap()
            );
        }
    }

    proptest! {
        #[test]
        fn rigid_motion_invariance(seed in any::<u64>(), a in -3.0f64..3.0, t in -900.0f64..900.0) {
            let topo = default_topology();
            let seq = random_seq(seed, 4);
            let (c, s) = (a.cos(), a.sin());
            let moved = Pose3DSequence::new(seq.frames.iter().map(|f| Pose3D::new(
                f.joints.iter().map(|p| [c * p[0] - s * p[2] + t, p[1] - t, s * p[0] + c * p[2]]).collect()
            )).collect()).unwrap();
            let d_sym = symmetry_loss(&seq, &topo).unwrap() - symmetry_loss(&moved, &topo).unwrap();
            let d_con = consistency_loss(&seq, &topo).unwrap() - consistency_loss(&moved, &topo).unwrap();
            prop_assert!(d_sym.abs() < 1e-8 && d_con.abs() < 1e-8);
        }
    }

    fn setup() -> (LifterParams, Vec<crate::datagen::DatasetEntry>) {
        let data = gen_dataset(
            &default_topology(),
            &DataConfig {
                sequences: 2,
                frames: 40,
                ..DataConfig::default()
            },
            1,
        )
        .unwrap();
        let p = init_params(&LifterConfig {
            frames: 3,
            channels: 16,
            ..LifterConfig::default()
        })
        .unwrap();
        (p, data)
    }

    #[test]
    fn tape_objective_is_normalized_iso_loss() {
        let (p, data) = setup();
        let topo = default_topology();
        let k = Intrinsics::synthetic_default();
        let clip = [data[0].detected.clone()];
        let windows = ClipWindows::from_trajectories(&clip, &k, 3).unwrap();
        let pred = Pose3DSequence::new(predict(&p, &windows.inputs).unwrap()).unwrap();
        let w = IsoWeights {
            symmetry: 0.7,
            consistency: 1.3,
        };
        let expected = iso_loss(&pred, &topo, w).unwrap() * LOSS_SCALE / (pred.len() * topo.num_bones()) as f64;
        let got = lifter::grad(
            &p,
            Loss::Iso {
                windows: &windows,
                topology: &topo,
                weights: w,
            },
        )
        .unwrap()
        .loss;
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn zero_epochs_is_identity_and_curves_have_epoch_zero() {
        let (p, data) = setup();
        let topo = default_topology();
        let k = Intrinsics::synthetic_default();
        let mut labeled = WindowBatch::new(3, 17, 0);
        for s in 0..10 {
            labeled.push(&data[0].detected, s, &k, &data[0].motion.gt3d.frames[s + 1]).unwrap();
        }
        let cfg = AdaptConfig {
            epochs: 0,
            ..AdaptConfig::default()
        };
        let (q, curve) = finetune_scenario1(&p, &labeled, &cfg, |_| Ok(1.0)).unwrap();
        assert_eq!(q, p);
        assert_eq!(curve.eval.len(), 1);

        let windows = ClipWindows::from_trajectories(&[data[1].detected.clone()], &k, 3).unwrap();
        let (q, _) = iso_scenario2(&p, &windows, &topo, &cfg, |_| Ok(1.0)).unwrap();
        assert_eq!(q, p);

        let cfg = AdaptConfig {
            epochs: 5,
            lr: 0.05,
            ..AdaptConfig::default()
        };
        let (_, curve) = finetune_scenario1(&p, &labeled, &cfg, |_| Ok(0.0)).unwrap();
        assert_eq!(curve.eval.len(), 6);
        assert!(curve.objective[5] < curve.objective[0]);
        let (_, c1) = iso_scenario2(&p, &windows, &topo, &cfg, |_| Ok(0.0)).unwrap();
        let (_, c2) = iso_scenario2(&p, &windows, &topo, &cfg, |_| Ok(0.0)).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(c1.objective.len(), 6);
    }

    #[test]
    fn divergence_returns_best_parameters() {
        let (p, data) = setup();
        let k = Intrinsics::synthetic_default();
        let mut labeled = WindowBatch::new(3, 17, 0);
        for s in 0..4 {
            labeled.push(&data[0].detected, s, &k, &data[0].motion.gt3d.frames[s + 1]).unwrap();
        }
        let cfg = AdaptConfig {
            epochs: 50,
            lr: 1e200,
            ..AdaptConfig::default()
        };
        let (q, curve) = finetune_scenario1(&p, &labeled, &cfg, |_| Ok(3.0)).unwrap();
        assert!(q.is_finite());
        assert!(curve.diverged_at.is_some());
        assert_eq!(curve.eval.len(), 51);
    }
}
