//! Pose evaluation: MPJPE, Procrustes-aligned MPJPE and PCKh.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::skeleton::{distance, Pose3D, SkeletonTopology};

fn check_pair(pred: &[Pose3D], gt: &[Pose3D]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::invalid(format!(
            "{} predicted and {} ground-truth poses",
            pred.len(),
            gt.len()
        )));
    }
    if pred.iter().zip(gt).any(|(p, g)| p.num_joints() != g.num_joints()) {
        return Err(Error::invalid("joint count mismatch"));
    }
    Ok(())
}

/// Mean per-joint Euclidean distance over all frames and joints (mm).
pub fn mpjpe(pred: &[Pose3D], gt: &[Pose3D]) -> Result<f64> {
    check_pair(pred, gt)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for (a, b) in p.joints.iter().zip(&g.joints) {
            sum += distance(*a, *b);
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// `x ↦ s·R·x + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.scale * self.rotation * Vector3::from(p) + self.translation;
        [v.x, v.y, v.z]
    }

    pub fn apply_pose(&self, pose: &Pose3D) -> Pose3D {
        Pose3D {
            joints: pose.joints.iter().map(|&p| self.apply(p)).collect(),
            root_relative: false,
        }
    }
}

fn centroid(pts: &[[f64; 3]]) -> Vector3<f64> {
    pts.iter().map(|&p| Vector3::from(p)).sum::<Vector3<f64>>() / pts.len() as f64
}

/// Least-squares similarity transform taking `pred` onto `gt`.
pub fn procrustes_align(pred: &Pose3D, gt: &Pose3D) -> Result<(SimilarityTransform, Pose3D)> {
    if pred.num_joints() != gt.num_joints() || pred.num_joints() < 3 {
        return Err(Error::invalid("procrustes needs two poses with the same ≥3 joints"));
    }
    let (mp, mg) = (centroid(&pred.joints), centroid(&gt.joints));
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    let mut spread_g = Matrix3::zeros();
    for (p, g) in pred.joints.iter().zip(&gt.joints) {
        let x = Vector3::from(*p) - mp;
        let y = Vector3::from(*g) - mg;
        cov += y * x.transpose();
        spread_g += y * y.transpose();
        var_p += x.norm_squared();
    }
    let g_sv = spread_g.symmetric_eigenvalues();
    let mut g_sorted = [g_sv[0], g_sv[1], g_sv[2]];
    g_sorted.sort_by(|a, b| b.total_cmp(a));
    if g_sorted[1] <= 1e-12 * g_sorted[0].max(1e-300) {
        return Err(Error::DegenerateGeometry(
            "ground-truth joints are collinear or coincident".into(),
        ));
    }
    if var_p <= 0.0 {
        return Err(Error::DegenerateGeometry("predicted joints are coincident".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut sign = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        // flip the direction of the smallest singular value
        let smallest = (0..3)
            .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .expect("three singular values");
        sign[(smallest, smallest)] = -1.0;
    }
    let rotation = u * sign * v_t;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * sign[(i, i)]).sum();
    let scale = trace / var_p;
    if scale <= 0.0 {
        return Err(Error::DegenerateGeometry("non-positive optimal scale".into()));
    }
    let translation = mg - scale * rotation * mp;
    let t = SimilarityTransform {
        scale,
        rotation,
        translation,
    };
    let aligned = t.apply_pose(pred);
    Ok((t, aligned))
}

/// MPJPE after per-frame Procrustes alignment (mm).
pub fn p_mpjpe(pred: &[Pose3D], gt: &[Pose3D]) -> Result<f64> {
    check_pair(pred, gt)?;
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (_, aligned) = procrustes_align(p, g)?;
        total += mpjpe(std::slice::from_ref(&aligned), std::slice::from_ref(g))?;
    }
    Ok(total / pred.len() as f64)
}

/// Percentage of joints closer than `ratio` × the frame's ground-truth head
/// segment. A distance exactly at the threshold does not count.
pub fn pckh(pred: &[Pose3D], gt: &[Pose3D], topo: &SkeletonTopology, ratio: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    let (h0, h1) = topo.head_segment;
    let mut hit = 0usize;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        if g.num_joints() != topo.num_joints() {
            return Err(Error::invalid("pose does not match the topology"));
        }
        let head = distance(g.joints[h0], g.joints[h1]);
        if head <= 0.0 {
            return Err(Error::DegenerateGeometry("zero-length head segment".into()));
        }
        let threshold = ratio * head;
        for (a, b) in p.joints.iter().zip(&g.joints) {
            hit += usize::from(distance(*a, *b) < threshold);
            n += 1;
        }
    }
    Ok(100.0 * hit as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    /// Distortion preset (or `none`).
    pub distortion: String,
    /// Free-form condition, e.g. `pretrained`, `scenario1`.
    pub scenario: String,
    pub mpjpe: f64,
    pub p_mpjpe: f64,
    pub pckh: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "distortion,scenario,metric,value";

    /// Long format: one line per (distortion, scenario, metric).
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            for (name, v) in [("mpjpe_mm", r.mpjpe), ("p_mpjpe_mm", r.p_mpjpe), ("pckh_pct", r.pckh)] {
                let _ = writeln!(s, "{},{},{},{:.6}", r.distortion, r.scenario, name, v);
            }
        }
        s
    }

    pub fn find(&self, distortion: &str, scenario: &str) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.distortion == distortion && r.scenario == scenario)
    }
}

/// All three metrics at once.
pub fn evaluate(pred: &[Pose3D], gt: &[Pose3D], topo: &SkeletonTopology) -> Result<(f64, f64, f64)> {
    Ok((mpjpe(pred, gt)?, p_mpjpe(pred, gt)?, pckh(pred, gt, topo, 0.5)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::skeleton::default_topology;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_pose(rng: &mut crate::rng::Rng, j: usize) -> Pose3D {
        Pose3D::new((0..j).map(|_| [0, 1, 2].map(|_| rng.random_range(-500.0..500.0))).collect())
    }

    #[test]
    fn mpjpe_examples() {
        let mut rng = rng_for(1, &[]);
        let g = random_pose(&mut rng, 17);
        assert_eq!(mpjpe(&[g.clone()], &[g.clone()]).unwrap(), 0.0);
        let shifted = Pose3D::new(g.joints.iter().map(|p| [p[0], p[1], p[2] + 10.0]).collect());
        assert!((mpjpe(&[shifted], &[g.clone()]).unwrap() - 10.0).abs() < 1e-12);
        assert!(mpjpe(&[], &[]).is_err());
    }

    #[test]
    fn exact_recovery_of_similarity() {
        let mut rng = rng_for(2, &[]);
        let pred = random_pose(&mut rng, 17);
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let t = SimilarityTransform {
            scale: 1.7,
            rotation: *r.matrix(),
            translation: Vector3::new(10.0, -40.0, 300.0),
        };
        let gt = t.apply_pose(&pred);
        let (found, aligned) = procrustes_align(&pred, &gt).unwrap();
        assert!(mpjpe(&[aligned], &[gt]).unwrap() < 1e-9);
        assert!((found.scale - 1.7).abs() < 1e-12);
        assert!((found.rotation - t.rotation).norm() < 1e-12);
        assert!((found.translation - t.translation).norm() < 1e-9);
        assert!((found.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_alignment() {
        let mut rng = rng_for(3, &[]);
        let g = random_pose(&mut rng, 17);
        let (t, _) = procrustes_align(&g, &g).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!((t.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(t.translation.norm() < 1e-9);
    }

    #[test]
    fn reflection_is_not_used() {
        let mut rng = rng_for(4, &[]);
        let p = random_pose(&mut rng, 17);
        let mirrored = Pose3D::new(p.joints.iter().map(|q| [-q[0], q[1], q[2]]).collect());
        let (t, _) = procrustes_align(&p, &mirrored).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
        assert!((t.rotation.transpose() * t.rotation - Matrix3::identity()).norm() < 1e-9);
    }

    #[test]
    fn degenerate_gt_is_rejected() {
        let line = Pose3D::new((0..5).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect());
        let mut rng = rng_for(5, &[]);
        let p = random_pose(&mut rng, 5);
        assert!(matches!(procrustes_align(&p, &line), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn alignment_beats_random_similarities() {
        let mut rng = rng_for(6, &[]);
        let pred = random_pose(&mut rng, 17);
        let gt = random_pose(&mut rng, 17);
        let (_, aligned) = procrustes_align(&pred, &gt).unwrap();
        let sq = |a: &Pose3D| -> f64 {
            a.joints
                .iter()
                .zip(&gt.joints)
                .map(|(p, g)| distance(*p, *g).powi(2))
                .sum()
        };
        let best = sq(&aligned);
        for _ in 0..500 {
            let r = Rotation3::from_euler_angles(
                rng.random_range(-3.2..3.2),
                rng.random_range(-1.6..1.6),
                rng.random_range(-3.2..3.2),
            );
            let t = SimilarityTransform {
                scale: rng.random_range(0.2..3.0),
                rotation: *r.matrix(),
                translation: Vector3::new(
                    rng.random_range(-200.0..200.0),
                    rng.random_range(-200.0..200.0),
                    rng.random_range(-200.0..200.0),
                ),
            };
            assert!(best <= sq(&t.apply_pose(&pred)) + 1e-9);
        }
    }

    #[test]
    fn p_mpjpe_absorbs_rotation() {
        let mut rng = rng_for(7, &[]);
        let g = random_pose(&mut rng, 17);
        let r = Rotation3::from_euler_angles(0.4, 0.2, -0.9);
        let t = SimilarityTransform {
            scale: 1.0,
            rotation: *r.matrix(),
            translation: Vector3::zeros(),
        };
        let rotated = t.apply_pose(&g);
        assert!(p_mpjpe(&[rotated.clone()], &[g.clone()]).unwrap() < 1e-9);
        assert!(mpjpe(&[rotated], &[g.clone()]).unwrap() > 1.0);
        assert!(p_mpjpe(&[g.clone()], &[g]).unwrap() < 1e-9);
    }

    fn head_fixture() -> (SkeletonTopology, Pose3D) {
        let topo = default_topology();
        let mut rng = rng_for(8, &[]);
        let mut g = random_pose(&mut rng, 17);
        let (h0, h1) = topo.head_segment;
        g.joints[h1] = [g.joints[h0][0], g.joints[h0][1] + 100.0, g.joints[h0][2]];
        (topo, g)
    }

    #[test]
    fn pckh_fixtures() {
        let (topo, g) = head_fixture();
        assert_eq!(pckh(&[g.clone()], &[g.clone()], &topo, 0.5).unwrap(), 100.0);
        let far = Pose3D::new(g.joints.iter().map(|p| [p[0] + 200.0, p[1], p[2]]).collect());
        assert_eq!(pckh(&[far], &[g.clone()], &topo, 0.5).unwrap(), 0.0);

        // two frames: first all within (49 mm), second all outside (51 mm)
        let near = Pose3D::new(g.joints.iter().map(|p| [p[0], p[1], p[2] + 49.0]).collect());
        let out = Pose3D::new(g.joints.iter().map(|p| [p[0], p[1], p[2] + 51.0]).collect());
        assert_eq!(pckh(&[near, out], &[g.clone(), g.clone()], &topo, 0.5).unwrap(), 50.0);

        // exactly on the threshold is a miss
        let edge = Pose3D::new(g.joints.iter().map(|p| [p[0] + 50.0, p[1], p[2]]).collect());
        assert_eq!(pckh(&[edge], &[g.clone()], &topo, 0.5).unwrap(), 0.0);

        let mut flat = g.clone();
        flat.joints[topo.head_segment.1] = flat.joints[topo.head_segment.0];
        assert!(matches!(
            pckh(&[g], &[flat], &topo, 0.5),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn report_csv_layout() {
        let r = MetricReport {
            rows: vec![MetricRow {
                distortion: "d1".into(),
                scenario: "base".into(),
                mpjpe: 1.0,
                p_mpjpe: 0.5,
                pckh: 90.0,
            }],
        };
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.contains("d1,base,p_mpjpe_mm,0.500000"));
    }

    proptest! {
        #[test]
        fn p_mpjpe_never_exceeds_mpjpe(seed in any::<u64>()) {
            let mut rng = rng_for(seed, &[]);
            let pred: Vec<Pose3D> = (0..3).map(|_| random_pose(&mut rng, 17)).collect();
            let gt: Vec<Pose3D> = (0..3).map(|_| random_pose(&mut rng, 17)).collect();
            prop_assert!(p_mpjpe(&pred, &gt).unwrap() <= mpjpe(&pred, &gt).unwrap() + 1e-9);
        }

        #[test]
        fn mpjpe_invariant_under_joint_rigid_motion(seed in any::<u64>(), a in -3.0f64..3.0, tx in -500.0f64..500.0) {
            let mut rng = rng_for(seed, &[]);
            let pred = random_pose(&mut rng, 17);
            let gt = random_pose(&mut rng, 17);
            let t = SimilarityTransform {
                scale: 1.0,
                rotation: *Rotation3::from_euler_angles(a, 0.5 * a, -a).matrix(),
                translation: Vector3::new(tx, -tx, 2.0 * tx),
            };
            let before = mpjpe(&[pred.clone()], &[gt.clone()]).unwrap();
            let after = mpjpe(&[t.apply_pose(&pred)], &[t.apply_pose(&gt)]).unwrap();
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn residual_independent_of_pred_pose(seed in any::<u64>(), a in -3.0f64..3.0) {
            let mut rng = rng_for(seed, &[]);
            let pred = random_pose(&mut rng, 17);
            let gt = random_pose(&mut rng, 17);
            let t = SimilarityTransform {
                scale: 0.7,
                rotation: *Rotation3::from_euler_angles(a, -a, 0.3).matrix(),
                translation: Vector3::new(5.0, 6.0, 7.0),
            };
            let r1 = p_mpjpe(&[pred.clone()], &[gt.clone()]).unwrap();
            let r2 = p_mpjpe(&[t.apply_pose(&pred)], &[gt]).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-9);
        }
    }
}
