//! Skeleton topology, 3D poses and bone lengths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint tree with left/right bone pairing.
///
/// Bones are indexed by their child joint: the non-root joints in ascending
/// joint order give bones `0..J-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub joint_names: Vec<String>,
    pub parent: Vec<Option<usize>>,
    /// `(left bone, right bone)`.
    pub mirror_pairs: Vec<(usize, usize)>,
    /// `(neck joint, head-top joint)`, used as the PCKh reference length.
    pub head_segment: (usize, usize),
}

/// Joint names of [`default_topology`], in index order.
pub const H36M_JOINTS: [&str; 17] = [
    "pelvis",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "spine",
    "thorax",
    "neck",
    "head_top",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
];

/// 17-joint Human3.6M-style skeleton rooted at the pelvis.
pub fn default_topology() -> SkeletonTopology {
    const PARENTS: [i64; 17] = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15];
    let parent = PARENTS
        .iter()
        .map(|&p| (p >= 0).then_some(p as usize))
        .collect();
    // Pairs by child joint: hips, knees, ankles, shoulders, elbows, wrists.
    let joint_pairs = [(4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16)];
    let mirror_pairs = joint_pairs.iter().map(|&(l, r)| (l - 1, r - 1)).collect();
    let topo = SkeletonTopology {
        joint_names: H36M_JOINTS.iter().map(|s| s.to_string()).collect(),
        parent,
        mirror_pairs,
        head_segment: (9, 10),
    };
    debug_assert!(topo.validate().is_ok());
    topo
}

impl SkeletonTopology {
    pub fn num_joints(&self) -> usize {
        self.parent.len()
    }

    pub fn num_bones(&self) -> usize {
        self.parent.len().saturating_sub(1)
    }

    pub fn root(&self) -> usize {
        self.parent.iter().position(Option::is_none).unwrap_or(0)
    }

    /// `(parent joint, child joint)` for every bone in bone order.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(child, p)| p.map(|p| (p, child)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.parent.len();
        if j < 2 {
            return Err(Error::invalid("skeleton needs at least two joints"));
        }
        if self.joint_names.len() != j {
            return Err(Error::invalid(format!(
                "{} joint names for {j} joints",
                self.joint_names.len()
            )));
        }
        let roots = self.parent.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(Error::invalid(format!("expected one root, found {roots}")));
        }
        for (child, p) in self.parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= j || p == child {
                    return Err(Error::invalid(format!("joint {child} has invalid parent {p}")));
                }
            }
        }
        // Every joint must reach the root within J steps.
        for start in 0..j {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = self.parent[cur] {
                cur = p;
                steps += 1;
                if steps > j {
                    return Err(Error::invalid(format!("cycle through joint {start}")));
                }
            }
        }
        let bones = self.num_bones();
        let mut seen = vec![false; bones];
        for &(l, r) in &self.mirror_pairs {
            if l >= bones || r >= bones || l == r {
                return Err(Error::invalid(format!("invalid mirror pair ({l}, {r})")));
            }
            for b in [l, r] {
                if std::mem::replace(&mut seen[b], true) {
                    return Err(Error::invalid(format!("bone {b} appears in two mirror pairs")));
                }
            }
        }
        let (neck, head) = self.head_segment;
        if neck >= j || head >= j || neck == head {
            return Err(Error::invalid(format!(
                "invalid head segment ({neck}, {head})"
            )));
        }
        Ok(())
    }

    /// The mirror image of `bone`, if it belongs to a pair.
    pub fn mirror_of(&self, bone: usize) -> Option<usize> {
        self.mirror_pairs.iter().find_map(|&(l, r)| {
            if l == bone {
                Some(r)
            } else if r == bone {
                Some(l)
            } else {
                None
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    /// Joint positions in millimeters.
    pub joints: Vec<[f64; 3]>,
    pub root_relative: bool,
}

impl Pose3D {
    pub fn new(joints: Vec<[f64; 3]>) -> Self {
        Pose3D {
            joints,
            root_relative: false,
        }
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }

    /// Translates the pose so joint `root` sits at the origin.
    pub fn to_root_relative(&self, root: usize) -> Pose3D {
        let r = self.joints[root];
        Pose3D {
            joints: self
                .joints
                .iter()
                .map(|p| [p[0] - r[0], p[1] - r[1], p[2] - r[2]])
                .collect(),
            root_relative: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3DSequence {
    pub frames: Vec<Pose3D>,
}

impl Pose3DSequence {
    pub fn new(frames: Vec<Pose3D>) -> Result<Self> {
        let seq = Pose3DSequence { frames };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_joints(&self) -> usize {
        self.frames.first().map_or(0, Pose3D::num_joints)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Err(Error::invalid("pose sequence needs at least one frame"));
        };
        let j = first.num_joints();
        for (t, f) in self.frames.iter().enumerate() {
            if f.num_joints() != j {
                return Err(Error::invalid(format!(
                    "frame {t} has {} joints, expected {j}",
                    f.num_joints()
                )));
            }
            if !f.is_finite() {
                return Err(Error::invalid(format!("frame {t} has non-finite joints")));
            }
        }
        Ok(())
    }
}

/// Per-frame bone lengths, `frames × bones`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneLengths {
    pub frames: usize,
    pub bones: usize,
    pub lengths: Vec<f64>,
}

impl BoneLengths {
    pub fn get(&self, t: usize, bone: usize) -> f64 {
        self.lengths[t * self.bones + bone]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.lengths[t * self.bones..(t + 1) * self.bones]
    }
}

pub(crate) fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

pub fn bone_lengths(seq: &Pose3DSequence, topo: &SkeletonTopology) -> Result<BoneLengths> {
    if seq.frames.iter().any(|f| f.num_joints() != topo.num_joints()) {
        return Err(Error::invalid(format!(
            "pose has {} joints but topology has {}",
            seq.num_joints(),
            topo.num_joints()
        )));
    }
    let bones = topo.bones();
    let lengths = seq
        .frames
        .iter()
        .flat_map(|f| bones.iter().map(|&(p, c)| distance(f.joints[c], f.joints[p])))
        .collect();
    Ok(BoneLengths {
        frames: seq.len(),
        bones: bones.len(),
        lengths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain() -> SkeletonTopology {
        SkeletonTopology {
            joint_names: vec!["root".into(), "tip".into()],
            parent: vec![None, Some(0)],
            mirror_pairs: vec![],
            head_segment: (0, 1),
        }
    }

    #[test]
    fn default_topology_shape() {
        let t = default_topology();
        assert_eq!(t.num_joints(), 17);
        assert_eq!(t.num_bones(), 16);
        assert_eq!(t.bones().len(), 16);
        assert_eq!(t.mirror_pairs.len(), 6);
        assert_eq!(t.root(), 0);
        t.validate().unwrap();
        // involution
        for b in 0..t.num_bones() {
            if let Some(m) = t.mirror_of(b) {
                assert_eq!(t.mirror_of(m), Some(b));
            }
        }
        let (neck, head) = t.head_segment;
        assert_eq!(t.joint_names[neck], "neck");
        assert_eq!(t.joint_names[head], "head_top");
    }

    #[test]
    fn validation_rejects_bad_trees() {
        let mut t = default_topology();
        t.parent[0] = Some(3); // 0 -> 3 -> 2 -> 1 -> 0
        assert!(t.validate().is_err());

        let mut t = default_topology();
        t.parent[7] = None;
        assert!(t.validate().is_err());

        let mut t = default_topology();
        t.mirror_pairs.push((0, 3));
        assert!(t.validate().is_err());

        let mut t = default_topology();
        t.mirror_pairs.push((6, 6));
        assert!(t.validate().is_err());
    }

    #[test]
    fn two_joint_chain_length() {
        let seq = Pose3DSequence::new(vec![Pose3D::new(vec![[0.0; 3], [0.0, 0.0, 10.0]])]).unwrap();
        let bl = bone_lengths(&seq, &chain()).unwrap();
        assert_eq!(bl.lengths, vec![10.0]);
    }

    #[test]
    fn coincident_joints_have_zero_length() {
        let t = default_topology();
        let seq = Pose3DSequence::new(vec![Pose3D::new(vec![[5.0, -2.0, 3.0]; 17]); 3]).unwrap();
        let bl = bone_lengths(&seq, &t).unwrap();
        assert!(bl.lengths.iter().all(|&l| l == 0.0));
        assert_eq!((bl.frames, bl.bones), (3, 16));
    }

    #[test]
    fn mismatched_topology_is_rejected() {
        let seq = Pose3DSequence::new(vec![Pose3D::new(vec![[0.0; 3]; 5])]).unwrap();
        assert!(bone_lengths(&seq, &default_topology()).is_err());
    }

    fn random_seq(vals: &[f64], frames: usize) -> Pose3DSequence {
        Pose3DSequence::new(
            (0..frames)
                .map(|t| {
                    Pose3D::new(
                        (0..17)
                            .map(|j| {
                                let i = (t * 17 + j) * 3;
                                [vals[i % vals.len()], vals[(i + 1) % vals.len()], vals[(i + 2) % vals.len()]]
                            })
                            .collect(),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn matches_brute_force(vals in proptest::collection::vec(-1000.0..1000.0f64, 51 * 4)) {
            let topo = default_topology();
            let seq = random_seq(&vals, 4);
            let bl = bone_lengths(&seq, &topo).unwrap();
            // index-free recomputation: walk every joint and look up its parent
            let mut expected = Vec::new();
            for f in &seq.frames {
                for child in 0..17 {
                    if let Some(p) = topo.parent[child] {
                        let d: f64 = (0..3).map(|k| (f.joints[child][k] - f.joints[p][k]).powi(2)).sum();
                        expected.push(d.sqrt());
                    }
                }
            }
            prop_assert_eq!(bl.lengths, expected);
        }

        #[test]
        fn invariant_under_rigid_motion(vals in proptest::collection::vec(-1000.0..1000.0f64, 51 * 2),
                                        yaw in 0.0..6.3f64, pitch in 0.0..6.3f64,
                                        tx in -1e3..1e3f64, tz in -1e3..1e3f64) {
            let topo = default_topology();
            let seq = random_seq(&vals, 2);
            let (sy, cy) = yaw.sin_cos();
            let (sp, cp) = pitch.sin_cos();
            let moved = Pose3DSequence::new(seq.frames.iter().map(|f| Pose3D::new(f.joints.iter().map(|&[x, y, z]| {
                let (x1, z1) = (cy * x + sy * z, -sy * x + cy * z);
                let (y2, z2) = (cp * y - sp * z1, sp * y + cp * z1);
                [x1 + tx, y2, z2 + tz]
            }).collect())).collect()).unwrap();
            let a = bone_lengths(&seq, &topo).unwrap();
            let b = bone_lengths(&moved, &topo).unwrap();
            for (x, y) in a.lengths.iter().zip(&b.lengths) {
                prop_assert!((x - y).abs() <= 1e-9 * x.max(1.0));
            }
        }
    }
}
