//! 2D→3D lifting network and its gradients.
//!
//! The network is a stack of dilated temporal convolutions evaluated only at
//! the center frame of a window. For a kernel of width 3 with dilations
//! `1, 3, 9` that evaluation is equivalent to non-overlapping (stride 3)
//! convolutions, so every layer is a dense matrix product over groups of
//! three consecutive rows:
//!
//! ```text
//! window (T frames × J joints × 2)
//!   └─ expand: conv k=3 d=1, ReLU                     T/3 positions
//!   └─ block i: conv k=3 d=3^i, ReLU, 1×1 conv, ReLU, + center residual
//!   └─ shrink: 1×1 conv → (J-1)×3 root-relative joints
//! ```
//!
//! Inputs are normalized image coordinates; outputs are millimeters.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, BoneLossSpec, Differentiable, NodeId, PoseErrorSpec, Real, Tape, Tensor};
use crate::camera::{self, Intrinsics};
use crate::checkpoint::Checkpoint;
use crate::datagen::Trajectory2D;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::skeleton::{distance, Pose3D, SkeletonTopology};

/// Network outputs are meters; predictions are reported in millimeters.
pub const OUTPUT_SCALE_MM: f64 = 1000.0;
/// Training objectives are in meters so learning rates do not depend on units.
pub const LOSS_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifterConfig {
    /// Receptive field: 3, 9 or 27 frames.
    pub frames: usize,
    pub channels: usize,
    pub joints: usize,
    /// Joint pinned at the origin (not predicted).
    pub root: usize,
    pub seed: u64,
    pub second_order: bool,
}

impl Default for LifterConfig {
    fn default() -> Self {
        LifterConfig {
            frames: 9,
            channels: 64,
            joints: 17,
            root: 0,
            seed: 0,
            second_order: true,
        }
    }
}

impl LifterConfig {
    pub fn validate(&self) -> Result<()> {
        if ![3, 9, 27].contains(&self.frames) {
            return Err(Error::invalid(format!(
                "lifter frames must be 3, 9 or 27, got {}",
                self.frames
            )));
        }
        if self.channels < 8 {
            return Err(Error::invalid(format!(
                "lifter channels must be at least 8, got {}",
                self.channels
            )));
        }
        if self.joints < 2 || self.root >= self.joints {
            return Err(Error::invalid(format!(
                "invalid joints/root {}/{}",
                self.joints, self.root
            )));
        }
        Ok(())
    }

    /// Number of kernel-3 stages: expand plus residual blocks.
    pub fn stages(&self) -> usize {
        match self.frames {
            3 => 1,
            9 => 2,
            _ => 3,
        }
    }

    pub fn output_width(&self) -> usize {
        3 * (self.joints - 1)
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (c, j) = (self.channels, self.joints);
        let expand = 3 * 2 * j * c + c;
        let block = 3 * c * c + c + c * c + c;
        let shrink = c * 3 * (j - 1) + 3 * (j - 1);
        expand + (self.stages() - 1) * block + shrink
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    fn is_bias(&self) -> bool {
        self.name.ends_with(".bias")
    }
}

fn layout(cfg: &LifterConfig) -> Vec<Segment> {
    let c = cfg.channels;
    let mut shapes = vec![
        ("expand.weight".to_string(), 6 * cfg.joints, c),
        ("expand.bias".to_string(), 1, c),
    ];
    for b in 1..cfg.stages() {
        shapes.push((format!("block{b}.conv.weight"), 3 * c, c));
        shapes.push((format!("block{b}.conv.bias"), 1, c));
        shapes.push((format!("block{b}.pointwise.weight"), c, c));
        shapes.push((format!("block{b}.pointwise.bias"), 1, c));
    }
    shapes.push(("shrink.weight".to_string(), c, cfg.output_width()));
    shapes.push(("shrink.bias".to_string(), 1, cfg.output_width()));
    let mut offset = 0;
    shapes
        .into_iter()
        .map(|(name, rows, cols)| {
            let s = Segment {
                name,
                rows,
                cols,
                offset,
            };
            offset += rows * cols;
            s
        })
        .collect()
}

/// Flat parameter vector with named, fixed-shape segments.
#[derive(Debug, Clone, PartialEq)]
pub struct LifterParams {
    pub config: LifterConfig,
    pub segments: Vec<Segment>,
    pub values: Vec<f64>,
}

/// Fan-in scaled uniform weights, zero biases; deterministic in `cfg.seed`.
pub fn init_params(cfg: &LifterConfig) -> Result<LifterParams> {
    cfg.validate()?;
    let segments = layout(cfg);
    let mut rng = rng_for(cfg.seed, &[0x696e6974]);
    let mut values = vec![0.0; cfg.param_count()];
    for s in &segments {
        if s.is_bias() {
            continue;
        }
        let bound = (1.0 / s.rows as f64).sqrt();
        for v in &mut values[s.range()] {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(LifterParams {
        config: cfg.clone(),
        segments,
        values,
    })
}

impl LifterParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.range()])
    }

    pub fn with_values(&self, values: Vec<f64>) -> LifterParams {
        assert_eq!(values.len(), self.values.len());
        LifterParams {
            config: self.config.clone(),
            segments: self.segments.clone(),
            values,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let c = &self.config;
        ck.set_meta("lifter.frames", c.frames);
        ck.set_meta("lifter.channels", c.channels);
        ck.set_meta("lifter.joints", c.joints);
        ck.set_meta("lifter.root", c.root);
        ck.set_meta("lifter.seed", c.seed);
        ck.set_meta("lifter.second_order", c.second_order);
        for s in &self.segments {
            ck.push(&s.name, s.rows, s.cols, self.values[s.range()].to_vec());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<LifterParams> {
        let config = LifterConfig {
            frames: ck.meta_value("lifter.frames")?,
            channels: ck.meta_value("lifter.channels")?,
            joints: ck.meta_value("lifter.joints")?,
            root: ck.meta_value("lifter.root")?,
            seed: ck.meta_value("lifter.seed")?,
            second_order: ck.meta_value("lifter.second_order")?,
        };
        config.validate()?;
        let segments = layout(&config);
        let mut values = Vec::with_capacity(config.param_count());
        for s in &segments {
            let stored = ck
                .segment(&s.name)
                .ok_or_else(|| Error::invalid(format!("checkpoint is missing segment `{}`", s.name)))?;
            if (stored.rows, stored.cols) != (s.rows, s.cols) {
                return Err(Error::invalid(format!(
                    "segment `{}` has shape {}×{}, expected {}×{}",
                    s.name, stored.rows, stored.cols, s.rows, s.cols
                )));
            }
            values.extend_from_slice(&stored.values);
        }
        let p = LifterParams {
            config,
            segments,
            values,
        };
        if !p.is_finite() {
            return Err(Error::Numeric("checkpoint contains non-finite parameters".into()));
        }
        Ok(p)
    }
}

/// Normalized input windows, `count × frames × joints × 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowInputs {
    pub frames: usize,
    pub joints: usize,
    pub data: Vec<f64>,
}

impl WindowInputs {
    pub fn new(frames: usize, joints: usize) -> Self {
        WindowInputs {
            frames,
            joints,
            data: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.data.len() / (self.frames * self.joints * 2)
    }

    pub fn window_len(&self) -> usize {
        self.frames * self.joints * 2
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let n = self.window_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Appends frames `start..start + frames` of `t`, normalized with `k`.
    pub fn push_window(&mut self, t: &Trajectory2D, start: usize, k: &Intrinsics) -> Result<()> {
        if t.joints != self.joints || start + self.frames > t.frames {
            return Err(Error::invalid(format!(
                "window {start}..{} out of a {}×{} trajectory",
                start + self.frames,
                t.frames,
                t.joints
            )));
        }
        for f in start..start + self.frames {
            for &p in t.frame(f) {
                let n = camera::normalize(p, k)?;
                self.data.push(n.an);
                self.data.push(n.bn);
            }
        }
        Ok(())
    }

    pub fn extend(&mut self, other: &WindowInputs) {
        assert_eq!((self.frames, self.joints), (other.frames, other.joints));
        self.data.extend_from_slice(&other.data);
    }
}

/// Windows with root-relative center-frame targets (mm, non-root joints only).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub inputs: WindowInputs,
    pub targets: Vec<f64>,
    pub root: usize,
}

impl WindowBatch {
    pub fn new(frames: usize, joints: usize, root: usize) -> Self {
        WindowBatch {
            inputs: WindowInputs::new(frames, joints),
            targets: Vec::new(),
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends one window and the target pose for its center frame.
    pub fn push(&mut self, t: &Trajectory2D, start: usize, k: &Intrinsics, target: &Pose3D) -> Result<()> {
        if target.num_joints() != self.inputs.joints {
            return Err(Error::invalid("target joint count mismatch"));
        }
        self.inputs.push_window(t, start, k)?;
        let r = target.joints[self.root];
        for (j, p) in target.joints.iter().enumerate() {
            if j != self.root {
                self.targets.extend_from_slice(&[p[0] - r[0], p[1] - r[1], p[2] - r[2]]);
            }
        }
        Ok(())
    }

    pub fn extend(&mut self, other: &WindowBatch) {
        assert_eq!(self.root, other.root);
        self.inputs.extend(&other.inputs);
        self.targets.extend_from_slice(&other.targets);
    }

    pub fn target_poses(&self) -> Vec<Pose3D> {
        let j = self.inputs.joints;
        self.targets
            .chunks_exact(3 * (j - 1))
            .map(|row| expand_root(row, j, self.root))
            .collect()
    }
}

fn expand_root(row: &[f64], joints: usize, root: usize) -> Pose3D {
    let mut it = row.chunks_exact(3);
    let joints = (0..joints)
        .map(|j| {
            if j == root {
                [0.0; 3]
            } else {
                let c = it.next().expect("row width");
                [c[0], c[1], c[2]]
            }
        })
        .collect();
    Pose3D {
        joints,
        root_relative: true,
    }
}

fn check_inputs(cfg: &LifterConfig, inputs: &WindowInputs) -> Result<()> {
    if inputs.frames != cfg.frames || inputs.joints != cfg.joints {
        return Err(Error::invalid(format!(
            "input windows are {}×{} but the lifter expects {}×{}",
            inputs.frames, inputs.joints, cfg.frames, cfg.joints
        )));
    }
    if !inputs.data.len().is_multiple_of(inputs.window_len()) {
        return Err(Error::invalid("input buffer is not a whole number of windows"));
    }
    Ok(())
}

/// Records the network on `tape`; returns the `count × 3(J-1)` output in mm.
fn build_network<T: Real>(
    tape: &mut Tape<T>,
    cfg: &LifterConfig,
    segments: &[Segment],
    params: &[T],
    inputs: &WindowInputs,
) -> NodeId {
    let p: Vec<NodeId> = segments
        .iter()
        .map(|s| tape.param(Tensor::new(s.rows, s.cols, params[s.range()].to_vec())))
        .collect();
    let count = inputs.count();
    let group = 6 * cfg.joints;
    let x = tape.leaf(Tensor::from_f64(count * cfg.frames / 3, group, &inputs.data));

    let linear = |tape: &mut Tape<T>, x: NodeId, w: NodeId, b: NodeId| {
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    };
    let h = linear(tape, x, p[0], p[1]);
    let mut h = tape.relu(h);
    let mut rows = count * cfg.frames / 3;
    for b in 0..cfg.stages() - 1 {
        let base = 2 + 4 * b;
        let grouped = tape.reshape(h, rows / 3, 3 * cfg.channels);
        let y = linear(tape, grouped, p[base], p[base + 1]);
        let y = tape.relu(y);
        let y = linear(tape, y, p[base + 2], p[base + 3]);
        let y = tape.relu(y);
        let residual = tape.select_rows(h, 3, 1);
        h = tape.add(y, residual);
        rows /= 3;
    }
    let n = p.len();
    let out = linear(tape, h, p[n - 2], p[n - 1]);
    tape.scale(out, OUTPUT_SCALE_MM)
}

/// Center-frame predictions for every window.
pub fn predict(params: &LifterParams, inputs: &WindowInputs) -> Result<Vec<Pose3D>> {
    let cfg = &params.config;
    check_inputs(cfg, inputs)?;
    if inputs.count() == 0 {
        return Ok(Vec::new());
    }
    let mut tape = Tape::<f64>::new();
    let out = build_network(&mut tape, cfg, &params.segments, &params.values, inputs);
    Ok(tape
        .value(out)
        .data
        .chunks_exact(cfg.output_width())
        .map(|row| expand_root(row, cfg.joints, cfg.root))
        .collect())
}

/// Lifts one window of pixel keypoints to the root-relative center-frame pose.
pub fn forward(params: &LifterParams, window: &Trajectory2D, k: &Intrinsics) -> Result<Pose3D> {
    let cfg = &params.config;
    if window.frames != cfg.frames || window.joints != cfg.joints {
        return Err(Error::invalid(format!(
            "window is {}×{} but the lifter expects {}×{}",
            window.frames, window.joints, cfg.frames, cfg.joints
        )));
    }
    let mut inputs = WindowInputs::new(cfg.frames, cfg.joints);
    inputs.push_window(window, 0, k)?;
    Ok(predict(params, &inputs)?.remove(0))
}

/// Mean per-joint Euclidean distance over a batch of poses (mm).
pub fn mpjpe_loss(pred: &[Pose3D], target: &[Pose3D]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::invalid(format!(
            "batch sizes {} and {} must match and be non-empty",
            pred.len(),
            target.len()
        )));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if p.num_joints() != t.num_joints() {
            return Err(Error::invalid("joint count mismatch"));
        }
        for (a, b) in p.joints.iter().zip(&t.joints) {
            total += distance(*a, *b);
            n += 1;
        }
    }
    Ok(total / n as f64)
}

/// Unlabeled consecutive windows from several clips, for bone-length losses.
#[derive(Debug, Clone)]
pub struct ClipWindows {
    pub inputs: WindowInputs,
    /// `(first window, window count)` per clip.
    pub clips: Vec<(usize, usize)>,
}

impl ClipWindows {
    /// Stride-1 windows over each clip, so window `i + 1` predicts the frame
    /// after window `i`.
    pub fn from_trajectories(clips: &[Trajectory2D], k: &Intrinsics, frames: usize) -> Result<Self> {
        let joints = clips.first().map_or(0, |c| c.joints);
        let mut inputs = WindowInputs::new(frames, joints);
        let mut spans = Vec::with_capacity(clips.len());
        for c in clips {
            if c.frames < frames {
                return Err(Error::invalid(format!(
                    "clip of {} frames is shorter than the {frames}-frame receptive field",
                    c.frames
                )));
            }
            let start = inputs.count();
            let n = c.frames - frames + 1;
            for s in 0..n {
                inputs.push_window(c, s, k)?;
            }
            spans.push((start, n));
        }
        Ok(ClipWindows {
            inputs,
            clips: spans,
        })
    }

    pub fn total_frames(&self) -> usize {
        self.clips.iter().map(|c| c.1).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsoWeights {
    pub symmetry: f64,
    pub consistency: f64,
}

impl Default for IsoWeights {
    fn default() -> Self {
        IsoWeights {
            symmetry: 1.0,
            consistency: 1.0,
        }
    }
}

/// A loss over the network's predictions.
#[derive(Debug, Clone, Copy)]
pub enum Loss<'a> {
    /// Scaled mean per-joint error against the batch targets.
    Mpjpe(&'a WindowBatch),
    /// Weighted bone-length symmetry + consistency, averaged over predicted
    /// frames and bones (so its scale matches a per-joint error) and scaled
    /// to meters. No targets are involved.
    Iso {
        windows: &'a ClipWindows,
        topology: &'a SkeletonTopology,
        weights: IsoWeights,
    },
}

impl Loss<'_> {
    fn inputs(&self) -> &WindowInputs {
        match self {
            Loss::Mpjpe(b) => &b.inputs,
            Loss::Iso { windows, .. } => &windows.inputs,
        }
    }
}

/// Maps joint indices to predicted-row indices (root removed).
fn predicted_index(joint: usize, root: usize) -> Option<usize> {
    use std::cmp::Ordering::*;
    match joint.cmp(&root) {
        Less => Some(joint),
        Equal => None,
        Greater => Some(joint - 1),
    }
}

pub(crate) fn bone_loss_spec(
    topology: &SkeletonTopology,
    root: usize,
    clips: &[(usize, usize)],
    weights: IsoWeights,
    scale: f64,
) -> BoneLossSpec {
    BoneLossSpec {
        bones: topology
            .bones()
            .iter()
            .map(|&(p, c)| {
                (
                    predicted_index(p, root),
                    predicted_index(c, root).expect("root is never a child"),
                )
            })
            .collect(),
        mirror_pairs: topology.mirror_pairs.clone(),
        clips: clips.to_vec(),
        symmetry_weight: weights.symmetry,
        consistency_weight: weights.consistency,
        scale,
    }
}

/// A [`Loss`] bound to a network layout, differentiable in the flat
/// parameter vector.
pub struct LifterObjective<'a> {
    pub config: &'a LifterConfig,
    pub segments: &'a [Segment],
    pub loss: Loss<'a>,
}

impl<'a> LifterObjective<'a> {
    pub fn new(params: &'a LifterParams, loss: Loss<'a>) -> Result<Self> {
        check_inputs(&params.config, loss.inputs())?;
        if loss.inputs().count() == 0 {
            return Err(Error::invalid("objective has no windows"));
        }
        match loss {
            Loss::Mpjpe(b) => {
                if b.targets.len() != b.len() * params.config.output_width() || b.root != params.config.root {
                    return Err(Error::invalid("batch targets do not match the lifter"));
                }
            }
            Loss::Iso { topology, .. } => {
                topology.validate()?;
                if topology.num_joints() != params.config.joints || topology.root() != params.config.root {
                    return Err(Error::invalid("topology does not match the lifter"));
                }
            }
        }
        Ok(LifterObjective {
            config: &params.config,
            segments: &params.segments,
            loss,
        })
    }
}

impl Differentiable for LifterObjective<'_> {
    fn num_params(&self) -> usize {
        self.config.param_count()
    }

    fn value_and_grad<T: Real>(&self, params: &[T]) -> Result<(T, Vec<T>)> {
        let mut tape = Tape::<T>::new();
        let out = build_network(&mut tape, self.config, self.segments, params, self.loss.inputs());
        let loss = match self.loss {
            Loss::Mpjpe(batch) => tape.pose_error(
                out,
                Arc::new(PoseErrorSpec {
                    target: Arc::from(batch.targets.as_slice()),
                    joints_total: self.config.joints,
                    scale: LOSS_SCALE,
                }),
            ),
            Loss::Iso {
                windows,
                topology,
                weights,
            } => {
                let terms = windows.total_frames() * topology.num_bones();
                let scale = LOSS_SCALE / terms as f64;
                let spec = bone_loss_spec(topology, self.config.root, &windows.clips, weights, scale);
                tape.bone_loss(out, Arc::new(spec))
            }
        };
        let grads = tape.backward(loss)?;
        let value = tape.value(loss).data[0];
        let flat = grads.params.into_iter().flat_map(|t| t.data).collect();
        Ok((value, flat))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Loss and full reverse-mode gradient at `params`.
pub fn grad(params: &LifterParams, loss: Loss<'_>) -> Result<Gradient> {
    let obj = LifterObjective::new(params, loss)?;
    let (loss, grad) = autodiff::gradient(&obj, &params.values)?;
    Ok(Gradient { loss, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaOrder {
    /// Differentiate through the inner SGD step exactly.
    Second,
    /// Query gradient at the adapted parameters (first-order MAML).
    First,
}

impl MetaOrder {
    pub fn from_flag(second_order: bool) -> Self {
        if second_order {
            MetaOrder::Second
        } else {
            MetaOrder::First
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaGradient {
    pub grad: Vec<f64>,
    pub support_loss: f64,
    /// Query loss at the adapted parameters.
    pub query_loss: f64,
    pub second_order: bool,
    /// Always 1: the inner loop takes exactly one SGD step.
    pub inner_steps: usize,
}

/// `∇θ L_q(θ - α∇L_s(θ))` for arbitrary differentiable support/query losses.
pub fn meta_gradient<S: Differentiable, Q: Differentiable>(
    theta: &[f64],
    support: &S,
    query: &Q,
    alpha: f64,
    order: MetaOrder,
) -> Result<MetaGradient> {
    let (support_loss, g_s) = support.value_and_grad(theta)?;
    let adapted: Vec<f64> = theta.iter().zip(&g_s).map(|(t, g)| t - alpha * g).collect();
    let (query_loss, g_q) = query.value_and_grad(&adapted)?;
    let grad = match order {
        MetaOrder::First => g_q,
        MetaOrder::Second => {
            let hv = autodiff::hessian_vector_product(support, theta, &g_q)?;
            g_q.iter().zip(&hv).map(|(g, h)| g - alpha * h).collect()
        }
    };
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite meta-gradient".into()));
    }
    Ok(MetaGradient {
        grad,
        support_loss,
        query_loss,
        second_order: order == MetaOrder::Second,
        inner_steps: 1,
    })
}

pub fn meta_grad(
    params: &LifterParams,
    support: &WindowBatch,
    query: &WindowBatch,
    alpha: f64,
    order: MetaOrder,
) -> Result<MetaGradient> {
    let s = LifterObjective::new(params, Loss::Mpjpe(support))?;
    let q = LifterObjective::new(params, Loss::Mpjpe(query))?;
    meta_gradient(&params.values, &s, &q, alpha, order)
}

/// The composed meta-objective `L_q(θ - α∇L_s(θ))`.
pub fn meta_objective(params: &LifterParams, support: &WindowBatch, query: &WindowBatch, alpha: f64) -> Result<f64> {
    let g = grad(params, Loss::Mpjpe(support))?;
    let adapted = params.with_values(
        params
            .values
            .iter()
            .zip(&g.grad)
            .map(|(t, g)| t - alpha * g)
            .collect(),
    );
    Ok(grad(&adapted, Loss::Mpjpe(query))?.loss)
}
