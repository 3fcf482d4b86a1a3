//! A small reverse-mode differentiation tape over 2-D tensors.
//!
//! The tape is generic over its scalar type. Running it on `f64` gives
//! ordinary gradients; running it on [`Dual`] numbers whose tangents hold a
//! direction `v` gives, in the tangent part of every gradient entry, the
//! Hessian-vector product `H·v` (forward-over-reverse). That product is all
//! that is needed to differentiate through one SGD step exactly:
//!
//! ```text
//! d/dθ L_q(θ - α∇L_s(θ)) = (I - α·H_s(θ)) · ∇L_q(θ')
//! ```
//!
//! Only the operations the lifting network and its losses need are provided.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::Arc;

use crate::error::{Error, Result};

pub trait Real:
    Copy
    + Debug
    + Default
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    /// Derivative of `|x|`, taking 0 at the kink.
    fn sign(self) -> Self {
        let v = self.value();
        Self::from_f64(if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        })
    }

    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// First-order dual number `re + du·ε`, `ε² = 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub du: f64,
}

impl Dual {
    pub const fn new(re: f64, du: f64) -> Self {
        Dual { re, du }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.du + o.du)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.du - o.du)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.du + self.du * o.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let re = self.re / o.re;
        Dual::new(re, (self.du - re * o.du) / o.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.du)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, o: Dual) {
        *self = *self + o;
    }
}

impl SubAssign for Dual {
    fn sub_assign(&mut self, o: Dual) {
        *self = *self - o;
    }
}

impl MulAssign for Dual {
    fn mul_assign(&mut self, o: Dual) {
        *self = *self * o;
    }
}

impl Real for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::new(v, 0.0)
    }
    fn value(self) -> f64 {
        self.re
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        let du = if s > 0.0 { self.du / (2.0 * s) } else { 0.0 };
        Dual::new(s, du)
    }
}

/// Row-major `rows × cols` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape mismatch");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn scalar(v: T) -> Self {
        Tensor::new(1, 1, vec![v])
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Tensor::new(rows, cols, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    fn add_in_place(&mut self, o: &Tensor<T>) {
        for (a, &b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Fixed data for the pose-error head.
#[derive(Debug, Clone)]
pub struct PoseErrorSpec {
    /// Root-relative targets for the predicted (non-root) joints, `rows × 3k`.
    pub target: Arc<[f64]>,
    /// Joints per pose including the root, which is predicted exactly and
    /// contributes zero error.
    pub joints_total: usize,
    pub scale: f64,
}

/// Fixed data for the bone-length head. Predictions are rows of non-root
/// joints; rows `clips[i].0 .. clips[i].0 + clips[i].1` form consecutive
/// frames of one clip.
#[derive(Debug, Clone)]
pub struct BoneLossSpec {
    /// `(parent, child)` in predicted-joint indices; `None` is the root at the origin.
    pub bones: Vec<(Option<usize>, usize)>,
    pub mirror_pairs: Vec<(usize, usize)>,
    pub clips: Vec<(usize, usize)>,
    pub symmetry_weight: f64,
    pub consistency_weight: f64,
    pub scale: f64,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Reshape(NodeId),
    SelectRows {
        src: NodeId,
        stride: usize,
        offset: usize,
    },
    Scale(NodeId, f64),
    Sum(NodeId),
    PoseError(NodeId, Arc<PoseErrorSpec>),
    BoneLoss(NodeId, Arc<BoneLossSpec>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Recorded computation. Values are kept for the backward sweep.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<NodeId>,
}

/// Gradients of a scalar output with respect to every parameter node, in
/// registration order.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Vec<Tensor<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> NodeId {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param => true,
            op => inputs(op).iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> NodeId {
        let value = eval(&op, |id| &self.nodes[id.0].value);
        self.push(op, value)
    }

    /// Constant input; no gradient flows into it.
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        let id = self.push(Op::Param, value);
        self.params.push(id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).cols, self.value(b).rows, "matmul shape mismatch");
        self.record(Op::MatMul(a, b))
    }

    /// `a + bias`, with `bias` a `1 × cols` row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(bias));
        assert!(bv.rows == 1 && bv.cols == av.cols, "bias shape mismatch");
        self.record(Op::AddRow(a, bias))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.rows == bv.rows && av.cols == bv.cols, "add shape mismatch");
        self.record(Op::Add(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.rows == bv.rows && av.cols == bv.cols, "mul shape mismatch");
        self.record(Op::Mul(a, b))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.record(Op::Relu(a))
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let v = self.value(a);
        assert_eq!(v.rows * v.cols, rows * cols, "reshape size mismatch");
        let value = Tensor::new(rows, cols, v.data.clone());
        self.push(Op::Reshape(a), value)
    }

    /// Rows `offset, offset + stride, ...`.
    pub fn select_rows(&mut self, src: NodeId, stride: usize, offset: usize) -> NodeId {
        assert!(offset < stride && self.value(src).rows.is_multiple_of(stride));
        self.record(Op::SelectRows {
            src,
            stride,
            offset,
        })
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.record(Op::Scale(a, s))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.record(Op::Sum(a))
    }

    /// `scale · Σ ‖pred - target‖ / (rows · joints_total)` over 3-vectors.
    pub fn pose_error(&mut self, pred: NodeId, spec: Arc<PoseErrorSpec>) -> NodeId {
        let v = self.value(pred);
        assert!(v.cols.is_multiple_of(3) && spec.target.len() == v.data.len(), "pose error shape mismatch");
        self.record(Op::PoseError(pred, spec))
    }

    /// Weighted bone-length symmetry + consistency over clips of predictions.
    pub fn bone_loss(&mut self, pred: NodeId, spec: Arc<BoneLossSpec>) -> NodeId {
        let v = self.value(pred);
        let covered: usize = spec.clips.iter().map(|c| c.1).sum();
        assert!(v.cols.is_multiple_of(3) && covered <= v.rows, "bone loss shape mismatch");
        self.record(Op::BoneLoss(pred, spec))
    }

    /// Recomputes every node from the recorded leaves and parameters.
    pub fn replay(&self) -> Vec<Tensor<T>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf | Op::Param => node.value.clone(),
                Op::Reshape(a) => {
                    let src = &values[a.0];
                    Tensor::new(node.value.rows, node.value.cols, src.data.clone())
                }
                op => eval(op, |id| &values[id.0]),
            };
            values.push(v);
        }
        values
    }

    /// Reverse sweep from a `1 × 1` output.
    pub fn backward(&self, output: NodeId) -> Result<Gradients<T>> {
        let out = self.value(output);
        if out.rows != 1 || out.cols != 1 {
            return Err(Error::invalid("backward needs a scalar output"));
        }
        if !out.data[0].value().is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {:?}", out.data[0])));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(T::from_f64(1.0)));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Param) {
                grads[idx] = Some(g);
                continue;
            }
            for (input, contrib) in self.local_grads(&node.op, &node.value, &g) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_in_place(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        let params = self
            .params
            .iter()
            .map(|&p| {
                let v = self.value(p);
                grads
                    .get_mut(p.0)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(v.rows, v.cols))
            })
            .collect();
        Ok(Gradients { params })
    }

    fn local_grads(&self, op: &Op, out: &Tensor<T>, g: &Tensor<T>) -> Vec<(NodeId, Tensor<T>)> {
        let val = |id: &NodeId| &self.nodes[id.0].value;
        let needs = |id: &NodeId| self.nodes[id.0].needs_grad;
        match op {
            Op::Leaf | Op::Param => Vec::new(),
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let mut res = Vec::with_capacity(2);
                if needs(a) {
                    res.push((*a, matmul_nt(g, bv)));
                }
                if needs(b) {
                    res.push((*b, matmul_tn(av, g)));
                }
                res
            }
            Op::AddRow(a, bias) => {
                let mut db = Tensor::zeros(1, g.cols);
                for row in g.data.chunks_exact(g.cols) {
                    for (d, &v) in db.data.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![(*a, g.clone()), (*bias, db)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let da = zip_map(g, bv, |x, y| x * y);
                let db = zip_map(g, av, |x, y| x * y);
                vec![(*a, da), (*b, db)]
            }
            Op::Relu(a) => {
                let d = zip_map(g, out, |gv, o| if o.value() > 0.0 { gv } else { T::zero() });
                vec![(*a, d)]
            }
            Op::Reshape(a) => {
                let av = val(a);
                vec![(*a, Tensor::new(av.rows, av.cols, g.data.clone()))]
            }
            Op::SelectRows {
                src,
                stride,
                offset,
            } => {
                let sv = val(src);
                let mut d = Tensor::zeros(sv.rows, sv.cols);
                let c = sv.cols;
                for (i, row) in g.data.chunks_exact(c).enumerate() {
                    let r = i * stride + offset;
                    d.data[r * c..(r + 1) * c].copy_from_slice(row);
                }
                vec![(*src, d)]
            }
            Op::Scale(a, s) => {
                let s = T::from_f64(*s);
                vec![(*a, Tensor::new(g.rows, g.cols, g.data.iter().map(|&v| v * s).collect()))]
            }
            Op::Sum(a) => {
                let av = val(a);
                vec![(*a, Tensor::new(av.rows, av.cols, vec![g.data[0]; av.data.len()]))]
            }
            Op::PoseError(pred, spec) => vec![(*pred, pose_error_grad(val(pred), spec, g.data[0]))],
            Op::BoneLoss(pred, spec) => vec![(*pred, bone_loss_grad(val(pred), spec, g.data[0]))],
        }
    }
}

fn inputs(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Leaf | Op::Param => Vec::new(),
        Op::MatMul(a, b) | Op::AddRow(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::Relu(a) | Op::Reshape(a) | Op::Scale(a, _) | Op::Sum(a) => vec![*a],
        Op::SelectRows { src, .. } => vec![*src],
        Op::PoseError(a, _) | Op::BoneLoss(a, _) => vec![*a],
    }
}

fn eval<'a, T: Real>(op: &Op, val: impl Fn(NodeId) -> &'a Tensor<T>) -> Tensor<T> {
    match op {
        Op::Leaf | Op::Param | Op::Reshape(_) => unreachable!("not evaluated from inputs"),
        Op::MatMul(a, b) => matmul(val(*a), val(*b)),
        Op::AddRow(a, bias) => {
            let (av, bv) = (val(*a), val(*bias));
            let mut out = av.clone();
            for row in out.data.chunks_exact_mut(av.cols) {
                for (o, &b) in row.iter_mut().zip(&bv.data) {
                    *o += b;
                }
            }
            out
        }
        Op::Add(a, b) => zip_map(val(*a), val(*b), |x, y| x + y),
        Op::Mul(a, b) => zip_map(val(*a), val(*b), |x, y| x * y),
        Op::Relu(a) => {
            let av = val(*a);
            let data = av
                .data
                .iter()
                .map(|&v| if v.value() > 0.0 { v } else { T::zero() })
                .collect();
            Tensor::new(av.rows, av.cols, data)
        }
        Op::SelectRows {
            src,
            stride,
            offset,
        } => {
            let sv = val(*src);
            let c = sv.cols;
            let data = sv
                .data
                .chunks_exact(c)
                .skip(*offset)
                .step_by(*stride)
                .flatten()
                .copied()
                .collect();
            Tensor::new(sv.rows / stride, c, data)
        }
        Op::Scale(a, s) => {
            let av = val(*a);
            let s = T::from_f64(*s);
            Tensor::new(av.rows, av.cols, av.data.iter().map(|&v| v * s).collect())
        }
        Op::Sum(a) => {
            let mut acc = T::zero();
            for &v in &val(*a).data {
                acc += v;
            }
            Tensor::scalar(acc)
        }
        Op::PoseError(pred, spec) => Tensor::scalar(pose_error_value(val(*pred), spec)),
        Op::BoneLoss(pred, spec) => Tensor::scalar(bone_loss_value(val(*pred), spec)),
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::new(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![T::zero(); n * m];
    for (arow, orow) in a.data.chunks_exact(k).zip(out.chunks_exact_mut(m)) {
        for (&aik, brow) in arow.iter().zip(b.data.chunks_exact(m)) {
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Tensor::new(n, m, out)
}

/// `g · bᵀ`
fn matmul_nt<T: Real>(g: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, m, k) = (g.rows, g.cols, b.rows);
    let mut out = vec![T::zero(); n * k];
    for (grow, orow) in g.data.chunks_exact(m).zip(out.chunks_exact_mut(k)) {
        for (o, brow) in orow.iter_mut().zip(b.data.chunks_exact(m)) {
            let mut acc = T::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                acc += x * y;
            }
            *o = acc;
        }
    }
    Tensor::new(n, k, out)
}

/// `aᵀ · g`
fn matmul_tn<T: Real>(a: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (k, m) = (a.cols, g.cols);
    let mut out = vec![T::zero(); k * m];
    for (arow, grow) in a.data.chunks_exact(k).zip(g.data.chunks_exact(m)) {
        for (&aik, orow) in arow.iter().zip(out.chunks_exact_mut(m)) {
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aik * gv;
            }
        }
    }
    Tensor::new(k, m, out)
}

fn pose_error_value<T: Real>(pred: &Tensor<T>, spec: &PoseErrorSpec) -> T {
    let mut acc = T::zero();
    for (p, t) in pred.data.chunks_exact(3).zip(spec.target.chunks_exact(3)) {
        let d = [
            p[0] - T::from_f64(t[0]),
            p[1] - T::from_f64(t[1]),
            p[2] - T::from_f64(t[2]),
        ];
        acc += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    }
    acc * T::from_f64(spec.scale / (pred.rows * spec.joints_total) as f64)
}

fn pose_error_grad<T: Real>(pred: &Tensor<T>, spec: &PoseErrorSpec, g: T) -> Tensor<T> {
    let coef = g * T::from_f64(spec.scale / (pred.rows * spec.joints_total) as f64);
    let mut out = Tensor::zeros(pred.rows, pred.cols);
    for ((p, t), o) in pred
        .data
        .chunks_exact(3)
        .zip(spec.target.chunks_exact(3))
        .zip(out.data.chunks_exact_mut(3))
    {
        let d = [
            p[0] - T::from_f64(t[0]),
            p[1] - T::from_f64(t[1]),
            p[2] - T::from_f64(t[2]),
        ];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if n.value() > 0.0 {
            for k in 0..3 {
                o[k] = coef * d[k] / n;
            }
        }
    }
    out
}

fn joint<T: Real>(row: &[T], j: Option<usize>) -> [T; 3] {
    match j {
        Some(j) => [row[3 * j], row[3 * j + 1], row[3 * j + 2]],
        None => [T::zero(); 3],
    }
}

/// Bone lengths for every covered row, `(lengths, unit vectors)`.
fn bones_of<T: Real>(pred: &Tensor<T>, spec: &BoneLossSpec) -> (Vec<T>, Vec<[T; 3]>) {
    let nb = spec.bones.len();
    let mut lens = vec![T::zero(); pred.rows * nb];
    let mut dirs = vec![[T::zero(); 3]; pred.rows * nb];
    for (r, row) in pred.data.chunks_exact(pred.cols).enumerate() {
        for (b, &(p, c)) in spec.bones.iter().enumerate() {
            let (xp, xc) = (joint(row, p), joint(row, Some(c)));
            let d = [xc[0] - xp[0], xc[1] - xp[1], xc[2] - xp[2]];
            let l = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            lens[r * nb + b] = l;
            if l.value() > 0.0 {
                dirs[r * nb + b] = [d[0] / l, d[1] / l, d[2] / l];
            }
        }
    }
    (lens, dirs)
}

fn bone_loss_value<T: Real>(pred: &Tensor<T>, spec: &BoneLossSpec) -> T {
    let nb = spec.bones.len();
    let (lens, _) = bones_of(pred, spec);
    let (mut sym, mut cons) = (T::zero(), T::zero());
    for &(start, len) in &spec.clips {
        for t in start..start + len {
            for &(l, r) in &spec.mirror_pairs {
                sym += (lens[t * nb + l] - lens[t * nb + r]).abs();
            }
            if t + 1 < start + len {
                for b in 0..nb {
                    cons += (lens[(t + 1) * nb + b] - lens[t * nb + b]).abs();
                }
            }
        }
    }
    (sym * T::from_f64(spec.symmetry_weight) + cons * T::from_f64(spec.consistency_weight))
        * T::from_f64(spec.scale)
}

fn bone_loss_grad<T: Real>(pred: &Tensor<T>, spec: &BoneLossSpec, g: T) -> Tensor<T> {
    let nb = spec.bones.len();
    let (lens, dirs) = bones_of(pred, spec);
    let mut dl = vec![T::zero(); lens.len()];
    let ws = g * T::from_f64(spec.symmetry_weight * spec.scale);
    let wc = g * T::from_f64(spec.consistency_weight * spec.scale);
    for &(start, len) in &spec.clips {
        for t in start..start + len {
            for &(l, r) in &spec.mirror_pairs {
                let s = (lens[t * nb + l] - lens[t * nb + r]).sign() * ws;
                dl[t * nb + l] += s;
                dl[t * nb + r] -= s;
            }
            if t + 1 < start + len {
                for b in 0..nb {
                    let s = (lens[(t + 1) * nb + b] - lens[t * nb + b]).sign() * wc;
                    dl[(t + 1) * nb + b] += s;
                    dl[t * nb + b] -= s;
                }
            }
        }
    }
    let mut out = Tensor::zeros(pred.rows, pred.cols);
    let cols = pred.cols;
    for r in 0..pred.rows {
        let row = &mut out.data[r * cols..(r + 1) * cols];
        for (b, &(p, c)) in spec.bones.iter().enumerate() {
            let g = dl[r * nb + b];
            let u = dirs[r * nb + b];
            for k in 0..3 {
                row[3 * c + k] += g * u[k];
                if let Some(p) = p {
                    row[3 * p + k] -= g * u[k];
                }
            }
        }
    }
    out
}

/// A scalar function of a flat parameter vector that can report its gradient
/// for any [`Real`] scalar type.
pub trait Differentiable: Sync {
    fn num_params(&self) -> usize;
    fn value_and_grad<T: Real>(&self, params: &[T]) -> Result<(T, Vec<T>)>;
}

pub fn gradient<F: Differentiable>(f: &F, params: &[f64]) -> Result<(f64, Vec<f64>)> {
    f.value_and_grad(params)
}

/// `H(params) · v` by forward-over-reverse differentiation.
pub fn hessian_vector_product<F: Differentiable>(f: &F, params: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(params.len(), v.len());
    let dual: Vec<Dual> = params.iter().zip(v).map(|(&p, &t)| Dual::new(p, t)).collect();
    let (_, g) = f.value_and_grad(&dual)?;
    Ok(g.into_iter().map(|d| d.du).collect())
}
