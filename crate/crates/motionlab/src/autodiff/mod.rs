//! A small reverse-mode automatic differentiation engine.
//!
//! Computation is recorded eagerly on a [`Graph`] tape: every operation
//! validates shapes, computes its value immediately, and appends a node.
//! [`Graph::backward`] replays the tape in reverse, accumulating gradients
//! of a scalar loss into the [`ParamSet`] that the graph's parameter leaves
//! were bound from.
//!
//! The primitive set is exactly what the pose and motion networks need:
//! dense linear algebra (`matmul`), elementwise arithmetic and activations,
//! `softmax`, tensor plumbing (`concat`, `slice`, `reshape`, `gather`),
//! strided 2D convolution and transpose convolution, reductions (`sum`,
//! `mean`, `l2_norm_rows`), inverted `dropout` driven by an explicit seed,
//! and differentiable forward kinematics ([`Graph::fk`]) whose reverse rule
//! is the closed-form pullback from [`crate::pose::fk_pullback`].
//!
//! Everything is `f64` and single-threaded; determinism comes from explicit
//! seeds and insertion-ordered parameters, never from iteration order of a
//! hash map.

mod kernels;
mod params;
mod tensor;

pub use kernels::ConvGeom;
pub use params::{ParamSet, Sgd, SgdConfig};
pub use tensor::Tensor;

use crate::skeleton::Skeleton;
use kernels::{col2im, im2col, matmul_nn, matmul_nt_acc, matmul_tn_acc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("SHAPE_MISMATCH in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("NOT_SCALAR_LOSS: backward needs a single-element loss, got shape {shape:?}")]
    NotScalarLoss { shape: Vec<usize> },
    #[error("duplicate parameter name '{name}'")]
    DuplicateParam { name: String },
    #[error("unknown parameter name '{name}'")]
    UnknownParam { name: String },
    #[error("NONFINITE_VALUE: node {node} ({op}) produced a non-finite value")]
    NonFiniteValue { node: usize, op: &'static str },
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// How the right operand of a binary elementwise op lines up with the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// Rank-1 right operand applied along the last axis of the left.
    Row,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param {
        slot: usize,
    },
    Add(NodeId, NodeId, Broadcast),
    Sub(NodeId, NodeId, Broadcast),
    Mul(NodeId, NodeId, Broadcast),
    /// `y = mul * x + add`, elementwise with scalar constants. Only the
    /// slope survives into the record; the offset is folded into the value.
    Affine {
        x: NodeId,
        mul: f64,
    },
    Matmul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax {
        x: NodeId,
        axis: usize,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    },
    Reshape(NodeId),
    /// `y[i] = x[index[i]]`; duplicates accumulate in reverse.
    Gather {
        x: NodeId,
        index: Arc<Vec<usize>>,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: NodeId,
        w: NodeId,
        geom: ConvGeom,
    },
    /// Per-channel bias add on NCHW tensors.
    ChannelBias {
        x: NodeId,
        b: NodeId,
    },
    Mean(NodeId),
    Sum(NodeId),
    /// L2 norm along the last axis.
    L2NormRows(NodeId),
    Dropout {
        x: NodeId,
        rate: f64,
        seed: u64,
        train: bool,
    },
    Fk {
        x: NodeId,
        skeleton: Arc<Skeleton>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param { .. } => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Matmul(..) => "matmul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Softmax { .. } => "softmax",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::Gather { .. } => "gather",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "transpose_conv2d",
            Op::ChannelBias { .. } => "channel_bias",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::L2NormRows(_) => "l2_norm",
            Op::Dropout { .. } => "dropout",
            Op::Fk { .. } => "fk",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// The tape: an append-only list of computed nodes.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> GraphError {
    GraphError::ShapeMismatch { op, detail }
}

fn broadcast_rule(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<Broadcast, GraphError> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if b.len() == 1 && !a.is_empty() && *a.last().unwrap() == b[0] {
        return Ok(Broadcast::Row);
    }
    Err(shape_err(op, format!("{a:?} vs {b:?}")))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    /// A leaf bound to a named parameter; its current value is copied onto
    /// the tape and gradients flow back to the same slot.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<NodeId, GraphError> {
        let slot = params.slot_of(name).ok_or_else(|| GraphError::UnknownParam {
            name: name.to_string(),
        })?;
        let value = params.value_by_slot(slot).unwrap().clone();
        Ok(self.push(Op::Param { slot }, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let rule = broadcast_rule("add", self.value(a).shape(), self.value(b).shape())?;
        let value = binary_forward(self.value(a), self.value(b), rule, |x, y| x + y);
        Ok(self.push(Op::Add(a, b, rule), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let rule = broadcast_rule("sub", self.value(a).shape(), self.value(b).shape())?;
        let value = binary_forward(self.value(a), self.value(b), rule, |x, y| x - y);
        Ok(self.push(Op::Sub(a, b, rule), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let rule = broadcast_rule("mul", self.value(a).shape(), self.value(b).shape())?;
        let value = binary_forward(self.value(a), self.value(b), rule, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b, rule), value))
    }

    /// `mul * x + add` with scalar constants.
    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> NodeId {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v = mul * *v + add;
        }
        self.push(Op::Affine { x, mul }, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        matmul_nn(
            self.value(a).data(),
            self.value(b).data(),
            m,
            k,
            n,
            out.data_mut(),
        );
        Ok(self.push(Op::Matmul(a, b), out))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        self.push(Op::Sigmoid(x), value)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v = v.tanh();
        }
        self.push(Op::Tanh(x), value)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(Op::Relu(x), value)
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId, GraphError> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(shape_err("softmax", format!("axis {axis} of {shape:?}")));
        }
        let (outer, mid, inner) = lane_split(&shape, axis);
        let mut value = self.value(x).clone();
        let data = value.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * mid + a) * inner + i;
                let mut max = f64::NEG_INFINITY;
                for a in 0..mid {
                    max = max.max(data[at(a)]);
                }
                let mut total = 0.0;
                for a in 0..mid {
                    let e = (data[at(a)] - max).exp();
                    data[at(a)] = e;
                    total += e;
                }
                for a in 0..mid {
                    data[at(a)] /= total;
                }
            }
        }
        Ok(self.push(Op::Softmax { x, axis }, value))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId, GraphError> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no parts".to_string()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} of {first:?}")));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(first.iter())
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(shape_err("concat", format!("{s:?} vs {first:?}")));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = lane_split(&out_shape, axis);
        let mut out = Tensor::zeros(&out_shape);
        let mut offset = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let mid = s[axis];
            let src = self.value(p).data();
            let block = mid * inner;
            for o in 0..outer {
                let dst_start = (o * axis_total + offset) * inner;
                let src_start = o * block;
                out.data_mut()[dst_start..dst_start + block]
                    .copy_from_slice(&src[src_start..src_start + block]);
            }
            offset += mid;
        }
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            out,
        ))
    }

    pub fn slice(
        &mut self,
        x: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<NodeId, GraphError> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(shape_err(
                "slice",
                format!("[{start}..{}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, mid, inner) = lane_split(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut out = Tensor::zeros(&out_shape);
        let src = self.value(x).data();
        for o in 0..outer {
            let src_start = (o * mid + start) * inner;
            let dst_start = o * len * inner;
            out.data_mut()[dst_start..dst_start + len * inner]
                .copy_from_slice(&src[src_start..src_start + len * inner]);
        }
        Ok(self.push(Op::Slice { x, axis, start, len }, out))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(Op::Reshape(x), value))
    }

    /// `y[i] = x[index[i]]` with an explicit output shape.
    pub fn gather(
        &mut self,
        x: NodeId,
        index: Arc<Vec<usize>>,
        shape: &[usize],
    ) -> Result<NodeId, GraphError> {
        let expected: usize = shape.iter().product();
        if index.len() != expected {
            return Err(shape_err(
                "gather",
                format!("index len {} vs shape {shape:?}", index.len()),
            ));
        }
        let src = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(shape_err(
                "gather",
                format!("index {bad} out of bounds for {} elements", src.len()),
            ));
        }
        let data: Vec<f64> = index.iter().map(|&i| src.data()[i]).collect();
        let out = Tensor::from_vec(shape, data)?;
        Ok(self.push(Op::Gather { x, index }, out))
    }

    /// 2D convolution: `x` is NCHW, `w` is `(out_ch, in_ch, kh, kw)`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, GraphError> {
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(shape_err("conv2d", format!("x {sx:?}, w {sw:?}")));
        }
        let (batch, c_in, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (c_out, _, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        let geom = ConvGeom::forward(h, wd, kh, kw, stride, pad)
            .ok_or_else(|| shape_err("conv2d", format!("kernel {kh}x{kw} over {h}x{wd}")))?;
        let cols = geom.h_out * geom.w_out;
        let ckk = c_in * kh * kw;
        let mut out = Tensor::zeros(&[batch, c_out, geom.h_out, geom.w_out]);
        let mut col = vec![0.0; ckk * cols];
        for b in 0..batch {
            let img = &self.value(x).data()[b * c_in * h * wd..(b + 1) * c_in * h * wd];
            im2col(img, c_in, &geom, &mut col);
            let dst = &mut out.data_mut()[b * c_out * cols..(b + 1) * c_out * cols];
            matmul_nn(self.value(w).data(), &col, c_out, ckk, cols, dst);
        }
        Ok(self.push(Op::Conv2d { x, w, geom }, out))
    }

    /// Transpose convolution: `x` is NCHW, `w` is `(in_ch, out_ch, kh, kw)`;
    /// `out_pad` disambiguates the output size per axis (must be < stride).
    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
        out_pad: (usize, usize),
    ) -> Result<NodeId, GraphError> {
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[0] {
            return Err(shape_err("transpose_conv2d", format!("x {sx:?}, w {sw:?}")));
        }
        let (batch, c_in, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (_, c_out, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        let (h2, w2) = ConvGeom::transpose_output(h, wd, kh, kw, stride, pad, out_pad)
            .ok_or_else(|| {
                shape_err(
                    "transpose_conv2d",
                    format!("kernel {kh}x{kw}, stride {stride}, out_pad {out_pad:?}"),
                )
            })?;
        // The geometry of the matching forward conv (output -> input).
        let geom = ConvGeom::forward(h2, w2, kh, kw, stride, pad)
            .ok_or_else(|| shape_err("transpose_conv2d", format!("{h2}x{w2} too small")))?;
        if geom.h_out != h || geom.w_out != wd {
            return Err(shape_err(
                "transpose_conv2d",
                format!("geometry solved to {}x{}, input is {h}x{wd}", geom.h_out, geom.w_out),
            ));
        }
        let cols = h * wd;
        let okk = c_out * kh * kw;
        let mut out = Tensor::zeros(&[batch, c_out, h2, w2]);
        let mut col = vec![0.0; okk * cols];
        for b in 0..batch {
            let img = &self.value(x).data()[b * c_in * cols..(b + 1) * c_in * cols];
            col.fill(0.0);
            matmul_tn_acc(self.value(w).data(), img, c_in, okk, cols, &mut col);
            let dst = &mut out.data_mut()[b * c_out * h2 * w2..(b + 1) * c_out * h2 * w2];
            col2im(&col, c_out, &geom, dst);
        }
        Ok(self.push(Op::ConvTranspose2d { x, w, geom }, out))
    }

    /// Adds a per-channel bias to an NCHW tensor.
    pub fn channel_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sx, sb) = (self.value(x).shape(), self.value(b).shape());
        if sx.len() != 4 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(shape_err("channel_bias", format!("x {sx:?}, b {sb:?}")));
        }
        let (batch, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let mut value = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for bi in 0..batch {
            for ch in 0..c {
                let start = (bi * c + ch) * h * w;
                for v in &mut value.data_mut()[start..start + h * w] {
                    *v += bias[ch];
                }
            }
        }
        Ok(self.push(Op::ChannelBias { x, b }, value))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(x), Tensor::scalar(m))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum::<f64>();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// L2 norm along the last axis: shape `(..., d)` becomes `(...)`.
    pub fn l2_norm_rows(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.value(x).shape().to_vec();
        if shape.is_empty() {
            return Err(shape_err("l2_norm", "rank-0 input".to_string()));
        }
        let d = *shape.last().unwrap();
        let rows = self.value(x).len() / d.max(1);
        let mut out = Tensor::zeros(&shape[..shape.len() - 1]);
        for r in 0..rows {
            let row = &self.value(x).data()[r * d..(r + 1) * d];
            out.data_mut()[r] = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        Ok(self.push(Op::L2NormRows(x), out))
    }

    /// Inverted dropout: at train time each element is kept with probability
    /// `1 - rate` and scaled by `1/(1 - rate)`; at eval time it is the
    /// identity. The mask is a pure function of `seed`.
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        seed: u64,
        train: bool,
    ) -> Result<NodeId, GraphError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(shape_err("dropout", format!("rate {rate} outside [0, 1)")));
        }
        let mut value = self.value(x).clone();
        if train && rate > 0.0 {
            let keep = 1.0 - rate;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in value.data_mut() {
                if rng.gen::<f64>() < keep {
                    *v /= keep;
                } else {
                    *v = 0.0;
                }
            }
        }
        Ok(self.push(Op::Dropout { x, rate, seed, train }, value))
    }

    /// Differentiable forward kinematics: rows of 6 values per joint map to
    /// rows of 3 coordinates per joint.
    pub fn fk(&mut self, x: NodeId, skeleton: Arc<Skeleton>) -> Result<NodeId, GraphError> {
        let shape = self.value(x).shape().to_vec();
        let lie_width = skeleton.joint_count() * crate::pose::LIE_DIMS;
        if shape.len() != 2 || shape[1] != lie_width {
            return Err(shape_err(
                "fk",
                format!("expected (batch, {lie_width}), got {shape:?}"),
            ));
        }
        let batch = shape[0];
        let coord_width = skeleton.joint_count() * crate::pose::COORD_DIMS;
        let mut out = Tensor::zeros(&[batch, coord_width]);
        for b in 0..batch {
            let row = &self.value(x).data()[b * lie_width..(b + 1) * lie_width];
            let coords = crate::pose::fk_flat(&skeleton, row);
            out.data_mut()[b * coord_width..(b + 1) * coord_width].copy_from_slice(&coords);
        }
        Ok(self.push(Op::Fk { x, skeleton }, out))
    }

    /// Errors if any node value contains NaN or infinity.
    pub fn assert_all_finite(&self) -> Result<(), GraphError> {
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.value.is_finite() {
                return Err(GraphError::NonFiniteValue {
                    node: i,
                    op: node.op.name(),
                });
            }
        }
        Ok(())
    }

    /// Accumulates `d loss / d param` into the gradient buffers of `params`
    /// for every parameter leaf on the tape. `loss` must be a single-element
    /// tensor.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet) -> Result<(), GraphError> {
        if self.value(loss).len() != 1 {
            return Err(GraphError::NotScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        let mut seed = Tensor::zeros(self.value(loss).shape());
        seed.data_mut()[0] = 1.0;
        grads[loss.0] = Some(seed);

        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Param { slot } => params.accumulate_grad(*slot, &grad),
                Op::Add(a, b, rule) => {
                    add_grad(&mut grads, a.0, &grad, self.shape_of(*a));
                    add_grad_reduced(&mut grads, b.0, &grad, self.shape_of(*b), *rule, 1.0);
                }
                Op::Sub(a, b, rule) => {
                    add_grad(&mut grads, a.0, &grad, self.shape_of(*a));
                    add_grad_reduced(&mut grads, b.0, &grad, self.shape_of(*b), *rule, -1.0);
                }
                Op::Mul(a, b, rule) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = Tensor::zeros(va.shape());
                    match rule {
                        Broadcast::Same => {
                            for i in 0..grad.len() {
                                ga.data_mut()[i] = grad.data()[i] * vb.data()[i];
                            }
                        }
                        Broadcast::Row => {
                            let d = vb.len();
                            for i in 0..grad.len() {
                                ga.data_mut()[i] = grad.data()[i] * vb.data()[i % d];
                            }
                        }
                    }
                    add_grad(&mut grads, a.0, &ga, va.shape());
                    let mut gb = Tensor::zeros(vb.shape());
                    match rule {
                        Broadcast::Same => {
                            for i in 0..grad.len() {
                                gb.data_mut()[i] = grad.data()[i] * va.data()[i];
                            }
                        }
                        Broadcast::Row => {
                            let d = vb.len();
                            for i in 0..grad.len() {
                                gb.data_mut()[i % d] += grad.data()[i] * va.data()[i];
                            }
                        }
                    }
                    add_grad(&mut grads, b.0, &gb, vb.shape());
                }
                Op::Affine { x, mul } => {
                    let mut gx = grad.clone();
                    for v in gx.data_mut() {
                        *v *= mul;
                    }
                    add_grad(&mut grads, x.0, &gx, self.shape_of(*x));
                }
                Op::Matmul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k) = (va.shape()[0], va.shape()[1]);
                    let n = vb.shape()[1];
                    let mut ga = Tensor::zeros(va.shape());
                    matmul_nt_acc(grad.data(), vb.data(), m, n, k, ga.data_mut());
                    add_grad(&mut grads, a.0, &ga, va.shape());
                    let mut gb = Tensor::zeros(vb.shape());
                    matmul_tn_acc(va.data(), grad.data(), m, k, n, gb.data_mut());
                    add_grad(&mut grads, b.0, &gb, vb.shape());
                }
                Op::Sigmoid(x) => {
                    let y = &self.nodes[id].value;
                    let mut gx = grad.clone();
                    for (g, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
                        *g *= yv * (1.0 - yv);
                    }
                    add_grad(&mut grads, x.0, &gx, self.shape_of(*x));
                }
                Op::Tanh(x) => {
                    let y = &self.nodes[id].value;
                    let mut gx = grad.clone();
                    for (g, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
                        *g *= 1.0 - yv * yv;
                    }
                    add_grad(&mut grads, x.0, &gx, self.shape_of(*x));
                }
                Op::Relu(x) => {
                    let vx = self.value(*x);
                    let mut gx = grad.clone();
                    for (g, &xv) in gx.data_mut().iter_mut().zip(vx.data()) {
                        if xv <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    add_grad(&mut grads, x.0, &gx, self.shape_of(*x));
                }
                Op::Softmax { x, axis } => {
                    let y = &self.nodes[id].value;
                    let (outer, mid, inner) = lane_split(y.shape(), *axis);
                    let mut gx = Tensor::zeros(y.shape());
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * mid + a) * inner + i;
                            let mut dot = 0.0;
                            for a in 0..mid {
                                dot += grad.data()[at(a)] * y.data()[at(a)];
                            }
                            for a in 0..mid {
                                let idx = at(a);
                                gx.data_mut()[idx] = y.data()[idx] * (grad.data()[idx] - dot);
                            }
                        }
                    }
                    add_grad(&mut grads, x.0, &gx, self.shape_of(*x));
                }
                Op::Concat { parts, axis } => {
                    let out_shape = self.nodes[id].value.shape().to_vec();
                    let (outer, total_mid, inner) = lane_split(&out_shape, *axis);
                    let mut offset = 0;
                    for &p in parts {
                        let ps = self.value(p).shape().to_vec();
                        let mid = ps[*axis];
                        let mut gp = Tensor::zeros(&ps);
                        let block = mid * inner;
                        for o in 0..outer {
                            let src_start = (o * total_mid + offset) * inner;
                            let dst_start = o * block;
                            gp.data_mut()[dst_start..dst_start + block]
                                .copy_from_slice(&grad.data()[src_start..src_start + block]);
                        }
                        add_grad(&mut grads, p.0, &gp, &ps);
                        offset += mid;
                    }
                }
                Op::Slice { x, axis, start, len } => {
                    let xs = self.value(*x).shape().to_vec();
                    let (outer, mid, inner) = lane_split(&xs, *axis);
                    let mut gx = Tensor::zeros(&xs);
                    for o in 0..outer {
                        let dst_start = (o * mid + start) * inner;
                        let src_start = o * len * inner;
                        gx.data_mut()[dst_start..dst_start + len * inner]
                            .copy_from_slice(&grad.data()[src_start..src_start + len * inner]);
                    }
                    add_grad(&mut grads, x.0, &gx, &xs);
                }
                Op::Reshape(x) => {
                    let xs = self.value(*x).shape().to_vec();
                    let gx = grad.reshaped(&xs).expect("reshape grad");
                    add_grad(&mut grads, x.0, &gx, &xs);
                }
                Op::Gather { x, index } => {
                    let xs = self.value(*x).shape().to_vec();
                    let mut gx = Tensor::zeros(&xs);
                    for (out_i, &src_i) in index.iter().enumerate() {
                        gx.data_mut()[src_i] += grad.data()[out_i];
                    }
                    add_grad(&mut grads, x.0, &gx, &xs);
                }
                Op::Conv2d { x, w, geom } => {
                    let (vx, vw) = (self.value(*x), self.value(*w));
                    let (batch, c_in) = (vx.shape()[0], vx.shape()[1]);
                    let c_out = vw.shape()[0];
                    let (kh, kw) = (vw.shape()[2], vw.shape()[3]);
                    let ckk = c_in * kh * kw;
                    let cols = geom.h_out * geom.w_out;
                    let img_len = c_in * geom.h_in * geom.w_in;
                    let mut gx = Tensor::zeros(vx.shape());
                    let mut gw = Tensor::zeros(vw.shape());
                    let mut col = vec![0.0; ckk * cols];
                    let mut gcol = vec![0.0; ckk * cols];
                    let mut gimg = vec![0.0; img_len];
                    for b in 0..batch {
                        let img = &vx.data()[b * img_len..(b + 1) * img_len];
                        let gout = &grad.data()[b * c_out * cols..(b + 1) * c_out * cols];
                        im2col(img, c_in, geom, &mut col);
                        matmul_nt_acc(gout, &col, c_out, cols, ckk, gw.data_mut());
                        gcol.fill(0.0);
                        matmul_tn_acc(vw.data(), gout, c_out, ckk, cols, &mut gcol);
                        col2im(&gcol, c_in, geom, &mut gimg);
                        for (dst, src) in gx.data_mut()[b * img_len..(b + 1) * img_len]
                            .iter_mut()
                            .zip(&gimg)
                        {
                            *dst += src;
                        }
                    }
                    add_grad(&mut grads, x.0, &gx, vx.shape());
                    add_grad(&mut grads, w.0, &gw, vw.shape());
                }
                Op::ConvTranspose2d { x, w, geom } => {
                    let (vx, vw) = (self.value(*x), self.value(*w));
                    let (batch, c_in) = (vx.shape()[0], vx.shape()[1]);
                    let c_out = vw.shape()[1];
                    let (kh, kw) = (vw.shape()[2], vw.shape()[3]);
                    let okk = c_out * kh * kw;
                    let cols = geom.h_out * geom.w_out; // input spatial size
                    let out_len = c_out * geom.h_in * geom.w_in;
                    let mut gx = Tensor::zeros(vx.shape());
                    let mut gw = Tensor::zeros(vw.shape());
                    let mut gcol = vec![0.0; okk * cols];
                    for b in 0..batch {
                        let img = &vx.data()[b * c_in * cols..(b + 1) * c_in * cols];
                        let gout = &grad.data()[b * out_len..(b + 1) * out_len];
                        im2col(gout, c_out, geom, &mut gcol);
                        // x grad: w (c_in x okk) * gcol (okk x cols).
                        let gx_b = &mut gx.data_mut()[b * c_in * cols..(b + 1) * c_in * cols];
                        let mut tmp = vec![0.0; c_in * cols];
                        matmul_nn(vw.data(), &gcol, c_in, okk, cols, &mut tmp);
                        for (dst, src) in gx_b.iter_mut().zip(&tmp) {
                            *dst += src;
                        }
                        // w grad: img (c_in x cols) * gcol^T -> (c_in x okk).
                        matmul_nt_acc(img, &gcol, c_in, cols, okk, gw.data_mut());
                    }
                    add_grad(&mut grads, x.0, &gx, vx.shape());
                    add_grad(&mut grads, w.0, &gw, vw.shape());
                }
                Op::ChannelBias { x, b } => {
                    add_grad(&mut grads, x.0, &grad, self.shape_of(*x));
                    let sx = self.value(*x).shape();
                    let (batch, c, hw) = (sx[0], sx[1], sx[2] * sx[3]);
                    let mut gb = Tensor::zeros(&[c]);
                    for bi in 0..batch {
                        for ch in 0..c {
                            let start = (bi * c + ch) * hw;
                            gb.data_mut()[ch] += grad.data()[start..start + hw].iter().sum::<f64>();
                        }
                    }
                    add_grad(&mut grads, b.0, &gb, &[c]);
                }
                Op::Mean(x) => {
                    let vx = self.value(*x);
                    let g = grad.data()[0] / vx.len() as f64;
                    let mut gx = Tensor::zeros(vx.shape());
                    gx.data_mut().fill(g);
                    add_grad(&mut grads, x.0, &gx, vx.shape());
                }
                Op::Sum(x) => {
                    let vx = self.value(*x);
                    let mut gx = Tensor::zeros(vx.shape());
                    gx.data_mut().fill(grad.data()[0]);
                    add_grad(&mut grads, x.0, &gx, vx.shape());
                }
                Op::L2NormRows(x) => {
                    let vx = self.value(*x);
                    let y = &self.nodes[id].value;
                    let d = *vx.shape().last().unwrap();
                    let mut gx = Tensor::zeros(vx.shape());
                    for r in 0..y.len() {
                        let norm = y.data()[r];
                        if norm == 0.0 {
                            continue; // subgradient 0 at the origin
                        }
                        let scale = grad.data()[r] / norm;
                        let row = &vx.data()[r * d..(r + 1) * d];
                        for (g, &xv) in gx.data_mut()[r * d..(r + 1) * d].iter_mut().zip(row) {
                            *g = scale * xv;
                        }
                    }
                    add_grad(&mut grads, x.0, &gx, vx.shape());
                }
                Op::Dropout { x, rate, seed, train } => {
                    let mut gx = grad.clone();
                    if *train && *rate > 0.0 {
                        let keep = 1.0 - rate;
                        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                        for g in gx.data_mut() {
                            if rng.gen::<f64>() < keep {
                                *g /= keep;
                            } else {
                                *g = 0.0;
                            }
                        }
                    }
                    add_grad(&mut grads, x.0, &gx, self.shape_of(*x));
                }
                Op::Fk { x, skeleton } => {
                    let vx = self.value(*x);
                    let lie_width = skeleton.joint_count() * crate::pose::LIE_DIMS;
                    let coord_width = skeleton.joint_count() * crate::pose::COORD_DIMS;
                    let batch = vx.shape()[0];
                    let mut gx = Tensor::zeros(vx.shape());
                    for b in 0..batch {
                        let row = &vx.data()[b * lie_width..(b + 1) * lie_width];
                        let upstream = &grad.data()[b * coord_width..(b + 1) * coord_width];
                        let g = crate::pose::fk_pullback(skeleton, row, upstream);
                        gx.data_mut()[b * lie_width..(b + 1) * lie_width].copy_from_slice(&g);
                    }
                    add_grad(&mut grads, x.0, &gx, vx.shape());
                }
            }
        }
        Ok(())
    }

    fn shape_of(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }
}

/// `(product of dims before axis, dim at axis, product after)`.
fn lane_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}

fn binary_forward(
    a: &Tensor,
    b: &Tensor,
    rule: Broadcast,
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    let mut out = a.clone();
    match rule {
        Broadcast::Same => {
            for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
                *o = f(*o, bv);
            }
        }
        Broadcast::Row => {
            let d = b.len();
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                *o = f(*o, b.data()[i % d]);
            }
        }
    }
    out
}

fn add_grad(grads: &mut [Option<Tensor>], idx: usize, contrib: &Tensor, shape: &[usize]) {
    debug_assert_eq!(contrib.shape(), shape);
    match &mut grads[idx] {
        Some(acc) => {
            for (a, &c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                *a += c;
            }
        }
        slot => *slot = Some(contrib.clone()),
    }
}

/// Adds an upstream gradient to `idx`, summing over broadcast copies when
/// the operand was row-broadcast (with an optional sign for subtraction).
fn add_grad_reduced(
    grads: &mut [Option<Tensor>],
    idx: usize,
    grad: &Tensor,
    shape: &[usize],
    rule: Broadcast,
    sign: f64,
) {
    match rule {
        Broadcast::Same => {
            if sign == 1.0 {
                add_grad(grads, idx, grad, shape);
            } else {
                let mut g = grad.clone();
                for v in g.data_mut() {
                    *v = -*v;
                }
                add_grad(grads, idx, &g, shape);
            }
        }
        Broadcast::Row => {
            let d: usize = shape.iter().product();
            let mut g = Tensor::zeros(shape);
            for (i, &v) in grad.data().iter().enumerate() {
                g.data_mut()[i % d] += sign * v;
            }
            add_grad(grads, idx, &g, shape);
        }
    }
}

/// Central finite difference of `eval` with respect to one scalar component
/// of a named parameter: `(f(p + h) - f(p - h)) / 2h`. `eval` must rebuild
/// its graph from the parameter set it receives.
pub fn central_difference<F>(
    params: &mut ParamSet,
    name: &str,
    component: usize,
    h: f64,
    mut eval: F,
) -> f64
where
    F: FnMut(&ParamSet) -> f64,
{
    let original = params.value(name).expect("param exists").data()[component];
    params.value_mut(name).unwrap().data_mut()[component] = original + h;
    let plus = eval(params);
    params.value_mut(name).unwrap().data_mut()[component] = original - h;
    let minus = eval(params);
    params.value_mut(name).unwrap().data_mut()[component] = original;
    (plus - minus) / (2.0 * h)
}
