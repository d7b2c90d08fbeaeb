//! The PoseMoNet networks: the Pose Lifting Network (PLN) that lifts 2D
//! keypoint sequences to per-frame 3D poses, the Motion Generation Network
//! (MGN) that decodes future motion as residuals from a seed pose, the
//! dual-path Global Refinement (GR) module, the mixture-of-experts
//! Self-Projection (SP) output head shared by PLN and MGN, the pose-grid
//! codec, and every loss term.
//!
//! All networks are expressed on the [`crate::autodiff`] tape. A "frame"
//! throughout this module is the dual pose representation of one time step:
//! 48 root-relative coordinates followed by 96 Lie-algebra values, 144
//! numbers total. Batched sequences are stored time-major: a tensor of
//! shape `(steps * batch, 144)` holds all batch rows for step 0, then all
//! rows for step 1, and so on, which lets recurrent loops slice one step as
//! a contiguous block.

use crate::autodiff::{Graph, GraphError, NodeId, ParamSet, Tensor};
use crate::config::{Config, GrMode};
use crate::pose::{COORD_DIMS, LIE_DIMS};
use crate::skeleton::Skeleton;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

/// Experts in the Self-Projection mixture.
pub const EXPERTS: usize = 5;
/// Channels of the pose grid: 3 coordinate + 6 Lie values per joint.
pub const GRID_CHANNELS: usize = COORD_DIMS + LIE_DIMS;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("BAD_NORMALIZATION: keypoint value {value} outside [-1.5, 1.5] (unnormalized input?)")]
    BadNormalization { value: f64 },
    #[error("LENGTH_MISMATCH: {0}")]
    LengthMismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Train/eval switch plus the seed that derives every dropout mask of one
/// forward pass.
#[derive(Debug, Clone, Copy)]
pub struct RunMode {
    pub train: bool,
    pub dropout_seed: u64,
}

impl RunMode {
    pub fn train(dropout_seed: u64) -> Self {
        RunMode { train: true, dropout_seed }
    }

    pub fn eval() -> Self {
        RunMode { train: false, dropout_seed: 0 }
    }
}

/// Hands out one derived seed per dropout site (splitmix64 sequence).
struct SeedStream {
    state: u64,
}

impl SeedStream {
    fn new(base: u64) -> Self {
        SeedStream { state: base }
    }

    fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound).collect();
    Tensor::from_vec(shape, data).expect("shape/data agree")
}

/// A named dense layer: `y = x W + b`.
struct Linear {
    w: String,
    b: String,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    fn new(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: format!("{prefix}.w"),
            b: format!("{prefix}.b"),
            in_dim,
            out_dim,
        }
    }

    /// `zero` initializes weight and bias to zero (used for residual delta
    /// heads so untrained residual branches are exact identities).
    fn define(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng, zero: bool) -> Result<(), GraphError> {
        let bound = if zero { 0.0 } else { 1.0 / (self.in_dim as f64).sqrt() };
        params.define(&self.w, uniform_tensor(rng, &[self.in_dim, self.out_dim], bound))?;
        params.define(&self.b, uniform_tensor(rng, &[self.out_dim], bound))
    }

    fn apply(&self, g: &mut Graph, ps: &ParamSet, x: NodeId) -> Result<NodeId, GraphError> {
        let w = g.param(ps, &self.w)?;
        let b = g.param(ps, &self.b)?;
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }
}

/// One GRU cell with combined gate weights, gate order reset | update | new:
///
/// ```text
/// r = sigmoid(x Wi_r + bi_r + h Wh_r + bh_r)
/// z = sigmoid(x Wi_z + bi_z + h Wh_z + bh_z)
/// n = tanh(x Wi_n + bi_n + r o (h Wh_n + bh_n))
/// h' = (1 - z) o n + z o h
/// ```
struct GruCell {
    wi: String,
    wh: String,
    bi: String,
    bh: String,
    in_dim: usize,
    hidden: usize,
}

impl GruCell {
    fn new(prefix: &str, in_dim: usize, hidden: usize) -> Self {
        GruCell {
            wi: format!("{prefix}.wi"),
            wh: format!("{prefix}.wh"),
            bi: format!("{prefix}.bi"),
            bh: format!("{prefix}.bh"),
            in_dim,
            hidden,
        }
    }

    fn define(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<(), GraphError> {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        params.define(&self.wi, uniform_tensor(rng, &[self.in_dim, 3 * self.hidden], bound))?;
        params.define(&self.wh, uniform_tensor(rng, &[self.hidden, 3 * self.hidden], bound))?;
        params.define(&self.bi, uniform_tensor(rng, &[3 * self.hidden], bound))?;
        params.define(&self.bh, uniform_tensor(rng, &[3 * self.hidden], bound))
    }

    fn step(&self, g: &mut Graph, ps: &ParamSet, x: NodeId, h: NodeId) -> Result<NodeId, GraphError> {
        let hd = self.hidden;
        let wi = g.param(ps, &self.wi)?;
        let wh = g.param(ps, &self.wh)?;
        let bi = g.param(ps, &self.bi)?;
        let bh = g.param(ps, &self.bh)?;
        let xi = g.matmul(x, wi)?;
        let xi = g.add(xi, bi)?;
        let hh = g.matmul(h, wh)?;
        let hh = g.add(hh, bh)?;
        let xr = g.slice(xi, 1, 0, hd)?;
        let xz = g.slice(xi, 1, hd, hd)?;
        let xn = g.slice(xi, 1, 2 * hd, hd)?;
        let hr = g.slice(hh, 1, 0, hd)?;
        let hz = g.slice(hh, 1, hd, hd)?;
        let hn = g.slice(hh, 1, 2 * hd, hd)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let rn = g.mul(r, hn)?;
        let n = g.add(xn, rn)?;
        let n = g.tanh(n);
        // (1 - z) o n + z o h, computed as n + z o (h - n).
        let hmn = g.sub(h, n)?;
        let zd = g.mul(z, hmn)?;
        g.add(n, zd)
    }
}

/// Output of one Self-Projection application.
struct SpOut {
    coord: NodeId,
    lie: NodeId,
    gate_coord: NodeId,
    gate_lie: NodeId,
}

/// The mixture-of-experts Self-Projection head: a shared ReLU layer feeds
/// 5 expert paths; two softmax gates (one per pose representation) mix the
/// experts; two linear output heads emit the coordinate and Lie poses with
/// no output activation.
struct SelfProjection {
    shared: Linear,
    experts: Vec<Linear>,
    gate_coord: Linear,
    gate_lie: Linear,
    coord_head: Linear,
    lie_head: Linear,
    mix_dim: usize,
}

impl SelfProjection {
    fn new(prefix: &str, in_dim: usize, mix_dim: usize, coord_width: usize, lie_width: usize) -> Self {
        SelfProjection {
            shared: Linear::new(&format!("{prefix}.shared"), in_dim, mix_dim),
            experts: (0..EXPERTS)
                .map(|i| Linear::new(&format!("{prefix}.expert{i}"), mix_dim, mix_dim))
                .collect(),
            gate_coord: Linear::new(&format!("{prefix}.gate_coord"), in_dim, EXPERTS),
            gate_lie: Linear::new(&format!("{prefix}.gate_lie"), in_dim, EXPERTS),
            coord_head: Linear::new(&format!("{prefix}.coord"), mix_dim, coord_width),
            lie_head: Linear::new(&format!("{prefix}.lie"), mix_dim, lie_width),
            mix_dim,
        }
    }

    fn define(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng, zero_heads: bool) -> Result<(), GraphError> {
        self.shared.define(params, rng, false)?;
        for e in &self.experts {
            e.define(params, rng, false)?;
        }
        self.gate_coord.define(params, rng, false)?;
        self.gate_lie.define(params, rng, false)?;
        self.coord_head.define(params, rng, zero_heads)?;
        self.lie_head.define(params, rng, zero_heads)
    }

    fn apply(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        x: NodeId,
        dropout: f64,
        mode: RunMode,
        seeds: &mut SeedStream,
    ) -> Result<SpOut, GraphError> {
        let s = self.shared.apply(g, ps, x)?;
        let s = g.relu(s);
        let s = g.dropout(s, dropout, seeds.next(), mode.train)?;
        let mut experts = Vec::with_capacity(EXPERTS);
        for e in &self.experts {
            let h = e.apply(g, ps, s)?;
            let h = g.relu(h);
            let h = g.dropout(h, dropout, seeds.next(), mode.train)?;
            experts.push(h);
        }
        let gc = self.gate_coord.apply(g, ps, x)?;
        let gc = g.softmax(gc, 1)?;
        let gl = self.gate_lie.apply(g, ps, x)?;
        let gl = g.softmax(gl, 1)?;
        // Broadcast each per-row gate weight across the expert features via
        // a rank-1 outer product with a row of ones.
        let ones = g.input(Tensor::from_fn(&[1, self.mix_dim], || 1.0));
        let mix = |g: &mut Graph, gate: NodeId| -> Result<NodeId, GraphError> {
            let mut acc: Option<NodeId> = None;
            for (i, &e) in experts.iter().enumerate() {
                let gi = g.slice(gate, 1, i, 1)?;
                let gi = g.matmul(gi, ones)?;
                let weighted = g.mul(e, gi)?;
                acc = Some(match acc {
                    Some(a) => g.add(a, weighted)?,
                    None => weighted,
                });
            }
            Ok(acc.expect("at least one expert"))
        };
        let mix_c = mix(g, gc)?;
        let mix_l = mix(g, gl)?;
        Ok(SpOut {
            coord: self.coord_head.apply(g, ps, mix_c)?,
            lie: self.lie_head.apply(g, ps, mix_l)?,
            gate_coord: gc,
            gate_lie: gl,
        })
    }
}

/// A 2D convolution layer spec for the ConvED path.
struct ConvSpec {
    w: String,
    b: String,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    transpose: bool,
}

impl ConvSpec {
    fn conv(prefix: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        ConvSpec {
            w: format!("{prefix}.w"),
            b: format!("{prefix}.b"),
            c_in,
            c_out,
            k,
            stride,
            transpose: false,
        }
    }

    fn tconv(prefix: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        ConvSpec {
            transpose: true,
            ..Self::conv(prefix, c_in, c_out, k, stride)
        }
    }

    fn define(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng, zero: bool) -> Result<(), GraphError> {
        let bound = if zero {
            0.0
        } else {
            1.0 / ((self.c_in * self.k * self.k) as f64).sqrt()
        };
        let shape = if self.transpose {
            [self.c_in, self.c_out, self.k, self.k]
        } else {
            [self.c_out, self.c_in, self.k, self.k]
        };
        params.define(&self.w, uniform_tensor(rng, &shape, bound))?;
        params.define(&self.b, uniform_tensor(rng, &[self.c_out], bound))
    }

    fn apply(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        x: NodeId,
        out_pad: (usize, usize),
    ) -> Result<NodeId, GraphError> {
        let w = g.param(ps, &self.w)?;
        let b = g.param(ps, &self.b)?;
        let y = if self.transpose {
            g.conv_transpose2d(x, w, self.stride, 1, out_pad)?
        } else {
            g.conv2d(x, w, self.stride, 1)?
        };
        g.channel_bias(y, b)
    }
}

/// Position of the (joint, channel) pair inside a 144-value frame row.
fn grid_col(joints: usize, j: usize, d: usize) -> usize {
    if d < COORD_DIMS {
        j * COORD_DIMS + d
    } else {
        joints * COORD_DIMS + j * LIE_DIMS + (d - COORD_DIMS)
    }
}

/// Gather index mapping a time-major frame tensor `(frames * batch, dims)`
/// onto the NCHW pose grid `(batch, 9, joints, frames)`.
pub fn pose_grid_index(joints: usize, batch: usize, frames: usize) -> Vec<usize> {
    let dims = joints * GRID_CHANNELS;
    let mut index = Vec::with_capacity(batch * GRID_CHANNELS * joints * frames);
    for b in 0..batch {
        for d in 0..GRID_CHANNELS {
            for j in 0..joints {
                for t in 0..frames {
                    index.push((t * batch + b) * dims + grid_col(joints, j, d));
                }
            }
        }
    }
    index
}

/// Inverse of [`pose_grid_index`]: grid back to time-major frames.
pub fn pose_grid_inverse_index(joints: usize, batch: usize, frames: usize) -> Vec<usize> {
    let dims = joints * GRID_CHANNELS;
    let mut index = Vec::with_capacity(frames * batch * dims);
    for t in 0..frames {
        for b in 0..batch {
            for c in 0..dims {
                let (j, d) = if c < joints * COORD_DIMS {
                    (c / COORD_DIMS, c % COORD_DIMS)
                } else {
                    let r = c - joints * COORD_DIMS;
                    (r / LIE_DIMS, COORD_DIMS + r % LIE_DIMS)
                };
                index.push(((b * GRID_CHANNELS + d) * joints + j) * frames + t);
            }
        }
    }
    index
}

/// The image-like `(joints, frames, 9)` layout of a pose trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGrid {
    pub grid: Tensor,
}

/// Packs a `(frames, joints * 9)` dual-representation sequence into a
/// `(joints, frames, 9)` grid. Exact inverse of [`pose_grid_decode`].
pub fn pose_grid_encode(frames: &Tensor, joints: usize) -> Result<PoseGrid, ModelError> {
    let dims = joints * GRID_CHANNELS;
    if frames.rank() != 2 || frames.shape()[1] != dims {
        return Err(ModelError::LengthMismatch(format!(
            "expected (steps, {dims}) frame tensor, got {:?}",
            frames.shape()
        )));
    }
    let n = frames.shape()[0];
    let mut grid = Tensor::zeros(&[joints, n, GRID_CHANNELS]);
    for j in 0..joints {
        for t in 0..n {
            for d in 0..GRID_CHANNELS {
                grid.data_mut()[(j * n + t) * GRID_CHANNELS + d] =
                    frames.data()[t * dims + grid_col(joints, j, d)];
            }
        }
    }
    Ok(PoseGrid { grid })
}

pub fn pose_grid_decode(grid: &PoseGrid, joints: usize) -> Result<Tensor, ModelError> {
    let shape = grid.grid.shape();
    if shape.len() != 3 || shape[0] != joints || shape[2] != GRID_CHANNELS {
        return Err(ModelError::LengthMismatch(format!(
            "expected ({joints}, steps, {GRID_CHANNELS}) grid, got {shape:?}"
        )));
    }
    let n = shape[1];
    let dims = joints * GRID_CHANNELS;
    let mut frames = Tensor::zeros(&[n, dims]);
    for j in 0..joints {
        for t in 0..n {
            for d in 0..GRID_CHANNELS {
                frames.data_mut()[t * dims + grid_col(joints, j, d)] =
                    grid.grid.data()[(j * n + t) * GRID_CHANNELS + d];
            }
        }
    }
    Ok(frames)
}

/// All node handles a caller needs after one forward pass.
#[derive(Debug)]
pub struct Forward {
    pub batch: usize,
    pub past_steps: usize,
    pub future_steps: usize,
    /// PLN estimates, `(past * batch, dims)`.
    pub pln_frames: NodeId,
    /// MGN predictions, `(future * batch, dims)`; absent under `no_mgn` or
    /// a zero horizon.
    pub mgn_frames: Option<NodeId>,
    /// PLN + MGN concatenation before refinement.
    pub trajectory: NodeId,
    /// GR output; absent under `no_gr`.
    pub refined: Option<NodeId>,
    /// Per-layer (forward, backward) final encoder states, each `(batch, hidden)`.
    pub latent: Vec<(NodeId, NodeId)>,
    /// Softmax gate outputs of every SP application (for introspection).
    pub gates: Vec<NodeId>,
}

impl Forward {
    /// The frames the pipeline ultimately reports: refined when GR ran.
    pub fn output(&self) -> NodeId {
        self.refined.unwrap_or(self.trajectory)
    }
}

/// Scalar loss nodes of one training step.
pub struct Losses {
    pub total: NodeId,
    pub pln: NodeId,
    pub mgn: Option<NodeId>,
    pub gr: Option<NodeId>,
    pub omega: NodeId,
}

/// The full model: specs for every layer, bound to a skeleton.
pub struct PoseMoNet {
    config: Config,
    skeleton: Arc<Skeleton>,
    joints: usize,
    coord_width: usize,
    lie_width: usize,
    dims: usize,
    kp_width: usize,
    ffnn1: Linear,
    ffnn2: Linear,
    /// Per layer: [forward, backward] cells.
    pln_gru: Vec<[GruCell; 2]>,
    pln_sp: SelfProjection,
    mgn_gru: Vec<GruCell>,
    mgn_sp: SelfProjection,
    gr_gru: GruCell,
    gr_head: Linear,
    gr_convs: [ConvSpec; 3],
    gr_tconvs: [ConvSpec; 3],
    alpha: String,
}

impl PoseMoNet {
    pub fn new(config: Config, skeleton: Arc<Skeleton>) -> Self {
        let joints = skeleton.joint_count();
        let coord_width = joints * COORD_DIMS;
        let lie_width = joints * LIE_DIMS;
        let dims = coord_width + lie_width;
        let kp_width = joints * 2;
        let hidden = config.hidden;
        let pln_gru = (0..config.layers)
            .map(|l| {
                let in_dim = if l == 0 { hidden } else { 2 * hidden };
                [
                    GruCell::new(&format!("pln.gru{l}.fwd"), in_dim, hidden),
                    GruCell::new(&format!("pln.gru{l}.bwd"), in_dim, hidden),
                ]
            })
            .collect();
        let mgn_gru = (0..config.layers)
            .map(|l| {
                let in_dim = if l == 0 { dims } else { hidden };
                GruCell::new(&format!("mgn.gru{l}"), in_dim, hidden)
            })
            .collect();
        PoseMoNet {
            ffnn1: Linear::new("pln.ffnn1", kp_width, hidden),
            ffnn2: Linear::new("pln.ffnn2", hidden, hidden),
            pln_gru,
            pln_sp: SelfProjection::new("pln.sp", 2 * hidden, hidden, coord_width, lie_width),
            mgn_gru,
            mgn_sp: SelfProjection::new("mgn.sp", hidden, hidden, coord_width, lie_width),
            gr_gru: GruCell::new("gr.gru", dims, hidden),
            gr_head: Linear::new("gr.head", hidden, dims),
            gr_convs: [
                ConvSpec::conv("gr.conv0", GRID_CHANNELS, 32, 3, 1),
                ConvSpec::conv("gr.conv1", 32, 64, 3, 2),
                ConvSpec::conv("gr.conv2", 64, 64, 3, 2),
            ],
            gr_tconvs: [
                ConvSpec::tconv("gr.tconv0", 64, 64, 3, 2),
                ConvSpec::tconv("gr.tconv1", 64, 32, 3, 2),
                ConvSpec::tconv("gr.tconv2", 32, GRID_CHANNELS, 3, 1),
            ],
            alpha: "gr.alpha".to_string(),
            config,
            skeleton,
            joints,
            coord_width,
            lie_width,
            dims,
            kp_width,
        }
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn skeleton(&self) -> &Arc<Skeleton> {
        &self.skeleton
    }

    /// Width of one dual-representation frame row.
    pub fn frame_dims(&self) -> usize {
        self.dims
    }

    pub fn keypoint_dims(&self) -> usize {
        self.kp_width
    }

    /// Shape of the latent sequence representation per sample.
    pub fn latent_dims(&self) -> (usize, usize, usize) {
        (self.config.layers, self.config.hidden, 2)
    }

    /// Creates and initializes every parameter. Deterministic in
    /// `config.seed`; residual delta heads (MGN's SP output layers, the
    /// GRU-R head, the last ConvED layer) start at zero so the untrained
    /// residual branches are exact identities.
    pub fn init_params(&self) -> Result<ParamSet, GraphError> {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        self.ffnn1.define(&mut params, &mut rng, false)?;
        self.ffnn2.define(&mut params, &mut rng, false)?;
        for pair in &self.pln_gru {
            pair[0].define(&mut params, &mut rng)?;
            pair[1].define(&mut params, &mut rng)?;
        }
        self.pln_sp.define(&mut params, &mut rng, false)?;
        if !self.config.no_mgn {
            for cell in &self.mgn_gru {
                cell.define(&mut params, &mut rng)?;
            }
            self.mgn_sp.define(&mut params, &mut rng, true)?;
        }
        if !self.config.no_gr {
            self.gr_gru.define(&mut params, &mut rng)?;
            self.gr_head.define(&mut params, &mut rng, true)?;
            for c in &self.gr_convs {
                c.define(&mut params, &mut rng, false)?;
            }
            for (i, c) in self.gr_tconvs.iter().enumerate() {
                // The final transpose conv is the ConvED delta head.
                c.define(&mut params, &mut rng, i == 2)?;
            }
            params.define(&self.alpha, Tensor::zeros(&[self.dims]))?;
        }
        Ok(params)
    }

    /// Runs PLN, MGN (`future_steps` may exceed the training horizon), and
    /// GR. `kp2d` is time-major `(past * batch, joints * 2)` with values
    /// normalized to image coordinates in [-1, 1].
    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        kp2d: &Tensor,
        batch: usize,
        future_steps: usize,
        mode: RunMode,
    ) -> Result<Forward, ModelError> {
        if kp2d.rank() != 2 || kp2d.shape()[1] != self.kp_width || kp2d.shape()[0] % batch != 0 {
            return Err(ModelError::LengthMismatch(format!(
                "expected (past * {batch}, {}) keypoints, got {:?}",
                self.kp_width,
                kp2d.shape()
            )));
        }
        if let Some(&bad) = kp2d.data().iter().find(|v| !v.is_finite() || v.abs() > 1.5) {
            return Err(ModelError::BadNormalization { value: bad });
        }
        let past = kp2d.shape()[0] / batch;
        let hidden = self.config.hidden;
        let rate = self.config.dropout;
        let mut seeds = SeedStream::new(mode.dropout_seed);
        let mut gates = Vec::new();

        // FFNN over all frames at once.
        let x = g.input(kp2d.clone());
        let h = self.ffnn1.apply(g, ps, x)?;
        let h = g.relu(h);
        let h = g.dropout(h, rate, seeds.next(), mode.train)?;
        let h = self.ffnn2.apply(g, ps, h)?;
        let h = g.relu(h);
        let mut seq = g.dropout(h, rate, seeds.next(), mode.train)?;

        // Bidirectional GRU stack.
        let zeros_h = g.input(Tensor::zeros(&[batch, hidden]));
        let mut latent = Vec::with_capacity(self.config.layers);
        for (l, pair) in self.pln_gru.iter().enumerate() {
            let mut fwd_states = Vec::with_capacity(past);
            let mut h = zeros_h;
            for t in 0..past {
                let xt = g.slice(seq, 0, t * batch, batch)?;
                h = pair[0].step(g, ps, xt, h)?;
                fwd_states.push(h);
            }
            let fwd_last = h;
            let mut bwd_states = vec![zeros_h; past];
            let mut h = zeros_h;
            for t in (0..past).rev() {
                let xt = g.slice(seq, 0, t * batch, batch)?;
                h = pair[1].step(g, ps, xt, h)?;
                bwd_states[t] = h;
            }
            let bwd_last = h;
            latent.push((fwd_last, bwd_last));
            let mut steps = Vec::with_capacity(past);
            for t in 0..past {
                steps.push(g.concat(&[fwd_states[t], bwd_states[t]], 1)?);
            }
            seq = g.concat(&steps, 0)?;
            if l + 1 < self.config.layers {
                seq = g.dropout(seq, rate, seeds.next(), mode.train)?;
            }
        }

        // Self-Projection over every encoder output frame.
        let sp = self.pln_sp.apply(g, ps, seq, rate, mode, &mut seeds)?;
        gates.push(sp.gate_coord);
        gates.push(sp.gate_lie);
        let pln_frames = g.concat(&[sp.coord, sp.lie], 1)?;

        // Autoregressive MGN decoding from the seed pose.
        let mgn_frames = if self.config.no_mgn || future_steps == 0 {
            None
        } else {
            let mut h: Vec<NodeId> = latent.iter().map(|&(f, b)| g.add(f, b)).collect::<Result<_, _>>()?;
            let seed = g.slice(pln_frames, 0, (past - 1) * batch, batch)?;
            let mut coord = g.slice(seed, 1, 0, self.coord_width)?;
            let mut lie = g.slice(seed, 1, self.coord_width, self.lie_width)?;
            let mut outs = Vec::with_capacity(future_steps);
            for _ in 0..future_steps {
                let mut x = g.concat(&[coord, lie], 1)?;
                for (l, cell) in self.mgn_gru.iter().enumerate() {
                    h[l] = cell.step(g, ps, x, h[l])?;
                    x = h[l];
                    if l + 1 < self.mgn_gru.len() {
                        x = g.dropout(x, rate, seeds.next(), mode.train)?;
                    }
                }
                let sp = self.mgn_sp.apply(g, ps, x, rate, mode, &mut seeds)?;
                gates.push(sp.gate_coord);
                gates.push(sp.gate_lie);
                coord = g.add(coord, sp.coord)?;
                lie = g.add(lie, sp.lie)?;
                outs.push(g.concat(&[coord, lie], 1)?);
            }
            Some(g.concat(&outs, 0)?)
        };

        let trajectory = match mgn_frames {
            Some(m) => g.concat(&[pln_frames, m], 0)?,
            None => pln_frames,
        };
        let total_steps = past + if mgn_frames.is_some() { future_steps } else { 0 };

        let refined = if self.config.no_gr {
            None
        } else {
            Some(self.refine(g, ps, trajectory, batch, total_steps)?)
        };

        Ok(Forward {
            batch,
            past_steps: past,
            future_steps: if mgn_frames.is_some() { future_steps } else { 0 },
            pln_frames,
            mgn_frames,
            trajectory,
            refined,
            latent,
            gates,
        })
    }

    /// Dual-path refinement over the full trajectory.
    fn refine(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        traj: NodeId,
        batch: usize,
        steps: usize,
    ) -> Result<NodeId, ModelError> {
        let mode = self.config.gr_mode;
        let needs_gru = !matches!(mode, GrMode::Conved);
        let needs_conv = !matches!(mode, GrMode::Gru);

        let gru_out = if needs_gru {
            let mut h = g.input(Tensor::zeros(&[batch, self.config.hidden]));
            let mut states = Vec::with_capacity(steps);
            for t in 0..steps {
                let xt = g.slice(traj, 0, t * batch, batch)?;
                h = self.gr_gru.step(g, ps, xt, h)?;
                states.push(h);
            }
            let hs = g.concat(&states, 0)?;
            let delta = self.gr_head.apply(g, ps, hs)?;
            Some(g.add(traj, delta)?)
        } else {
            None
        };

        let conv_out = if needs_conv {
            let grid_shape = [batch, GRID_CHANNELS, self.joints, steps];
            let fwd_index = Arc::new(pose_grid_index(self.joints, batch, steps));
            let grid = g.gather(traj, fwd_index, &grid_shape)?;
            let mut x = grid;
            let mut sizes = vec![(self.joints, steps)];
            for c in &self.gr_convs {
                x = c.apply(g, ps, x, (0, 0))?;
                x = g.relu(x);
                let s = g.value(x).shape();
                sizes.push((s[2], s[3]));
            }
            for (i, c) in self.gr_tconvs.iter().enumerate() {
                let (h_in, w_in) = sizes[sizes.len() - 1 - i];
                let (h_t, w_t) = sizes[sizes.len() - 2 - i];
                let op_h = h_t - ((h_in - 1) * c.stride + c.k - 2);
                let op_w = w_t - ((w_in - 1) * c.stride + c.k - 2);
                x = c.apply(g, ps, x, (op_h, op_w))?;
                if i + 1 < self.gr_tconvs.len() {
                    x = g.relu(x);
                }
            }
            let residual = g.add(x, grid)?;
            let inv_index = Arc::new(pose_grid_inverse_index(self.joints, batch, steps));
            Some(g.gather(residual, inv_index, &[steps * batch, self.dims])?)
        } else {
            None
        };

        let out = match mode {
            GrMode::Gru => gru_out.expect("gru path ran"),
            GrMode::Conved => conv_out.expect("conv path ran"),
            GrMode::BlendFixed => {
                let s = g.add(gru_out.unwrap(), conv_out.unwrap())?;
                g.affine(s, 0.5, 0.0)
            }
            GrMode::BlendAdaptive => {
                let alpha = g.param(ps, &self.alpha)?;
                let alpha = g.sigmoid(alpha);
                let one_minus = g.affine(alpha, -1.0, 1.0);
                let a = g.mul(gru_out.unwrap(), alpha)?;
                let b = g.mul(conv_out.unwrap(), one_minus)?;
                g.add(a, b)?
            }
        };
        Ok(out)
    }

    /// Mean per-frame L2 norm between prediction and ground truth over the
    /// dual representation (coordinates only under `no_lie`).
    fn sequence_loss(&self, g: &mut Graph, pred: NodeId, gt: NodeId) -> Result<NodeId, ModelError> {
        if g.value(pred).shape() != g.value(gt).shape() {
            return Err(ModelError::LengthMismatch(format!(
                "prediction {:?} vs ground truth {:?}",
                g.value(pred).shape(),
                g.value(gt).shape()
            )));
        }
        let (p, t) = if self.config.no_lie {
            (
                g.slice(pred, 1, 0, self.coord_width)?,
                g.slice(gt, 1, 0, self.coord_width)?,
            )
        } else {
            (pred, gt)
        };
        let d = g.sub(p, t)?;
        let n = g.l2_norm_rows(d)?;
        Ok(g.mean(n))
    }

    /// Self-projection consistency: mean per-frame L2 norm between the
    /// coordinate head and forward kinematics of the Lie head.
    pub fn omega_loss(&self, g: &mut Graph, frames: NodeId) -> Result<NodeId, ModelError> {
        let coord = g.slice(frames, 1, 0, self.coord_width)?;
        let lie = g.slice(frames, 1, self.coord_width, self.lie_width)?;
        let fk = g.fk(lie, self.skeleton.clone())?;
        let d = g.sub(coord, fk)?;
        let n = g.l2_norm_rows(d)?;
        Ok(g.mean(n))
    }

    /// Builds every loss node. `gt_past` is `(past * batch, dims)`;
    /// `gt_future` is `(future * batch, dims)` and may be absent when no
    /// future frames were predicted.
    pub fn losses(
        &self,
        g: &mut Graph,
        fwd: &Forward,
        gt_past: NodeId,
        gt_future: Option<NodeId>,
    ) -> Result<Losses, ModelError> {
        let pln = self.sequence_loss(g, fwd.pln_frames, gt_past)?;
        let mgn = match fwd.mgn_frames {
            Some(m) => {
                let gt = gt_future.ok_or_else(|| {
                    ModelError::LengthMismatch("future ground truth missing".to_string())
                })?;
                Some(self.sequence_loss(g, m, gt)?)
            }
            None => None,
        };
        let gr = match fwd.refined {
            Some(r) => {
                let gt_traj = match (fwd.mgn_frames, gt_future) {
                    (Some(_), Some(f)) => g.concat(&[gt_past, f], 0)?,
                    _ => gt_past,
                };
                Some(self.sequence_loss(g, r, gt_traj)?)
            }
            None => None,
        };
        // The regularizer covers every SP-head output (PLN and MGN frames).
        let omega = self.omega_loss(g, fwd.trajectory)?;

        let mut total = pln;
        if let Some(m) = mgn {
            total = g.add(total, m)?;
        }
        if let Some(r) = gr {
            let scaled = g.affine(r, self.config.beta, 0.0);
            total = g.add(total, scaled)?;
        }
        let scaled_omega = g.affine(omega, self.config.lambda, 0.0);
        total = g.add(total, scaled_omega)?;
        Ok(Losses { total, pln, mgn, gr, omega })
    }
}

/// Combines separately computed loss components with the default weighting
/// `L = L_PLN + L_MGN + beta * L_GR + lambda * Omega_SP`.
pub fn combine_total(
    g: &mut Graph,
    pln: NodeId,
    mgn: NodeId,
    gr: NodeId,
    omega: NodeId,
    beta: f64,
    lambda: f64,
) -> Result<NodeId, GraphError> {
    let a = g.add(pln, mgn)?;
    let b = g.affine(gr, beta, 0.0);
    let c = g.affine(omega, lambda, 0.0);
    let ab = g.add(a, b)?;
    g.add(ab, c)
}
