//! Neural building blocks: unidirectional LSTM stacks, linear projections,
//! causal convolutions, and inverted dropout.
//!
//! Every layer has two forward paths that perform identical arithmetic in
//! identical order: a raw path on plain tensors (inference, streaming) and a
//! tape path that records the computation for backward. Keeping the two in
//! lockstep is what makes the streaming-equals-batch contract bitwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Result, SluError};
use crate::tensor::{matvec, Tensor};

/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
pub fn init_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (cols as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("consistent dims")
}

fn init_uniform_vec(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::vector((0..n).map(|_| rng.gen_range(-bound..bound)).collect())
}

// ---------------------------------------------------------------------------
// Linear projection
// ---------------------------------------------------------------------------

/// Affine map `y = Wx + b` with `w: [out×in]`, `b: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: init_uniform(rng, out_dim, in_dim),
            b: init_uniform_vec(rng, out_dim, in_dim),
        }
    }

    /// Zero-weight, zero-bias projection (uniform outputs under softmax).
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: Tensor::zeros(&[out_dim, in_dim]),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.dims()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.w.dims()[1]
    }

    /// Raw forward for one frame.
    pub fn forward_frame(&self, x: &[f64], out: &mut [f64]) {
        let (o, i) = (self.out_dim(), self.in_dim());
        debug_assert_eq!(x.len(), i);
        matvec(self.w.data(), o, i, x, out);
        for (y, b) in out.iter_mut().zip(self.b.data()) {
            *y += b;
        }
    }
}

/// `Wx + b` applied per row of `x` (rank-1 or rank-2).
pub fn linear_forward(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 || b.rank() != 1 || w.dims()[0] != b.len() || x.row_len() != w.dims()[1] {
        return Err(SluError::Shape {
            op: "linear_forward",
            left: w.dims().to_vec(),
            right: x.dims().to_vec(),
        });
    }
    let (out_dim, in_dim) = (w.dims()[0], w.dims()[1]);
    let rows = x.num_rows();
    let mut data = vec![0.0; rows * out_dim];
    for r in 0..rows {
        let xr = &x.data()[r * in_dim..(r + 1) * in_dim];
        let yr = &mut data[r * out_dim..(r + 1) * out_dim];
        matvec(w.data(), out_dim, in_dim, xr, yr);
        for (y, bv) in yr.iter_mut().zip(b.data()) {
            *y += bv;
        }
    }
    let dims = if x.rank() <= 1 {
        vec![out_dim]
    } else {
        vec![rows, out_dim]
    };
    Tensor::new(dims, data)
}

/// Tape node pair for a [`Linear`].
#[derive(Debug, Clone, Copy)]
pub struct LinearNodes {
    pub w: NodeId,
    pub b: NodeId,
}

impl Linear {
    pub fn leaves(&self, tape: &mut Tape) -> LinearNodes {
        LinearNodes {
            w: tape.leaf(&self.w),
            b: tape.leaf(&self.b),
        }
    }
}

/// Tape forward for one rank-1 frame.
pub fn linear_tape(tape: &mut Tape, nodes: LinearNodes, x: NodeId) -> Result<NodeId> {
    let wx = tape.matmul(nodes.w, x)?;
    tape.add(wx, nodes.b)
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

/// One unidirectional LSTM layer. Gate weights are `[hidden×input]`,
/// recurrent weights `[hidden×hidden]`, biases `[hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_g: Tensor,
    pub w_o: Tensor,
    pub u_i: Tensor,
    pub u_f: Tensor,
    pub u_g: Tensor,
    pub u_o: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_g: Tensor,
    pub b_o: Tensor,
}

impl LstmLayerParams {
    /// Uniform init; forget-gate bias starts at 1.0.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut b_f = init_uniform_vec(rng, hidden_dim, input_dim);
        b_f.data_mut().iter_mut().for_each(|v| *v = 1.0);
        LstmLayerParams {
            input_dim,
            hidden_dim,
            w_i: init_uniform(rng, hidden_dim, input_dim),
            w_f: init_uniform(rng, hidden_dim, input_dim),
            w_g: init_uniform(rng, hidden_dim, input_dim),
            w_o: init_uniform(rng, hidden_dim, input_dim),
            u_i: init_uniform(rng, hidden_dim, hidden_dim),
            u_f: init_uniform(rng, hidden_dim, hidden_dim),
            u_g: init_uniform(rng, hidden_dim, hidden_dim),
            u_o: init_uniform(rng, hidden_dim, hidden_dim),
            b_i: init_uniform_vec(rng, hidden_dim, input_dim),
            b_f,
            b_g: init_uniform_vec(rng, hidden_dim, input_dim),
            b_o: init_uniform_vec(rng, hidden_dim, input_dim),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmLayerParams {
            input_dim,
            hidden_dim,
            w_i: Tensor::zeros(&[hidden_dim, input_dim]),
            w_f: Tensor::zeros(&[hidden_dim, input_dim]),
            w_g: Tensor::zeros(&[hidden_dim, input_dim]),
            w_o: Tensor::zeros(&[hidden_dim, input_dim]),
            u_i: Tensor::zeros(&[hidden_dim, hidden_dim]),
            u_f: Tensor::zeros(&[hidden_dim, hidden_dim]),
            u_g: Tensor::zeros(&[hidden_dim, hidden_dim]),
            u_o: Tensor::zeros(&[hidden_dim, hidden_dim]),
            b_i: Tensor::zeros(&[hidden_dim]),
            b_f: Tensor::zeros(&[hidden_dim]),
            b_g: Tensor::zeros(&[hidden_dim]),
            b_o: Tensor::zeros(&[hidden_dim]),
        }
    }
}

/// Recurrent state of one LSTM layer; zero-initialized at sequence start.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[hidden_dim]),
            c: Tensor::zeros(&[hidden_dim]),
        }
    }
}

/// Gate pre-activation `0 + Wx + Uh + b`, accumulated in exactly the order
/// the tape's `sum_list` uses.
fn gate_preact(
    w: &Tensor,
    u: &Tensor,
    b: &Tensor,
    x: &[f64],
    h: &[f64],
    wx: &mut [f64],
    uh: &mut [f64],
    out: &mut [f64],
) {
    let rows = w.dims()[0];
    matvec(w.data(), rows, w.dims()[1], x, wx);
    matvec(u.data(), rows, u.dims()[1], h, uh);
    for j in 0..rows {
        let mut s = 0.0;
        s += wx[j];
        s += uh[j];
        s += b.data()[j];
        out[j] = s;
    }
}

/// One LSTM cell update. Returns the new hidden output and state; the old
/// state is not modified.
pub fn lstm_step(
    params: &LstmLayerParams,
    x: &Tensor,
    state: &LstmState,
) -> Result<(Tensor, LstmState)> {
    if x.rank() != 1 || x.len() != params.input_dim {
        return Err(SluError::Shape {
            op: "lstm_step",
            left: vec![params.input_dim],
            right: x.dims().to_vec(),
        });
    }
    if state.h.len() != params.hidden_dim || state.c.len() != params.hidden_dim {
        return Err(SluError::Shape {
            op: "lstm_step",
            left: vec![params.hidden_dim],
            right: state.h.dims().to_vec(),
        });
    }
    let hd = params.hidden_dim;
    let mut wx = vec![0.0; hd];
    let mut uh = vec![0.0; hd];
    let mut pre = vec![0.0; hd];
    let mut gate = |w: &Tensor, u: &Tensor, b: &Tensor, buf: &mut Vec<f64>| {
        gate_preact(w, u, b, x.data(), state.h.data(), &mut wx, &mut uh, &mut pre);
        buf.copy_from_slice(&pre);
    };
    let mut i = vec![0.0; hd];
    let mut f = vec![0.0; hd];
    let mut g = vec![0.0; hd];
    let mut o = vec![0.0; hd];
    gate(&params.w_i, &params.u_i, &params.b_i, &mut i);
    gate(&params.w_f, &params.u_f, &params.b_f, &mut f);
    gate(&params.w_g, &params.u_g, &params.b_g, &mut g);
    gate(&params.w_o, &params.u_o, &params.b_o, &mut o);
    for v in i.iter_mut() {
        *v = crate::tensor::sigmoid(*v);
    }
    for v in f.iter_mut() {
        *v = crate::tensor::sigmoid(*v);
    }
    for v in g.iter_mut() {
        *v = v.tanh();
    }
    for v in o.iter_mut() {
        *v = crate::tensor::sigmoid(*v);
    }
    let mut c_new = vec![0.0; hd];
    for j in 0..hd {
        c_new[j] = f[j] * state.c.data()[j] + i[j] * g[j];
    }
    let mut h_new = vec![0.0; hd];
    for j in 0..hd {
        h_new[j] = o[j] * c_new[j].tanh();
    }
    let h_t = Tensor::vector(h_new);
    Ok((
        h_t.clone(),
        LstmState {
            h: h_t,
            c: Tensor::vector(c_new),
        },
    ))
}

/// Tape node bundle for an LSTM layer.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayerNodes {
    pub w_i: NodeId,
    pub w_f: NodeId,
    pub w_g: NodeId,
    pub w_o: NodeId,
    pub u_i: NodeId,
    pub u_f: NodeId,
    pub u_g: NodeId,
    pub u_o: NodeId,
    pub b_i: NodeId,
    pub b_f: NodeId,
    pub b_g: NodeId,
    pub b_o: NodeId,
}

impl LstmLayerParams {
    pub fn leaves(&self, tape: &mut Tape) -> LstmLayerNodes {
        LstmLayerNodes {
            w_i: tape.leaf(&self.w_i),
            w_f: tape.leaf(&self.w_f),
            w_g: tape.leaf(&self.w_g),
            w_o: tape.leaf(&self.w_o),
            u_i: tape.leaf(&self.u_i),
            u_f: tape.leaf(&self.u_f),
            u_g: tape.leaf(&self.u_g),
            u_o: tape.leaf(&self.u_o),
            b_i: tape.leaf(&self.b_i),
            b_f: tape.leaf(&self.b_f),
            b_g: tape.leaf(&self.b_g),
            b_o: tape.leaf(&self.b_o),
        }
    }
}

/// Tape version of [`lstm_step`]: same arithmetic, recorded for backward.
pub fn lstm_step_tape(
    tape: &mut Tape,
    nodes: &LstmLayerNodes,
    x: NodeId,
    h: NodeId,
    c: NodeId,
) -> Result<(NodeId, NodeId)> {
    let gate = |tape: &mut Tape, w: NodeId, u: NodeId, b: NodeId| -> Result<NodeId> {
        let wx = tape.matmul(w, x)?;
        let uh = tape.matmul(u, h)?;
        tape.sum_list(&[wx, uh, b])
    };
    let pi = gate(tape, nodes.w_i, nodes.u_i, nodes.b_i)?;
    let pf = gate(tape, nodes.w_f, nodes.u_f, nodes.b_f)?;
    let pg = gate(tape, nodes.w_g, nodes.u_g, nodes.b_g)?;
    let po = gate(tape, nodes.w_o, nodes.u_o, nodes.b_o)?;
    let i = tape.sigmoid(pi);
    let f = tape.sigmoid(pf);
    let g = tape.tanh(pg);
    let o = tape.sigmoid(po);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let tc = tape.tanh(c_new);
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c_new))
}

/// Inverted-dropout mask with keep-scaling baked in.
fn dropout_mask(len: usize, p: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| {
            if rng.gen_range(0.0..1.0) < p {
                0.0
            } else {
                keep
            }
        })
        .collect()
}

/// Inverted dropout: kept units are scaled by `1/(1-p)` so the expected
/// value of the output equals the input. Reproducible given `seed`.
pub fn dropout_forward(x: &Tensor, p: f64, seed: u64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(SluError::Contract(format!(
            "dropout probability {} outside [0,1)",
            p
        )));
    }
    if p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), p, seed);
    let data: Vec<f64> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Tensor::new(x.dims().to_vec(), data)
}

/// Left-to-right unroll of a stack of LSTM layers over a `[T×input]`
/// sequence. Dropout is applied to the outputs of every non-final layer,
/// only when `training` is set.
pub fn lstm_stack_forward(
    stack: &[LstmLayerParams],
    xs: &Tensor,
    dropout_p: f64,
    training: bool,
    dropout_seed: u64,
) -> Result<Tensor> {
    if xs.rank() != 2 || xs.dims()[0] == 0 {
        return Err(SluError::Contract(format!(
            "lstm_stack_forward requires a non-empty [T×input] sequence, got {:?}",
            xs.dims()
        )));
    }
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(SluError::Contract(format!(
            "dropout probability {} outside [0,1)",
            dropout_p
        )));
    }
    let t_len = xs.dims()[0];
    let mut current = xs.clone();
    for (li, layer) in stack.iter().enumerate() {
        let mut state = LstmState::zeros(layer.hidden_dim);
        let mut out = Vec::with_capacity(t_len * layer.hidden_dim);
        for t in 0..t_len {
            let x_t = Tensor::vector(current.row(t).to_vec());
            let (h, next) = lstm_step(layer, &x_t, &state)?;
            out.extend_from_slice(h.data());
            state = next;
        }
        current = Tensor::new(vec![t_len, layer.hidden_dim], out)?;
        let is_last = li + 1 == stack.len();
        if training && dropout_p > 0.0 && !is_last {
            current = dropout_forward(&current, dropout_p, dropout_seed.wrapping_add(li as u64))?;
        }
    }
    Ok(current)
}

/// Tape version of [`lstm_stack_forward`]; returns per-frame top-layer
/// hidden nodes.
///
/// The input-to-hidden products of every gate are hoisted into one
/// time-batched `X·Wᵀ` per layer; the arithmetic per element is identical
/// to the per-frame path (same dot kernel, commuted operands).
pub fn lstm_stack_tape(
    tape: &mut Tape,
    stack: &[LstmLayerParams],
    nodes: &[LstmLayerNodes],
    xs: &[NodeId],
    dropout_p: f64,
    training: bool,
    dropout_seed: u64,
) -> Result<Vec<NodeId>> {
    if xs.is_empty() {
        return Err(SluError::Contract(
            "lstm_stack_tape requires a non-empty sequence".into(),
        ));
    }
    let mut current: Vec<NodeId> = xs.to_vec();
    for (li, (layer, ln)) in stack.iter().zip(nodes).enumerate() {
        let x_mat = tape.stack_rows(&current)?;
        let wx_i = tape.matmul_nt(x_mat, ln.w_i)?;
        let wx_f = tape.matmul_nt(x_mat, ln.w_f)?;
        let wx_g = tape.matmul_nt(x_mat, ln.w_g)?;
        let wx_o = tape.matmul_nt(x_mat, ln.w_o)?;
        let zero = tape.constant(Tensor::zeros(&[layer.hidden_dim]));
        let (mut h, mut c) = (zero, zero);
        let mut outs = Vec::with_capacity(current.len());
        for t in 0..current.len() {
            let h_prev = h;
            let gate = |tape: &mut Tape, wx: NodeId, u: NodeId, b: NodeId| -> Result<NodeId> {
                let wx_t = tape.row_select(wx, t)?;
                let uh = tape.matmul(u, h_prev)?;
                tape.sum_list(&[wx_t, uh, b])
            };
            let pi = gate(tape, wx_i, ln.u_i, ln.b_i)?;
            let pf = gate(tape, wx_f, ln.u_f, ln.b_f)?;
            let pg = gate(tape, wx_g, ln.u_g, ln.b_g)?;
            let po = gate(tape, wx_o, ln.u_o, ln.b_o)?;
            let i = tape.sigmoid(pi);
            let f = tape.sigmoid(pf);
            let g = tape.tanh(pg);
            let o = tape.sigmoid(po);
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, g)?;
            let c2 = tape.add(fc, ig)?;
            let tc = tape.tanh(c2);
            let h2 = tape.mul(o, tc)?;
            outs.push(h2);
            h = h2;
            c = c2;
        }
        let is_last = li + 1 == stack.len();
        if training && dropout_p > 0.0 && !is_last {
            // One mask over the whole [T×H] layer output, matching the raw path.
            let t_len = outs.len();
            let hd = layer.hidden_dim;
            let mask = dropout_mask(t_len * hd, dropout_p, dropout_seed.wrapping_add(li as u64));
            let mut masked = Vec::with_capacity(t_len);
            for (t, &out) in outs.iter().enumerate() {
                let m = tape.constant(Tensor::vector(mask[t * hd..(t + 1) * hd].to_vec()));
                masked.push(tape.mul(out, m)?);
            }
            current = masked;
        } else {
            current = outs;
        }
    }
    Ok(current)
}

// ---------------------------------------------------------------------------
// Causal convolution frontend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            _ => Err(SluError::Format(format!("unknown activation code {}", c))),
        }
    }
}

/// One causal conv layer. `taps[d]` is the `[out×in]` weight applied to the
/// input frame `t-d`, so look-ahead is zero by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel_width: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub taps: Vec<Tensor>,
    pub b: Tensor,
}

impl ConvLayer {
    pub fn init(kernel_width: usize, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = kernel_width * in_dim;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let taps = (0..kernel_width)
            .map(|_| {
                let data: Vec<f64> = (0..out_dim * in_dim)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Tensor::new(vec![out_dim, in_dim], data).expect("consistent dims")
            })
            .collect();
        let b = Tensor::vector((0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect());
        ConvLayer {
            kernel_width,
            in_dim,
            out_dim,
            taps,
            b,
        }
    }
}

/// Stack of causal conv layers with a shared activation.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalConvParams {
    pub layers: Vec<ConvLayer>,
    pub activation: Activation,
}

impl CausalConvParams {
    /// Total receptive field `R = 1 + Σ(kernel_width − 1)`; look-ahead is 0.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|l| l.kernel_width - 1)
            .sum::<usize>()
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }
}

fn apply_activation(kind: Activation, xs: &mut [f64]) {
    match kind {
        Activation::Relu => {
            for v in xs.iter_mut() {
                if !(*v > 0.0) {
                    *v = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for v in xs.iter_mut() {
                *v = v.tanh();
            }
        }
    }
}

/// One output frame of one conv layer. `window(d)` must return the input
/// frame at `t-d`, or `None` left of the sequence start (zero padding).
/// Accumulation order mirrors the tape path: taps in ascending `d`, bias last.
pub fn conv_frame<'a>(
    layer: &ConvLayer,
    window: impl Fn(usize) -> Option<&'a [f64]>,
    activation: Activation,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), layer.out_dim);
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut term = vec![0.0; layer.out_dim];
    let zeros = vec![0.0; layer.in_dim];
    for d in 0..layer.kernel_width {
        let x = window(d).unwrap_or(&zeros);
        matvec(layer.taps[d].data(), layer.out_dim, layer.in_dim, x, &mut term);
        for (o, v) in out.iter_mut().zip(&term) {
            *o += v;
        }
    }
    for (o, bv) in out.iter_mut().zip(layer.b.data()) {
        *o += bv;
    }
    apply_activation(activation, out);
}

/// Causal convolution over a whole `[T×in]` sequence: frame `t` depends only
/// on frames `max(0, t−R+1)..=t`, with zero padding at the left edge.
pub fn causal_conv_forward(params: &CausalConvParams, xs: &Tensor) -> Result<Tensor> {
    if xs.rank() != 2 || xs.dims()[0] == 0 {
        return Err(SluError::Contract(format!(
            "causal_conv_forward requires a non-empty [T×in] sequence, got {:?}",
            xs.dims()
        )));
    }
    if xs.dims()[1] != params.in_dim() {
        return Err(SluError::Shape {
            op: "causal_conv_forward",
            left: vec![params.in_dim()],
            right: xs.dims().to_vec(),
        });
    }
    let t_len = xs.dims()[0];
    let mut current = xs.clone();
    for layer in &params.layers {
        let mut out = vec![0.0; t_len * layer.out_dim];
        for t in 0..t_len {
            let cur = &current;
            conv_frame(
                layer,
                |d| {
                    if d <= t {
                        Some(cur.row(t - d))
                    } else {
                        None
                    }
                },
                params.activation,
                &mut out[t * layer.out_dim..(t + 1) * layer.out_dim],
            );
        }
        current = Tensor::new(vec![t_len, layer.out_dim], out)?;
    }
    Ok(current)
}

/// Tape node bundle for a conv layer.
#[derive(Debug, Clone)]
pub struct ConvLayerNodes {
    pub taps: Vec<NodeId>,
    pub b: NodeId,
}

impl ConvLayer {
    pub fn leaves(&self, tape: &mut Tape) -> ConvLayerNodes {
        ConvLayerNodes {
            taps: self.taps.iter().map(|t| tape.leaf(t)).collect(),
            b: tape.leaf(&self.b),
        }
    }
}

/// Tape version of [`causal_conv_forward`]; one node per output frame.
pub fn causal_conv_tape(
    tape: &mut Tape,
    params: &CausalConvParams,
    nodes: &[ConvLayerNodes],
    xs: &[NodeId],
) -> Result<Vec<NodeId>> {
    if xs.is_empty() {
        return Err(SluError::Contract(
            "causal_conv_tape requires a non-empty sequence".into(),
        ));
    }
    let mut current: Vec<NodeId> = xs.to_vec();
    for (layer, ln) in params.layers.iter().zip(nodes) {
        let zero = tape.constant(Tensor::zeros(&[layer.in_dim]));
        let mut outs = Vec::with_capacity(current.len());
        for t in 0..current.len() {
            let mut terms = Vec::with_capacity(layer.kernel_width + 1);
            for d in 0..layer.kernel_width {
                let x = if d <= t { current[t - d] } else { zero };
                terms.push(tape.matmul(ln.taps[d], x)?);
            }
            terms.push(ln.b);
            let pre = tape.sum_list(&terms)?;
            let act = match params.activation {
                Activation::Relu => tape.relu(pre),
                Activation::Tanh => tape.tanh(pre),
            };
            outs.push(act);
        }
        current = outs;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_multi;
    use crate::tensor::sigmoid;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn lstm_zero_weights_zero_output() {
        let params = LstmLayerParams::zeros(3, 4);
        let x = Tensor::vector(vec![0.7, -0.2, 1.5]);
        let (h, state) = lstm_step(&params, &x, &LstmState::zeros(4)).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        assert!(state.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_saturated_output_gate_zero_candidate() {
        let mut params = LstmLayerParams::zeros(2, 3);
        params.b_o.data_mut().iter_mut().for_each(|v| *v = 50.0);
        let x = Tensor::vector(vec![0.0, 0.0]);
        let (h, _) = lstm_step(&params, &x, &LstmState::zeros(3)).unwrap();
        // candidate g = tanh(0) = 0 so c = 0 and h = sigmoid(50)·tanh(0) = 0
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    /// Independent scalar-loop LSTM reference: textbook equations with no
    /// shared kernels.
    fn lstm_reference(p: &LstmLayerParams, x: &[f64], h0: &[f64], c0: &[f64]) -> Vec<f64> {
        let hd = p.hidden_dim;
        let id = p.input_dim;
        let pre = |w: &Tensor, u: &Tensor, b: &Tensor, j: usize| -> f64 {
            let mut s = b.data()[j];
            for k in 0..id {
                s += w.data()[j * id + k] * x[k];
            }
            for k in 0..hd {
                s += u.data()[j * hd + k] * h0[k];
            }
            s
        };
        (0..hd)
            .map(|j| {
                let i = sigmoid(pre(&p.w_i, &p.u_i, &p.b_i, j));
                let f = sigmoid(pre(&p.w_f, &p.u_f, &p.b_f, j));
                let g = pre(&p.w_g, &p.u_g, &p.b_g, j).tanh();
                let o = sigmoid(pre(&p.w_o, &p.u_o, &p.b_o, j));
                let c = f * c0[j] + i * g;
                o * c.tanh()
            })
            .collect()
    }

    #[test]
    fn lstm_step_matches_scalar_reference() {
        let mut r = rng(42);
        let params = LstmLayerParams::init(5, 7, &mut r);
        let x = Tensor::vector(rand_vec(&mut r, 5));
        let state = LstmState {
            h: Tensor::vector(rand_vec(&mut r, 7)),
            c: Tensor::vector(rand_vec(&mut r, 7)),
        };
        let (h, _) = lstm_step(&params, &x, &state).unwrap();
        let want = lstm_reference(&params, x.data(), state.h.data(), state.c.data());
        for (a, b) in h.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn lstm_step_shape_error() {
        let params = LstmLayerParams::zeros(3, 4);
        let x = Tensor::vector(vec![1.0, 2.0]);
        assert!(matches!(
            lstm_step(&params, &x, &LstmState::zeros(4)),
            Err(SluError::Shape { .. })
        ));
    }

    #[test]
    fn stack_t1_equals_composed_steps() {
        let mut r = rng(9);
        let stack = vec![
            LstmLayerParams::init(4, 6, &mut r),
            LstmLayerParams::init(6, 5, &mut r),
        ];
        let x = rand_vec(&mut r, 4);
        let xs = Tensor::matrix(1, 4, x.clone()).unwrap();
        let batch = lstm_stack_forward(&stack, &xs, 0.0, false, 0).unwrap();

        let (h0, _) = lstm_step(&stack[0], &Tensor::vector(x), &LstmState::zeros(6)).unwrap();
        let (h1, _) = lstm_step(&stack[1], &h0, &LstmState::zeros(5)).unwrap();
        assert_eq!(batch.data(), h1.data());
    }

    #[test]
    fn stack_dropout_zero_is_inference() {
        let mut r = rng(10);
        let stack = vec![
            LstmLayerParams::init(3, 4, &mut r),
            LstmLayerParams::init(4, 4, &mut r),
        ];
        let xs = Tensor::matrix(5, 3, rand_vec(&mut r, 15)).unwrap();
        let train = lstm_stack_forward(&stack, &xs, 0.0, true, 123).unwrap();
        let infer = lstm_stack_forward(&stack, &xs, 0.0, false, 456).unwrap();
        assert_eq!(train.data(), infer.data());
    }

    #[test]
    fn stack_prefix_property_bitwise() {
        let mut r = rng(11);
        let stack = vec![
            LstmLayerParams::init(3, 4, &mut r),
            LstmLayerParams::init(4, 4, &mut r),
        ];
        let base = rand_vec(&mut r, 18);
        let mut perturbed = base.clone();
        // change only the last frame
        for v in perturbed[15..].iter_mut() {
            *v += 0.5;
        }
        let a = lstm_stack_forward(&stack, &Tensor::matrix(6, 3, base).unwrap(), 0.0, false, 0)
            .unwrap();
        let b = lstm_stack_forward(
            &stack,
            &Tensor::matrix(6, 3, perturbed).unwrap(),
            0.0,
            false,
            0,
        )
        .unwrap();
        for t in 0..5 {
            assert_eq!(a.row(t), b.row(t), "frame {} changed", t);
        }
        assert_ne!(a.row(5), b.row(5));
    }

    #[test]
    fn stack_incremental_equals_batch_bitwise() {
        let mut r = rng(12);
        let stack = vec![
            LstmLayerParams::init(3, 5, &mut r),
            LstmLayerParams::init(5, 4, &mut r),
        ];
        let xs = Tensor::matrix(7, 3, rand_vec(&mut r, 21)).unwrap();
        let batch = lstm_stack_forward(&stack, &xs, 0.0, false, 0).unwrap();

        let mut states: Vec<LstmState> = stack.iter().map(|l| LstmState::zeros(l.hidden_dim)).collect();
        for t in 0..7 {
            let mut x = Tensor::vector(xs.row(t).to_vec());
            for (layer, state) in stack.iter().zip(states.iter_mut()) {
                let (h, next) = lstm_step(layer, &x, state).unwrap();
                *state = next;
                x = h;
            }
            assert_eq!(x.data(), batch.row(t), "frame {}", t);
        }
    }

    #[test]
    fn stack_rejects_empty_sequence() {
        let stack = vec![LstmLayerParams::zeros(3, 4)];
        let xs = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(lstm_stack_forward(&stack, &xs, 0.0, false, 0).is_ok());
        // rank-1 input is a contract violation
        let bad = Tensor::vector(vec![0.0; 3]);
        assert!(matches!(
            lstm_stack_forward(&stack, &bad, 0.0, false, 0),
            Err(SluError::Contract(_))
        ));
    }

    #[test]
    fn linear_identity_and_bias() {
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::vector(vec![0.0, 0.0]);
        let x = Tensor::vector(vec![3.0, -4.0]);
        let y = linear_forward(&w, &b, &x).unwrap();
        assert_eq!(y.data(), x.data());

        let b2 = Tensor::vector(vec![0.5, -0.5]);
        let z = Tensor::vector(vec![0.0, 0.0]);
        let y2 = linear_forward(&w, &b2, &z).unwrap();
        assert_eq!(y2.data(), b2.data());
    }

    #[test]
    fn linear_matches_matmul_oracle() {
        let mut r = rng(13);
        let w = init_uniform(&mut r, 4, 3);
        let b = Tensor::vector(rand_vec(&mut r, 4));
        let x = Tensor::matrix(2, 3, rand_vec(&mut r, 6)).unwrap();
        let y = linear_forward(&w, &b, &x).unwrap();
        for row in 0..2 {
            for j in 0..4 {
                let mut s = b.data()[j];
                for k in 0..3 {
                    s += w.data()[j * 3 + k] * x.data()[row * 3 + k];
                }
                assert!((y.data()[row * 4 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_kernel1_is_frame_mlp() {
        let mut r = rng(14);
        let params = CausalConvParams {
            layers: vec![ConvLayer::init(1, 3, 4, &mut r)],
            activation: Activation::Relu,
        };
        assert_eq!(params.receptive_field(), 1);
        let xs = Tensor::matrix(4, 3, rand_vec(&mut r, 12)).unwrap();
        let out = causal_conv_forward(&params, &xs).unwrap();
        // reversing frame order reverses output rows: no cross-frame coupling
        let mut rev_data = Vec::new();
        for t in (0..4).rev() {
            rev_data.extend_from_slice(xs.row(t));
        }
        let rev_out =
            causal_conv_forward(&params, &Tensor::matrix(4, 3, rev_data).unwrap()).unwrap();
        for t in 0..4 {
            assert_eq!(out.row(t), rev_out.row(3 - t));
        }
    }

    #[test]
    fn conv_impulse_causality() {
        let mut r = rng(15);
        let params = CausalConvParams {
            layers: vec![
                ConvLayer::init(3, 2, 3, &mut r),
                ConvLayer::init(2, 3, 2, &mut r),
            ],
            activation: Activation::Tanh,
        };
        let t_len = 8;
        let zero = Tensor::matrix(t_len, 2, vec![0.0; t_len * 2]).unwrap();
        let base = causal_conv_forward(&params, &zero).unwrap();
        let mut impulse = vec![0.0; t_len * 2];
        let hit = 5;
        impulse[hit * 2] = 1.0;
        let out =
            causal_conv_forward(&params, &Tensor::matrix(t_len, 2, impulse).unwrap()).unwrap();
        for t in 0..hit {
            assert_eq!(out.row(t), base.row(t), "impulse leaked backwards to {}", t);
        }
        assert_ne!(out.row(hit), base.row(hit));
    }

    #[test]
    fn conv_matches_sliding_window_oracle() {
        let mut r = rng(16);
        let layer = ConvLayer::init(3, 2, 3, &mut r);
        let params = CausalConvParams {
            layers: vec![layer.clone()],
            activation: Activation::Tanh,
        };
        let xs = Tensor::matrix(5, 2, rand_vec(&mut r, 10)).unwrap();
        let out = causal_conv_forward(&params, &xs).unwrap();
        for t in 0..5 {
            for j in 0..3 {
                let mut s = layer.b.data()[j];
                for d in 0..3usize {
                    if d <= t {
                        for k in 0..2 {
                            s += layer.taps[d].data()[j * 2 + k] * xs.data()[(t - d) * 2 + k];
                        }
                    }
                }
                let want = s.tanh();
                assert!((out.data()[t * 3 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_identity_and_determinism() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let y = dropout_forward(&x, 0.0, 7).unwrap();
        assert_eq!(y.data(), x.data());

        let a = dropout_forward(&x, 0.5, 99).unwrap();
        let b = dropout_forward(&x, 0.5, 99).unwrap();
        assert_eq!(a.data(), b.data());

        assert!(matches!(
            dropout_forward(&x, 1.0, 0),
            Err(SluError::Contract(_))
        ));
    }

    #[test]
    fn dropout_preserves_expectation() {
        let x = Tensor::vector(vec![2.0; 64]);
        let n_draws = 10_000usize;
        let mut acc = 0.0;
        for seed in 0..n_draws as u64 {
            let y = dropout_forward(&x, 0.5, seed).unwrap();
            acc += y.data().iter().sum::<f64>();
        }
        let mean = acc / (n_draws as f64 * 64.0);
        assert!((mean - 2.0).abs() / 2.0 < 0.02, "mean {}", mean);
    }

    #[test]
    fn tape_and_raw_lstm_step_agree_bitwise() {
        let mut r = rng(17);
        let params = LstmLayerParams::init(4, 5, &mut r);
        let x = Tensor::vector(rand_vec(&mut r, 4));
        let (h_raw, st_raw) = lstm_step(&params, &x, &LstmState::zeros(5)).unwrap();

        let mut tape = Tape::new();
        let nodes = params.leaves(&mut tape);
        let xid = tape.leaf(&x);
        let zero = tape.constant(Tensor::zeros(&[5]));
        let (h_id, c_id) = lstm_step_tape(&mut tape, &nodes, xid, zero, zero).unwrap();
        assert_eq!(tape.value(h_id).data(), h_raw.data());
        assert_eq!(tape.value(c_id).data(), st_raw.c.data());
    }

    #[test]
    fn tape_and_raw_conv_agree_bitwise() {
        let mut r = rng(18);
        let params = CausalConvParams {
            layers: vec![
                ConvLayer::init(3, 2, 4, &mut r),
                ConvLayer::init(2, 4, 3, &mut r),
            ],
            activation: Activation::Relu,
        };
        let xs = Tensor::matrix(6, 2, rand_vec(&mut r, 12)).unwrap();
        let raw = causal_conv_forward(&params, &xs).unwrap();

        let mut tape = Tape::new();
        let nodes: Vec<ConvLayerNodes> =
            params.layers.iter().map(|l| l.leaves(&mut tape)).collect();
        let frames: Vec<NodeId> = (0..6)
            .map(|t| tape.constant(Tensor::vector(xs.row(t).to_vec())))
            .collect();
        let outs = causal_conv_tape(&mut tape, &params, &nodes, &frames).unwrap();
        for (t, &id) in outs.iter().enumerate() {
            assert_eq!(tape.value(id).data(), raw.row(t), "frame {}", t);
        }
    }

    #[test]
    fn lstm_step_loss_grad_check() {
        let mut r = rng(19);
        let params = LstmLayerParams::init(3, 4, &mut r);
        let x = Tensor::vector(rand_vec(&mut r, 3));
        let tensors = vec![
            params.w_i.clone(),
            params.w_f.clone(),
            params.w_g.clone(),
            params.w_o.clone(),
            params.u_i.clone(),
            params.u_f.clone(),
            params.u_g.clone(),
            params.u_o.clone(),
            params.b_i.clone(),
            params.b_f.clone(),
            params.b_g.clone(),
            params.b_o.clone(),
            x,
        ];
        let err = grad_check_multi(
            |tape, ids| {
                let nodes = LstmLayerNodes {
                    w_i: ids[0],
                    w_f: ids[1],
                    w_g: ids[2],
                    w_o: ids[3],
                    u_i: ids[4],
                    u_f: ids[5],
                    u_g: ids[6],
                    u_o: ids[7],
                    b_i: ids[8],
                    b_f: ids[9],
                    b_g: ids[10],
                    b_o: ids[11],
                };
                let zero = tape.constant(Tensor::zeros(&[4]));
                let (h, _) = lstm_step_tape(tape, &nodes, ids[12], zero, zero)?;
                let sq = tape.mul(h, h)?;
                Ok(tape.sum_all(sq))
            },
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "lstm grad check err {}", err);
    }
}
