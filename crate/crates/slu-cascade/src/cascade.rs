//! The three-module cascade: an acoustic-phonetic frontend (causal conv +
//! phone projection), a pronunciation module (LSTM stack + wordpiece
//! projection with log-softmax outputs), and a language-understanding head
//! (LSTM stack + intent projection read out at the final frame).
//!
//! Batch inference, tape-recorded training forwards, and the frame-by-frame
//! streaming session all route through the same per-frame kernels, so
//! streaming outputs equal batch outputs bitwise on every prefix.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Result, SluError};
use crate::layers::{
    causal_conv_forward, causal_conv_tape, conv_frame, linear_tape, lstm_stack_forward,
    lstm_stack_tape, lstm_step, Activation, CausalConvParams, ConvLayer, ConvLayerNodes, Linear,
    LinearNodes, LstmLayerNodes, LstmLayerParams, LstmState,
};
use crate::tensor::{log_softmax_row, softmax_row, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SLUC";
pub const CHECKPOINT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Dimensions and parameters
// ---------------------------------------------------------------------------

/// Structural description of a cascade; everything needed to rebuild the
/// parameter tree with the right shapes.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CascadeDims {
    pub feature_dim: usize,
    /// (kernel_width, in_dim, out_dim) per conv layer; the last out_dim is
    /// the phoneme embedding width.
    pub conv: Vec<(usize, usize, usize)>,
    pub p_classes: usize,
    pub w_layers: usize,
    pub w_hidden: usize,
    /// Wordpiece classes including the blank at id 0.
    pub vocab_size: usize,
    pub u_layers: usize,
    pub u_hidden: usize,
    pub num_intents: usize,
    pub subsample: usize,
    pub activation: u32,
}

impl CascadeDims {
    pub fn desk_default(vocab_size: usize, num_intents: usize) -> Self {
        CascadeDims {
            feature_dim: 16,
            conv: vec![(3, 16, 64), (3, 64, 64)],
            p_classes: 39,
            w_layers: 4,
            w_hidden: 64,
            vocab_size,
            u_layers: 2,
            u_hidden: 64,
            num_intents,
            subsample: 1,
            activation: Activation::Relu.code(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.conv.last().map(|c| c.2).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv.is_empty() {
            return Err(SluError::Config("cascade needs ≥ 1 conv layer".into()));
        }
        if self.conv[0].1 != self.feature_dim {
            return Err(SluError::Config(format!(
                "conv input dim {} != feature dim {}",
                self.conv[0].1, self.feature_dim
            )));
        }
        for w in self.conv.windows(2) {
            if w[0].2 != w[1].1 {
                return Err(SluError::Config("conv layer dims do not chain".into()));
            }
        }
        if self.conv.iter().any(|c| c.0 == 0) {
            return Err(SluError::Config("kernel width must be ≥ 1".into()));
        }
        if self.w_layers == 0 || self.u_layers == 0 {
            return Err(SluError::Config("LSTM stacks need ≥ 1 layer".into()));
        }
        if self.subsample == 0 {
            return Err(SluError::Config("subsample factor must be ≥ 1".into()));
        }
        if self.vocab_size < 2 || self.num_intents == 0 || self.p_classes == 0 {
            return Err(SluError::Config("empty output inventory".into()));
        }
        Activation::from_code(self.activation)?;
        Ok(())
    }
}

/// Acoustic-phonetic module: causal conv stack plus phone projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaP {
    pub conv: CausalConvParams,
    pub proj: Linear,
}

/// Pronunciation module: LSTM stack plus wordpiece projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaW {
    pub lstm: Vec<LstmLayerParams>,
    pub proj: Linear,
}

/// Language-understanding module: LSTM stack plus intent projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaU {
    pub lstm: Vec<LstmLayerParams>,
    pub proj: Linear,
}

/// Full parameter tree of the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeParams {
    pub dims: CascadeDims,
    pub theta_p: ThetaP,
    pub theta_w: ThetaW,
    pub theta_u: ThetaU,
}

impl CascadeParams {
    pub fn init(dims: CascadeDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv_layers: Vec<ConvLayer> = dims
            .conv
            .iter()
            .map(|&(k, i, o)| ConvLayer::init(k, i, o, &mut rng))
            .collect();
        let e_p = dims.embedding_dim();
        let theta_p = ThetaP {
            conv: CausalConvParams {
                layers: conv_layers,
                activation: Activation::from_code(dims.activation)?,
            },
            proj: Linear::init(e_p, dims.p_classes, &mut rng),
        };
        let mut w_lstm = Vec::with_capacity(dims.w_layers);
        let mut in_dim = e_p;
        for _ in 0..dims.w_layers {
            w_lstm.push(LstmLayerParams::init(in_dim, dims.w_hidden, &mut rng));
            in_dim = dims.w_hidden;
        }
        let theta_w = ThetaW {
            lstm: w_lstm,
            proj: Linear::init(dims.w_hidden, dims.vocab_size, &mut rng),
        };
        let mut u_lstm = Vec::with_capacity(dims.u_layers);
        let mut in_dim = dims.w_hidden;
        for _ in 0..dims.u_layers {
            u_lstm.push(LstmLayerParams::init(in_dim, dims.u_hidden, &mut rng));
            in_dim = dims.u_hidden;
        }
        let theta_u = ThetaU {
            lstm: u_lstm,
            proj: Linear::init(dims.u_hidden, dims.num_intents, &mut rng),
        };
        Ok(CascadeParams {
            dims,
            theta_p,
            theta_w,
            theta_u,
        })
    }

    /// Canonical `(name, tensor)` listing; ordering is stable and drives the
    /// checkpoint layout and optimizer state keys.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (l, layer) in self.theta_p.conv.layers.iter().enumerate() {
            for (d, tap) in layer.taps.iter().enumerate() {
                out.push((format!("theta_p.conv.{}.tap.{}", l, d), tap));
            }
            out.push((format!("theta_p.conv.{}.bias", l), &layer.b));
        }
        out.push(("theta_p.proj.w".into(), &self.theta_p.proj.w));
        out.push(("theta_p.proj.b".into(), &self.theta_p.proj.b));
        for (l, layer) in self.theta_w.lstm.iter().enumerate() {
            for (suffix, t) in lstm_fields(layer) {
                out.push((format!("theta_w.lstm.{}.{}", l, suffix), t));
            }
        }
        out.push(("theta_w.proj.w".into(), &self.theta_w.proj.w));
        out.push(("theta_w.proj.b".into(), &self.theta_w.proj.b));
        for (l, layer) in self.theta_u.lstm.iter().enumerate() {
            for (suffix, t) in lstm_fields(layer) {
                out.push((format!("theta_u.lstm.{}.{}", l, suffix), t));
            }
        }
        out.push(("theta_u.proj.w".into(), &self.theta_u.proj.w));
        out.push(("theta_u.proj.b".into(), &self.theta_u.proj.b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (l, layer) in self.theta_p.conv.layers.iter_mut().enumerate() {
            for (d, tap) in layer.taps.iter_mut().enumerate() {
                out.push((format!("theta_p.conv.{}.tap.{}", l, d), tap));
            }
            out.push((format!("theta_p.conv.{}.bias", l), &mut layer.b));
        }
        out.push(("theta_p.proj.w".into(), &mut self.theta_p.proj.w));
        out.push(("theta_p.proj.b".into(), &mut self.theta_p.proj.b));
        for (l, layer) in self.theta_w.lstm.iter_mut().enumerate() {
            for (suffix, t) in lstm_fields_mut(layer) {
                out.push((format!("theta_w.lstm.{}.{}", l, suffix), t));
            }
        }
        out.push(("theta_w.proj.w".into(), &mut self.theta_w.proj.w));
        out.push(("theta_w.proj.b".into(), &mut self.theta_w.proj.b));
        for (l, layer) in self.theta_u.lstm.iter_mut().enumerate() {
            for (suffix, t) in lstm_fields_mut(layer) {
                out.push((format!("theta_u.lstm.{}.{}", l, suffix), t));
            }
        }
        out.push(("theta_u.proj.w".into(), &mut self.theta_u.proj.w));
        out.push(("theta_u.proj.b".into(), &mut self.theta_u.proj.b));
        out
    }

    /// Frame indices the pronunciation module consumes for a `t_len`-frame
    /// input under the configured subsampling factor.
    pub fn subsampled_indices(&self, t_len: usize) -> Vec<usize> {
        let s = self.dims.subsample;
        (0..t_len).filter(|t| (t + 1) % s == 0).collect()
    }
}

fn lstm_fields(l: &LstmLayerParams) -> Vec<(&'static str, &Tensor)> {
    vec![
        ("w_i", &l.w_i),
        ("w_f", &l.w_f),
        ("w_g", &l.w_g),
        ("w_o", &l.w_o),
        ("u_i", &l.u_i),
        ("u_f", &l.u_f),
        ("u_g", &l.u_g),
        ("u_o", &l.u_o),
        ("b_i", &l.b_i),
        ("b_f", &l.b_f),
        ("b_g", &l.b_g),
        ("b_o", &l.b_o),
    ]
}

fn lstm_fields_mut(l: &mut LstmLayerParams) -> Vec<(&'static str, &mut Tensor)> {
    vec![
        ("w_i", &mut l.w_i),
        ("w_f", &mut l.w_f),
        ("w_g", &mut l.w_g),
        ("w_o", &mut l.w_o),
        ("u_i", &mut l.u_i),
        ("u_f", &mut l.u_f),
        ("u_g", &mut l.u_g),
        ("u_o", &mut l.u_o),
        ("b_i", &mut l.b_i),
        ("b_f", &mut l.b_f),
        ("b_g", &mut l.b_g),
        ("b_o", &mut l.b_o),
    ]
}

// ---------------------------------------------------------------------------
// Raw (inference) forwards
// ---------------------------------------------------------------------------

/// Frontend forward: phoneme embeddings (last conv layer output) and phone
/// logits per frame.
pub fn phoneme_forward(theta_p: &ThetaP, features: &Tensor) -> Result<(Tensor, Tensor)> {
    let emb = causal_conv_forward(&theta_p.conv, features)?;
    let logits = crate::layers::linear_forward(&theta_p.proj.w, &theta_p.proj.b, &emb)?;
    Ok((emb, logits))
}

/// Pronunciation forward: word embeddings (top LSTM layer outputs) and
/// log-softmax-normalized wordpiece rows.
pub fn word_forward(theta_w: &ThetaW, p_emb: &Tensor) -> Result<(Tensor, Tensor)> {
    let w_emb = lstm_stack_forward(&theta_w.lstm, p_emb, 0.0, false, 0)?;
    let logits = crate::layers::linear_forward(&theta_w.proj.w, &theta_w.proj.b, &w_emb)?;
    let (rows, cols) = (logits.dims()[0], logits.dims()[1]);
    let mut lp = vec![0.0; rows * cols];
    for r in 0..rows {
        log_softmax_row(logits.row(r), &mut lp[r * cols..(r + 1) * cols]);
    }
    Ok((w_emb, Tensor::new(vec![rows, cols], lp)?))
}

/// LU forward: intent logits from the final frame of the top LSTM layer.
pub fn lu_forward(theta_u: &ThetaU, w_emb: &Tensor) -> Result<Tensor> {
    if w_emb.rank() != 2 || w_emb.dims()[0] == 0 {
        return Err(SluError::Contract(format!(
            "lu_forward requires a non-empty [T×E] sequence, got {:?}",
            w_emb.dims()
        )));
    }
    let hidden = lstm_stack_forward(&theta_u.lstm, w_emb, 0.0, false, 0)?;
    let last = hidden.row(hidden.dims()[0] - 1);
    let mut logits = vec![0.0; theta_u.proj.out_dim()];
    theta_u.proj.forward_frame(last, &mut logits);
    Ok(Tensor::vector(logits))
}

/// All outputs of one batch inference pass.
#[derive(Debug, Clone)]
pub struct CascadeOutputs {
    pub phoneme_embeddings: Tensor,
    pub phone_logits: Tensor,
    pub word_embeddings: Tensor,
    pub wp_log_probs: Tensor,
    pub intent_logits: Tensor,
}

/// Composition of the three module forwards on a `[T×D]` feature matrix.
pub fn cascade_forward(params: &CascadeParams, features: &Tensor) -> Result<CascadeOutputs> {
    if features.rank() != 2 || features.dims()[1] != params.dims.feature_dim {
        return Err(SluError::Shape {
            op: "cascade_forward",
            left: vec![params.dims.feature_dim],
            right: features.dims().to_vec(),
        });
    }
    let (emb, phone_logits) = phoneme_forward(&params.theta_p, features)?;
    let idx = params.subsampled_indices(features.dims()[0]);
    if idx.is_empty() {
        return Err(SluError::Contract(format!(
            "{} frames leave nothing after ×{} subsampling",
            features.dims()[0],
            params.dims.subsample
        )));
    }
    let e_p = params.dims.embedding_dim();
    let mut sub = Vec::with_capacity(idx.len() * e_p);
    for &t in &idx {
        sub.extend_from_slice(emb.row(t));
    }
    let sub = Tensor::new(vec![idx.len(), e_p], sub)?;
    let (w_emb, wp_log_probs) = word_forward(&params.theta_w, &sub)?;
    let intent_logits = lu_forward(&params.theta_u, &w_emb)?;
    Ok(CascadeOutputs {
        phoneme_embeddings: emb,
        phone_logits,
        word_embeddings: w_emb,
        wp_log_probs,
        intent_logits,
    })
}

// ---------------------------------------------------------------------------
// Tape (training) forwards
// ---------------------------------------------------------------------------

pub struct ThetaPNodes {
    pub conv: Vec<ConvLayerNodes>,
    pub proj: LinearNodes,
}

pub struct ThetaWNodes {
    pub lstm: Vec<LstmLayerNodes>,
    pub proj: LinearNodes,
}

pub struct ThetaUNodes {
    pub lstm: Vec<LstmLayerNodes>,
    pub proj: LinearNodes,
}

fn lstm_node_fields(n: &LstmLayerNodes) -> [(&'static str, NodeId); 12] {
    [
        ("w_i", n.w_i),
        ("w_f", n.w_f),
        ("w_g", n.w_g),
        ("w_o", n.w_o),
        ("u_i", n.u_i),
        ("u_f", n.u_f),
        ("u_g", n.u_g),
        ("u_o", n.u_o),
        ("b_i", n.b_i),
        ("b_f", n.b_f),
        ("b_g", n.b_g),
        ("b_o", n.b_o),
    ]
}

impl ThetaPNodes {
    /// `(canonical name, leaf node)` pairs, matching `named_params` naming.
    pub fn bindings(&self) -> Vec<(String, NodeId)> {
        let mut out = Vec::new();
        for (l, layer) in self.conv.iter().enumerate() {
            for (d, &tap) in layer.taps.iter().enumerate() {
                out.push((format!("theta_p.conv.{}.tap.{}", l, d), tap));
            }
            out.push((format!("theta_p.conv.{}.bias", l), layer.b));
        }
        out.push(("theta_p.proj.w".into(), self.proj.w));
        out.push(("theta_p.proj.b".into(), self.proj.b));
        out
    }
}

impl ThetaWNodes {
    pub fn bindings(&self) -> Vec<(String, NodeId)> {
        let mut out = Vec::new();
        for (l, layer) in self.lstm.iter().enumerate() {
            for (suffix, id) in lstm_node_fields(layer) {
                out.push((format!("theta_w.lstm.{}.{}", l, suffix), id));
            }
        }
        out.push(("theta_w.proj.w".into(), self.proj.w));
        out.push(("theta_w.proj.b".into(), self.proj.b));
        out
    }
}

impl ThetaUNodes {
    pub fn bindings(&self) -> Vec<(String, NodeId)> {
        let mut out = Vec::new();
        for (l, layer) in self.lstm.iter().enumerate() {
            for (suffix, id) in lstm_node_fields(layer) {
                out.push((format!("theta_u.lstm.{}.{}", l, suffix), id));
            }
        }
        out.push(("theta_u.proj.w".into(), self.proj.w));
        out.push(("theta_u.proj.b".into(), self.proj.b));
        out
    }
}

impl ThetaP {
    pub fn leaves(&self, tape: &mut Tape) -> ThetaPNodes {
        ThetaPNodes {
            conv: self.conv.layers.iter().map(|l| l.leaves(tape)).collect(),
            proj: self.proj.leaves(tape),
        }
    }
}

impl ThetaW {
    pub fn leaves(&self, tape: &mut Tape) -> ThetaWNodes {
        ThetaWNodes {
            lstm: self.lstm.iter().map(|l| l.leaves(tape)).collect(),
            proj: self.proj.leaves(tape),
        }
    }
}

impl ThetaU {
    pub fn leaves(&self, tape: &mut Tape) -> ThetaUNodes {
        ThetaUNodes {
            lstm: self.lstm.iter().map(|l| l.leaves(tape)).collect(),
            proj: self.proj.leaves(tape),
        }
    }
}

/// Tape frontend forward over per-frame feature nodes; returns per-frame
/// embedding nodes and the `[T×P]` phone-logit matrix node.
pub fn phoneme_forward_tape(
    tape: &mut Tape,
    theta_p: &ThetaP,
    nodes: &ThetaPNodes,
    frames: &[NodeId],
) -> Result<(Vec<NodeId>, NodeId)> {
    let emb = causal_conv_tape(tape, &theta_p.conv, &nodes.conv, frames)?;
    let emb_mat = tape.stack_rows(&emb)?;
    let prod = tape.matmul_nt(emb_mat, nodes.proj.w)?;
    let logits = tape.add_row_vec(prod, nodes.proj.b)?;
    Ok((emb, logits))
}

/// Tape pronunciation forward; returns per-frame top hidden nodes and the
/// `[T×(V+1)]` log-prob matrix node.
pub fn word_forward_tape(
    tape: &mut Tape,
    theta_w: &ThetaW,
    nodes: &ThetaWNodes,
    p_emb: &[NodeId],
    dropout_p: f64,
    training: bool,
    dropout_seed: u64,
) -> Result<(Vec<NodeId>, NodeId)> {
    let w_emb = lstm_stack_tape(
        tape,
        &theta_w.lstm,
        &nodes.lstm,
        p_emb,
        dropout_p,
        training,
        dropout_seed,
    )?;
    let h_mat = tape.stack_rows(&w_emb)?;
    let prod = tape.matmul_nt(h_mat, nodes.proj.w)?;
    let logits = tape.add_row_vec(prod, nodes.proj.b)?;
    let lp = tape.log_softmax(logits);
    Ok((w_emb, lp))
}

/// Tape LU forward: intent logits node from the final frame.
pub fn lu_forward_tape(
    tape: &mut Tape,
    theta_u: &ThetaU,
    nodes: &ThetaUNodes,
    w_emb: &[NodeId],
    dropout_p: f64,
    training: bool,
    dropout_seed: u64,
) -> Result<NodeId> {
    let hidden = lstm_stack_tape(
        tape,
        &theta_u.lstm,
        &nodes.lstm,
        w_emb,
        dropout_p,
        training,
        dropout_seed,
    )?;
    let last = *hidden.last().ok_or_else(|| {
        SluError::Contract("lu_forward_tape requires a non-empty sequence".into())
    })?;
    linear_tape(tape, nodes.proj, last)
}

/// Outputs of a full-graph tape forward, with the leaf bundles so callers
/// can map gradients back to named parameters.
pub struct CascadeTapeOutputs {
    /// `[T×P]` matrix node.
    pub phone_logits: NodeId,
    pub wp_log_probs: NodeId,
    pub intent_logits: NodeId,
    pub p_nodes: ThetaPNodes,
    pub w_nodes: ThetaWNodes,
    pub u_nodes: ThetaUNodes,
}

/// Whole-cascade tape forward in one graph, so a joint loss reaches every
/// parameter whose tensor has `requires_grad` set. Frozen modules simply get
/// no gradient buffers.
pub fn cascade_forward_tape(
    tape: &mut Tape,
    params: &CascadeParams,
    features: &Tensor,
    dropout_p: f64,
    training: bool,
    dropout_seed: u64,
) -> Result<CascadeTapeOutputs> {
    let t_len = features.dims()[0];
    let frames: Vec<NodeId> = (0..t_len)
        .map(|t| tape.constant(Tensor::vector(features.row(t).to_vec())))
        .collect();
    let p_nodes = params.theta_p.leaves(tape);
    let (emb, phone_logits) = phoneme_forward_tape(tape, &params.theta_p, &p_nodes, &frames)?;
    let idx = params.subsampled_indices(t_len);
    let sub: Vec<NodeId> = idx.iter().map(|&t| emb[t]).collect();
    if sub.is_empty() {
        return Err(SluError::Contract("empty sequence after subsampling".into()));
    }
    let w_nodes = params.theta_w.leaves(tape);
    let (w_emb, wp_log_probs) = word_forward_tape(
        tape,
        &params.theta_w,
        &w_nodes,
        &sub,
        dropout_p,
        training,
        dropout_seed,
    )?;
    let u_nodes = params.theta_u.leaves(tape);
    let intent_logits = lu_forward_tape(
        tape,
        &params.theta_u,
        &u_nodes,
        &w_emb,
        dropout_p,
        training,
        dropout_seed.wrapping_add(101),
    )?;
    Ok(CascadeTapeOutputs {
        phone_logits,
        wp_log_probs,
        intent_logits,
        p_nodes,
        w_nodes,
        u_nodes,
    })
}

// ---------------------------------------------------------------------------
// Streaming
// ---------------------------------------------------------------------------

/// Per-frame outputs of [`stream_push`]. The wordpiece row and intent logits
/// are absent on frames the subsampler skips.
#[derive(Debug, Clone)]
pub struct StreamOutput {
    pub frame_index: usize,
    pub phone_logits: Vec<f64>,
    pub phone_posterior: Vec<f64>,
    pub wp_log_probs: Option<Vec<f64>>,
    pub intent_logits: Option<Vec<f64>>,
}

/// Streaming inference state: conv ring buffers plus LSTM states. One
/// session per decoding stream; sessions are independent.
#[derive(Debug, Clone)]
pub struct StreamingSession {
    conv_bufs: Vec<VecDeque<Vec<f64>>>,
    w_states: Vec<LstmState>,
    u_states: Vec<LstmState>,
    frames_seen: usize,
}

impl StreamingSession {
    pub fn new(params: &CascadeParams) -> Self {
        StreamingSession {
            conv_bufs: params
                .theta_p
                .conv
                .layers
                .iter()
                .map(|_| VecDeque::new())
                .collect(),
            w_states: params
                .theta_w
                .lstm
                .iter()
                .map(|l| LstmState::zeros(l.hidden_dim))
                .collect(),
            u_states: params
                .theta_u
                .lstm
                .iter()
                .map(|l| LstmState::zeros(l.hidden_dim))
                .collect(),
            frames_seen: 0,
        }
    }

    pub fn reset(&mut self) {
        for buf in &mut self.conv_bufs {
            buf.clear();
        }
        for s in &mut self.w_states {
            *s = LstmState::zeros(s.h.len());
        }
        for s in &mut self.u_states {
            *s = LstmState::zeros(s.h.len());
        }
        self.frames_seen = 0;
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }
}

/// Feed one feature frame; after pushing frames `0..=t` the outputs equal
/// [`cascade_forward`] on the `t+1`-frame prefix, bitwise.
pub fn stream_push(
    session: &mut StreamingSession,
    params: &CascadeParams,
    frame: &[f64],
) -> Result<StreamOutput> {
    if frame.len() != params.dims.feature_dim {
        return Err(SluError::Shape {
            op: "stream_push",
            left: vec![params.dims.feature_dim],
            right: vec![frame.len()],
        });
    }
    let activation = params.theta_p.conv.activation;
    // conv layers with ring buffers of previous inputs
    let mut current: Vec<f64> = frame.to_vec();
    for (layer, buf) in params
        .theta_p
        .conv
        .layers
        .iter()
        .zip(session.conv_bufs.iter_mut())
    {
        let mut out = vec![0.0; layer.out_dim];
        {
            let cur = &current;
            conv_frame(
                layer,
                |d| {
                    if d == 0 {
                        Some(cur.as_slice())
                    } else {
                        let n = buf.len();
                        if d <= n {
                            Some(buf[n - d].as_slice())
                        } else {
                            None
                        }
                    }
                },
                activation,
                &mut out,
            );
        }
        if layer.kernel_width > 1 {
            buf.push_back(std::mem::take(&mut current));
            while buf.len() > layer.kernel_width - 1 {
                buf.pop_front();
            }
        }
        current = out;
    }
    let emb = current;
    let mut phone_logits = vec![0.0; params.theta_p.proj.out_dim()];
    params.theta_p.proj.forward_frame(&emb, &mut phone_logits);
    let mut phone_posterior = vec![0.0; phone_logits.len()];
    softmax_row(&phone_logits, &mut phone_posterior);

    session.frames_seen += 1;
    let feed_word = session.frames_seen % params.dims.subsample == 0;
    let (mut wp_row, mut intent_logits) = (None, None);
    if feed_word {
        let mut x = Tensor::vector(emb);
        for (layer, state) in params.theta_w.lstm.iter().zip(session.w_states.iter_mut()) {
            let (h, next) = lstm_step(layer, &x, state)?;
            *state = next;
            x = h;
        }
        let mut logits = vec![0.0; params.theta_w.proj.out_dim()];
        params.theta_w.proj.forward_frame(x.data(), &mut logits);
        let mut lp = vec![0.0; logits.len()];
        log_softmax_row(&logits, &mut lp);
        wp_row = Some(lp);

        for (layer, state) in params.theta_u.lstm.iter().zip(session.u_states.iter_mut()) {
            let (h, next) = lstm_step(layer, &x, state)?;
            *state = next;
            x = h;
        }
        let mut ilogits = vec![0.0; params.theta_u.proj.out_dim()];
        params.theta_u.proj.forward_frame(x.data(), &mut ilogits);
        intent_logits = Some(ilogits);
    }

    Ok(StreamOutput {
        frame_index: session.frames_seen - 1,
        phone_logits,
        phone_posterior,
        wp_log_probs: wp_row,
        intent_logits,
    })
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

fn meta_tensor(dims: &CascadeDims) -> Tensor {
    let mut v: Vec<f64> = vec![
        dims.feature_dim as f64,
        dims.p_classes as f64,
        dims.w_layers as f64,
        dims.w_hidden as f64,
        dims.vocab_size as f64,
        dims.u_layers as f64,
        dims.u_hidden as f64,
        dims.num_intents as f64,
        dims.subsample as f64,
        dims.activation as f64,
        dims.conv.len() as f64,
    ];
    for &(k, i, o) in &dims.conv {
        v.push(k as f64);
        v.push(i as f64);
        v.push(o as f64);
    }
    Tensor::vector(v)
}

fn dims_from_meta(data: &[f64]) -> Result<CascadeDims> {
    if data.len() < 11 {
        return Err(SluError::Format("checkpoint meta record too short".into()));
    }
    let at = |i: usize| data[i] as usize;
    let n_conv = at(10);
    if data.len() != 11 + 3 * n_conv {
        return Err(SluError::Format("checkpoint meta record malformed".into()));
    }
    let conv = (0..n_conv)
        .map(|l| (at(11 + 3 * l), at(12 + 3 * l), at(13 + 3 * l)))
        .collect();
    let dims = CascadeDims {
        feature_dim: at(0),
        conv,
        p_classes: at(1),
        w_layers: at(2),
        w_hidden: at(3),
        vocab_size: at(4),
        u_layers: at(5),
        u_hidden: at(6),
        num_intents: at(7),
        subsample: at(8),
        activation: data[9] as u32,
    };
    dims.validate()?;
    Ok(dims)
}

fn write_param(w: &mut impl Write, name: &str, t: &Tensor) -> Result<()> {
    let name_bytes = name.as_bytes();
    w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
    w.write_all(name_bytes)?;
    w.write_all(&[t.rank() as u8])?;
    for &d in t.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Write named parameter tensors in the cascade checkpoint container format.
pub fn save_named_tensors(path: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        write_param(&mut w, name, t)?;
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(SluError::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "checkpoint truncated",
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}

/// Read all named tensors from a checkpoint container.
pub fn load_named_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let magic = c.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(SluError::Format(format!(
            "{} is not a cascade checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(SluError::Format(format!(
            "checkpoint version {} unsupported",
            version
        )));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| SluError::Format("checkpoint name is not UTF-8".into()))?;
        let rank = c.take(1)?[0] as usize;
        if rank > 3 {
            return Err(SluError::Format(format!("tensor rank {} exceeds 3", rank)));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(c.f64()?);
        }
        out.push((name, Tensor::new(dims, data)?));
    }
    if c.pos != bytes.len() {
        return Err(SluError::Format("trailing bytes after checkpoint".into()));
    }
    Ok(out)
}

/// Save the full cascade (parameters plus a `meta.cfg` record describing the
/// architecture).
pub fn save_checkpoint(params: &CascadeParams, path: &Path) -> Result<()> {
    let meta = meta_tensor(&params.dims);
    let mut tensors: Vec<(String, &Tensor)> = vec![("meta.cfg".into(), &meta)];
    tensors.extend(params.named_params());
    save_named_tensors(path, &tensors)
}

/// Load a cascade checkpoint; `load(save(p)) == p` bitwise.
pub fn load_checkpoint(path: &Path) -> Result<CascadeParams> {
    let tensors = load_named_tensors(path)?;
    let meta = tensors
        .iter()
        .find(|(n, _)| n == "meta.cfg")
        .ok_or_else(|| SluError::Format("checkpoint missing meta.cfg".into()))?;
    let dims = dims_from_meta(meta.1.data())?;
    let mut params = CascadeParams::init(dims, 0)?;
    let mut filled = 0usize;
    {
        let mut slots = params.named_params_mut();
        for (name, tensor) in &tensors {
            if name == "meta.cfg" {
                continue;
            }
            match slots.iter_mut().find(|(n, _)| n == name) {
                Some((_, slot)) => {
                    if slot.dims() != tensor.dims() {
                        return Err(SluError::Format(format!(
                            "parameter {} has shape {:?}, expected {:?}",
                            name,
                            tensor.dims(),
                            slot.dims()
                        )));
                    }
                    **slot = tensor.clone();
                    filled += 1;
                }
                None => {
                    return Err(SluError::Format(format!(
                        "unexpected parameter {} in checkpoint",
                        name
                    )))
                }
            }
        }
        if filled != slots.len() {
            return Err(SluError::Format(format!(
                "checkpoint fills {} of {} parameters",
                filled,
                slots.len()
            )));
        }
    }
    Ok(params)
}
