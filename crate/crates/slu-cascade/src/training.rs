//! Optimizer, learning-rate schedule, and the training procedures: stepwise
//! phase training (phoneme → word → intent) and joint multi-target training
//! of the word and intent modules with the frontend fixed.
//!
//! Every run is a pure function of (data, config, seed). Batches are
//! bucketed by length; per-utterance gradients inside a batch may be
//! computed in parallel but are reduced in utterance order, so loss
//! histories are bitwise reproducible. Frozen-module activations are
//! computed once per phase and cached, never per epoch.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{NodeId, Tape};
use crate::bpe::{bpe_encode, BpeVocab, BLANK_ID};
use crate::cascade::{
    cascade_forward, lu_forward, lu_forward_tape, phoneme_forward, phoneme_forward_tape,
    word_forward, word_forward_tape, CascadeParams, ThetaP, ThetaU, ThetaW,
};
use crate::corpus::{load_utterance_features, Utterance};
use crate::error::{Result, SluError};
use crate::losses::{
    ctc_loss, ctc_loss_tape, frame_ce_loss, frame_ce_loss_tape, intent_ce_loss,
    intent_ce_loss_tape, mtl_loss, mtl_loss_tape, CtcLabelSequence, MtlWeight,
};
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Bias-corrected Adam state, one moment pair per named parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl AdamState {
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Anything with a canonical named-parameter listing can be trained.
pub trait NamedParams {
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;
}

impl NamedParams for CascadeParams {
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        CascadeParams::named_params_mut(self)
    }
}

/// One bias-corrected Adam update over the parameters named in `grads`.
/// Parameters without a gradient entry are untouched.
pub fn adam_step<M: NamedParams>(
    state: &mut AdamState,
    model: &mut M,
    grads: &BTreeMap<String, Vec<f64>>,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let mut slots = model.named_params_mut();
    for (name, g) in grads {
        let slot = slots
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| SluError::Contract(format!("gradient for unknown parameter {}", name)))?;
        let p = &mut *slot.1;
        if p.len() != g.len() {
            return Err(SluError::Contract(format!(
                "gradient for {} has {} values, parameter has {}",
                name,
                g.len(),
                p.len()
            )));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let data = p.data_mut();
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Scale all gradients so their global L2 norm is at most `clip`.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f64>>, clip: f64) {
    let mut sq = 0.0;
    for g in grads.values() {
        for v in g {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > clip && norm > 0.0 {
        let scale = clip / norm;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Learning-rate schedule and early stop
// ---------------------------------------------------------------------------

/// Halve-on-increase schedule with best-so-far early stopping: the rate is
/// cut in half whenever validation loss exceeds the previous epoch's, and
/// training stops after `patience` consecutive epochs without a new best
/// (ties count as non-improvement).
#[derive(Debug, Clone)]
pub struct TrainSchedule {
    pub lr: f64,
    pub halve_on_val_increase: bool,
    pub patience: usize,
    best_val: f64,
    prev_val: Option<f64>,
    epochs_without_improvement: usize,
}

impl TrainSchedule {
    pub fn new(lr: f64, patience: usize) -> Self {
        TrainSchedule {
            lr,
            halve_on_val_increase: true,
            patience,
            best_val: f64::INFINITY,
            prev_val: None,
            epochs_without_improvement: 0,
        }
    }

    pub fn best_val(&self) -> f64 {
        self.best_val
    }
}

/// Apply one epoch's validation loss; returns the (possibly halved) rate and
/// whether training should stop.
pub fn schedule_update(sched: &mut TrainSchedule, epoch_val_loss: f64) -> (f64, bool) {
    if sched.halve_on_val_increase {
        if let Some(prev) = sched.prev_val {
            if epoch_val_loss > prev {
                sched.lr *= 0.5;
            }
        }
    }
    sched.prev_val = Some(epoch_val_loss);
    if epoch_val_loss < sched.best_val {
        sched.best_val = epoch_val_loss;
        sched.epochs_without_improvement = 0;
    } else {
        sched.epochs_without_improvement += 1;
    }
    (sched.lr, sched.epochs_without_improvement >= sched.patience)
}

// ---------------------------------------------------------------------------
// Prepared data
// ---------------------------------------------------------------------------

/// An utterance with everything a phase needs resident in memory.
/// `cached_input` holds the output of whatever frozen prefix of the cascade
/// the current phase trains on top of.
#[derive(Debug, Clone)]
pub struct PreparedUtt {
    pub id: String,
    pub features: Tensor,
    pub alignment: Vec<usize>,
    pub label: Option<CtcLabelSequence>,
    pub intent: Option<usize>,
    pub cached_input: Option<Tensor>,
}

/// Load features and targets for a manifest slice. When `vocab` is given the
/// transcript is BPE-encoded and CTC feasibility is validated against the
/// subsampled frame count.
pub fn prepare_utterances(
    corpus_dir: &Path,
    utts: &[Utterance],
    vocab: Option<&BpeVocab>,
    subsample: usize,
) -> Result<Vec<PreparedUtt>> {
    let mut out = Vec::with_capacity(utts.len());
    for u in utts {
        let features = load_utterance_features(corpus_dir, u)?;
        if u.phones.len() != u.frames {
            return Err(SluError::Data(format!(
                "utterance {}: alignment length {} != frames {}",
                u.id,
                u.phones.len(),
                u.frames
            )));
        }
        let label = match vocab {
            Some(v) => {
                let ids = bpe_encode(v, &u.text)?;
                if ids.is_empty() {
                    return Err(SluError::Data(format!(
                        "utterance {}: empty transcript",
                        u.id
                    )));
                }
                let label = CtcLabelSequence::new(ids, BLANK_ID)?;
                let t_sub = (1..=u.frames).filter(|t| t % subsample == 0).count();
                if t_sub < label.min_frames() {
                    return Err(SluError::Data(format!(
                        "utterance {}: CTC-infeasible ({} subsampled frames < {} required)",
                        u.id,
                        t_sub,
                        label.min_frames()
                    )));
                }
                Some(label)
            }
            None => None,
        };
        out.push(PreparedUtt {
            id: u.id.clone(),
            features,
            alignment: u.phones.clone(),
            label,
            intent: u.intent.as_ref().map(|i| i.id),
            cached_input: None,
        });
    }
    Ok(out)
}

fn subsample_rows(emb: &Tensor, subsample: usize) -> Result<Tensor> {
    let t_len = emb.dims()[0];
    let idx: Vec<usize> = (0..t_len).filter(|t| (t + 1) % subsample == 0).collect();
    if idx.is_empty() {
        return Err(SluError::Data(format!(
            "{} frames leave nothing after ×{} subsampling",
            t_len, subsample
        )));
    }
    let w = emb.dims()[1];
    let mut data = Vec::with_capacity(idx.len() * w);
    for &t in &idx {
        data.extend_from_slice(emb.row(t));
    }
    Tensor::new(vec![idx.len(), w], data)
}

/// Cache the frozen frontend's (subsampled) embeddings for a word-module
/// phase.
pub fn attach_phoneme_embeddings(
    params: &CascadeParams,
    utts: &mut [PreparedUtt],
) -> Result<()> {
    let subsample = params.dims.subsample;
    utts.par_iter_mut().try_for_each(|u| {
        let (emb, _) = phoneme_forward(&params.theta_p, &u.features)?;
        u.cached_input = Some(subsample_rows(&emb, subsample)?);
        Ok(())
    })
}

/// Cache the frozen frontend+word modules' embeddings for the stepwise
/// intent phase.
pub fn attach_word_embeddings(params: &CascadeParams, utts: &mut [PreparedUtt]) -> Result<()> {
    utts.par_iter_mut().try_for_each(|u| {
        let out = cascade_forward(params, &u.features)?;
        u.cached_input = Some(out.word_embeddings);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Generic training loop
// ---------------------------------------------------------------------------

/// Per-phase knobs; `lr` is the initial rate.
#[derive(Debug, Clone)]
pub struct PhaseConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub dropout: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub stopped_early: bool,
}

/// Length-bucketed batches. The first epoch runs shortest-first (cheap
/// curriculum that stabilizes early CTC alignment); later epochs shuffle the
/// bucket order.
fn batch_plan(
    train: &[PreparedUtt],
    batch_size: usize,
    shuffle: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by(|&a, &b| {
        (train[a].features.dims()[0], train[a].id.as_str())
            .cmp(&(train[b].features.dims()[0], train[b].id.as_str()))
    });
    let mut batches: Vec<Vec<usize>> = order
        .chunks(batch_size.max(1))
        .map(|c| c.to_vec())
        .collect();
    if shuffle {
        batches.shuffle(rng);
    }
    batches
}

/// Deterministic per-utterance dropout stream.
fn dropout_seed(base: u64, epoch: usize, utt_index: usize) -> u64 {
    base.wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add((epoch as u64) << 32)
        .wrapping_add(utt_index as u64)
}

/// Run epochs of mini-batch training until `max_epochs` or early stop.
///
/// `loss_grads(model, utt, dropout_seed)` returns the utterance loss and its
/// named gradients; `val_loss` is the evaluation-mode loss. Gradients within
/// a batch may be computed in parallel; the reduction is sequential in
/// utterance order and the mean gradient is clipped then fed to Adam.
pub fn run_training<M, F, V>(
    model: &mut M,
    train: &[PreparedUtt],
    val: &[PreparedUtt],
    cfg: &PhaseConfig,
    loss_grads: F,
    val_loss: V,
) -> Result<TrainOutcome>
where
    M: NamedParams + Sync,
    F: Fn(&M, &PreparedUtt, u64) -> Result<(f64, Vec<(String, Vec<f64>)>)> + Sync,
    V: Fn(&M, &PreparedUtt) -> Result<f64> + Sync,
{
    if train.is_empty() || val.is_empty() {
        return Err(SluError::Data("training needs non-empty train and val sets".into()));
    }
    let mut adam = AdamState::default();
    let mut sched = TrainSchedule::new(cfg.lr, cfg.patience);
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x626174); // batching stream

    for epoch in 0..cfg.max_epochs {
        let batches = batch_plan(train, cfg.batch_size, epoch > 0, &mut rng);
        let mut loss_sum = 0.0;
        for batch in &batches {
            let results: Vec<Result<(f64, Vec<(String, Vec<f64>)>)>> = batch
                .par_iter()
                .map(|&i| loss_grads(&*model, &train[i], dropout_seed(cfg.seed, epoch, i)))
                .collect();
            let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in results {
                let (loss, grads) = r?;
                loss_sum += loss;
                for (name, g) in grads {
                    match acc.get_mut(&name) {
                        Some(a) => {
                            for (av, gv) in a.iter_mut().zip(&g) {
                                *av += gv;
                            }
                        }
                        None => {
                            acc.insert(name, g);
                        }
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in acc.values_mut() {
                for v in g.iter_mut() {
                    *v *= inv;
                }
            }
            clip_global_norm(&mut acc, cfg.clip_norm);
            adam_step(&mut adam, model, &acc, sched.lr)?;
        }
        let train_loss = loss_sum / train.len() as f64;

        let val_losses: Vec<Result<f64>> =
            val.par_iter().map(|u| val_loss(&*model, u)).collect();
        let mut val_sum = 0.0;
        for v in val_losses {
            val_sum += v?;
        }
        let vl = val_sum / val.len() as f64;

        let lr_used = sched.lr;
        let (_, stop) = schedule_update(&mut sched, vl);
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss: vl,
            lr: lr_used,
        });
        log::info!(
            "epoch {}: train {:.5} val {:.5} lr {:.6}",
            epoch,
            train_loss,
            vl,
            lr_used
        );
        if stop {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        history,
        stopped_early,
    })
}

// ---------------------------------------------------------------------------
// Phase drivers
// ---------------------------------------------------------------------------

fn grads_from_bindings(
    tape: &Tape,
    bindings: &[(String, NodeId)],
) -> Vec<(String, Vec<f64>)> {
    bindings
        .iter()
        .filter_map(|(name, id)| tape.grad(*id).map(|g| (name.clone(), g.to_vec())))
        .collect()
}

fn constant_rows(tape: &mut Tape, rows: &Tensor) -> Vec<NodeId> {
    (0..rows.dims()[0])
        .map(|t| tape.constant(Tensor::vector(rows.row(t).to_vec())))
        .collect()
}

fn set_grad_theta_p(theta_p: &mut ThetaP, on: bool) {
    for layer in &mut theta_p.conv.layers {
        for t in &mut layer.taps {
            t.set_requires_grad(on);
        }
        layer.b.set_requires_grad(on);
    }
    theta_p.proj.w.set_requires_grad(on);
    theta_p.proj.b.set_requires_grad(on);
}

fn set_grad_lstm(stack: &mut [crate::layers::LstmLayerParams], on: bool) {
    for l in stack {
        for t in [
            &mut l.w_i, &mut l.w_f, &mut l.w_g, &mut l.w_o, &mut l.u_i, &mut l.u_f, &mut l.u_g,
            &mut l.u_o, &mut l.b_i, &mut l.b_f, &mut l.b_g, &mut l.b_o,
        ] {
            t.set_requires_grad(on);
        }
    }
}

fn set_grad_theta_w(theta_w: &mut ThetaW, on: bool) {
    set_grad_lstm(&mut theta_w.lstm, on);
    theta_w.proj.w.set_requires_grad(on);
    theta_w.proj.b.set_requires_grad(on);
}

fn set_grad_theta_u(theta_u: &mut ThetaU, on: bool) {
    set_grad_lstm(&mut theta_u.lstm, on);
    theta_u.proj.w.set_requires_grad(on);
    theta_u.proj.b.set_requires_grad(on);
}

fn require_cached<'a>(utt: &'a PreparedUtt) -> &'a Tensor {
    utt.cached_input
        .as_ref()
        .expect("frozen-module activations attached before training")
}

/// Phase 1: train the acoustic-phonetic module with frame cross-entropy on
/// phone alignments.
pub fn train_phoneme(
    params: &mut CascadeParams,
    train: &[PreparedUtt],
    val: &[PreparedUtt],
    cfg: &PhaseConfig,
) -> Result<TrainOutcome> {
    set_grad_theta_p(&mut params.theta_p, true);
    let outcome = run_training(
        params,
        train,
        val,
        cfg,
        |model, utt, _seed| {
            let mut tape = Tape::new();
            let frames = constant_rows(&mut tape, &utt.features);
            let p_nodes = model.theta_p.leaves(&mut tape);
            let (_, logits) = phoneme_forward_tape(&mut tape, &model.theta_p, &p_nodes, &frames)?;
            let loss = frame_ce_loss_tape(&mut tape, logits, &utt.alignment)?;
            tape.backward(loss)?;
            let grads = grads_from_bindings(&tape, &p_nodes.bindings());
            Ok((tape.value(loss).item(), grads))
        },
        |model, utt| {
            let (_, logits) = phoneme_forward(&model.theta_p, &utt.features)?;
            frame_ce_loss(&logits, &utt.alignment)
        },
    );
    set_grad_theta_p(&mut params.theta_p, false);
    outcome
}

/// Phases 2–3: CTC training of the pronunciation module over wordpiece
/// targets, with the frontend frozen. Pre-training and fine-tuning differ
/// only in data and learning rate.
pub fn train_word_ctc(
    params: &mut CascadeParams,
    train: &mut [PreparedUtt],
    val: &mut [PreparedUtt],
    cfg: &PhaseConfig,
) -> Result<TrainOutcome> {
    for u in train.iter().chain(val.iter()) {
        if u.label.is_none() {
            return Err(SluError::Data(format!(
                "utterance {} has no CTC label; encode transcripts first",
                u.id
            )));
        }
    }
    attach_phoneme_embeddings(params, train)?;
    attach_phoneme_embeddings(params, val)?;
    set_grad_theta_w(&mut params.theta_w, true);
    let dropout = cfg.dropout;
    let outcome = run_training(
        params,
        train,
        val,
        cfg,
        move |model, utt, seed| {
            let mut tape = Tape::new();
            let frames = constant_rows(&mut tape, require_cached(utt));
            let w_nodes = model.theta_w.leaves(&mut tape);
            let (_, wp) = word_forward_tape(
                &mut tape,
                &model.theta_w,
                &w_nodes,
                &frames,
                dropout,
                true,
                seed,
            )?;
            let label = utt.label.as_ref().expect("validated above");
            let loss = ctc_loss_tape(&mut tape, wp, label)?;
            tape.backward(loss)?;
            let grads = grads_from_bindings(&tape, &w_nodes.bindings());
            Ok((tape.value(loss).item(), grads))
        },
        move |model, utt| {
            let (_, wp) = word_forward(&model.theta_w, require_cached(utt))?;
            ctc_loss(&wp, utt.label.as_ref().expect("validated above"))
        },
    );
    set_grad_theta_w(&mut params.theta_w, false);
    outcome
}

/// Phase 4 (stepwise): train the intent module with cross-entropy, frontend
/// and pronunciation modules frozen.
pub fn train_intent_stepwise(
    params: &mut CascadeParams,
    train: &mut [PreparedUtt],
    val: &mut [PreparedUtt],
    cfg: &PhaseConfig,
) -> Result<TrainOutcome> {
    check_intents(params, train.iter().chain(val.iter()))?;
    attach_word_embeddings(params, train)?;
    attach_word_embeddings(params, val)?;
    set_grad_theta_u(&mut params.theta_u, true);
    let dropout = cfg.dropout;
    let outcome = run_training(
        params,
        train,
        val,
        cfg,
        move |model, utt, seed| {
            let mut tape = Tape::new();
            let frames = constant_rows(&mut tape, require_cached(utt));
            let u_nodes = model.theta_u.leaves(&mut tape);
            let intent_logits = lu_forward_tape(
                &mut tape,
                &model.theta_u,
                &u_nodes,
                &frames,
                dropout,
                true,
                seed,
            )?;
            let loss = intent_ce_loss_tape(
                &mut tape,
                intent_logits,
                utt.intent.expect("validated above"),
            )?;
            tape.backward(loss)?;
            let grads = grads_from_bindings(&tape, &u_nodes.bindings());
            Ok((tape.value(loss).item(), grads))
        },
        |model, utt| {
            let logits = lu_forward(&model.theta_u, require_cached(utt))?;
            intent_ce_loss(&logits, utt.intent.expect("validated above"))
        },
    );
    set_grad_theta_u(&mut params.theta_u, false);
    outcome
}

fn check_intents<'a>(
    params: &CascadeParams,
    utts: impl Iterator<Item = &'a PreparedUtt>,
) -> Result<()> {
    for u in utts {
        match u.intent {
            Some(i) if i < params.dims.num_intents => {}
            Some(i) => {
                return Err(SluError::Data(format!(
                    "utterance {}: intent id {} ≥ {} intents",
                    u.id, i, params.dims.num_intents
                )))
            }
            None => {
                return Err(SluError::Data(format!(
                    "utterance {} has no intent label",
                    u.id
                )))
            }
        }
    }
    Ok(())
}

/// Joint multi-target phase: `α·intent CE + (1−α)·word CTC` trains the word
/// and intent modules together; the frontend stays fixed.
pub fn train_mtl(
    params: &mut CascadeParams,
    alpha: MtlWeight,
    train: &mut [PreparedUtt],
    val: &mut [PreparedUtt],
    cfg: &PhaseConfig,
) -> Result<TrainOutcome> {
    check_intents(params, train.iter().chain(val.iter()))?;
    for u in train.iter().chain(val.iter()) {
        if u.label.is_none() {
            return Err(SluError::Data(format!(
                "utterance {} has no CTC label; encode transcripts first",
                u.id
            )));
        }
    }
    attach_phoneme_embeddings(params, train)?;
    attach_phoneme_embeddings(params, val)?;
    set_grad_theta_w(&mut params.theta_w, true);
    set_grad_theta_u(&mut params.theta_u, true);
    let dropout = cfg.dropout;
    let outcome = run_training(
        params,
        train,
        val,
        cfg,
        move |model, utt, seed| {
            let mut tape = Tape::new();
            let frames = constant_rows(&mut tape, require_cached(utt));
            let w_nodes = model.theta_w.leaves(&mut tape);
            let (w_emb, wp) = word_forward_tape(
                &mut tape,
                &model.theta_w,
                &w_nodes,
                &frames,
                dropout,
                true,
                seed,
            )?;
            let ctc = ctc_loss_tape(&mut tape, wp, utt.label.as_ref().expect("validated"))?;
            let u_nodes = model.theta_u.leaves(&mut tape);
            let intent_logits = lu_forward_tape(
                &mut tape,
                &model.theta_u,
                &u_nodes,
                &w_emb,
                dropout,
                true,
                seed.wrapping_add(101),
            )?;
            let ice =
                intent_ce_loss_tape(&mut tape, intent_logits, utt.intent.expect("validated"))?;
            let loss = mtl_loss_tape(&mut tape, ice, ctc, alpha)?;
            tape.backward(loss)?;
            let mut grads = grads_from_bindings(&tape, &w_nodes.bindings());
            grads.extend(grads_from_bindings(&tape, &u_nodes.bindings()));
            Ok((tape.value(loss).item(), grads))
        },
        move |model, utt| {
            let (w_emb, wp) = word_forward(&model.theta_w, require_cached(utt))?;
            let ctc = ctc_loss(&wp, utt.label.as_ref().expect("validated"))?;
            let logits = lu_forward(&model.theta_u, &w_emb)?;
            let ice = intent_ce_loss(&logits, utt.intent.expect("validated"))?;
            Ok(mtl_loss(ice, ctc, alpha))
        },
    );
    set_grad_theta_w(&mut params.theta_w, false);
    set_grad_theta_u(&mut params.theta_u, false);
    outcome
}

/// Write the per-epoch loss history as CSV (epoch, train_loss, val_loss, lr).
pub fn write_history_csv(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut s = String::from("epoch,train_loss,val_loss,lr\n");
    for h in history {
        s.push_str(&format!(
            "{},{:.12},{:.12},{:.12}\n",
            h.epoch, h.train_loss, h.val_loss, h.lr
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}
