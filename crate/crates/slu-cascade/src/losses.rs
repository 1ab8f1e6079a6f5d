//! Training criteria: frame-level cross-entropy, CTC over wordpieces, intent
//! cross-entropy, and the weighted multi-target combination.
//!
//! The CTC loss is the standard forward recursion over the extended
//! (blank-interleaved) label in log space. Its gradient is computed by the
//! matching backward recursion and registered as a custom tape op, so the
//! whole loss is differentiable end to end. `ctc_loss_bruteforce` enumerates
//! every frame path and exists purely as an independent oracle.

use crate::autodiff::{CustomOp, NodeId, Tape};
use crate::error::{Result, SluError};
use crate::tensor::{log_softmax_row, log_sum_exp2, Tensor};

/// Blank-free CTC target over a vocabulary that reserves `blank_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtcLabelSequence {
    tokens: Vec<usize>,
    blank_id: usize,
}

impl CtcLabelSequence {
    pub fn new(tokens: Vec<usize>, blank_id: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(SluError::Contract("empty CTC label".into()));
        }
        if tokens.iter().any(|&t| t == blank_id) {
            return Err(SluError::Contract(format!(
                "CTC label contains blank id {}",
                blank_id
            )));
        }
        Ok(CtcLabelSequence { tokens, blank_id })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn blank_id(&self) -> usize {
        self.blank_id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Minimum number of frames that can emit this label:
    /// `len + count(adjacent repeats)`.
    pub fn min_frames(&self) -> usize {
        let repeats = self
            .tokens
            .windows(2)
            .filter(|w| w[0] == w[1])
            .count();
        self.tokens.len() + repeats
    }

    /// Extended label with blanks interleaved: `[b, l1, b, l2, ..., b]`.
    fn extended(&self) -> Vec<usize> {
        let mut ext = Vec::with_capacity(2 * self.tokens.len() + 1);
        ext.push(self.blank_id);
        for &t in &self.tokens {
            ext.push(t);
            ext.push(self.blank_id);
        }
        ext
    }
}

fn validate_ctc_inputs(log_probs: &Tensor, label: &CtcLabelSequence) -> Result<(usize, usize)> {
    if log_probs.rank() != 2 {
        return Err(SluError::Shape {
            op: "ctc_loss",
            left: log_probs.dims().to_vec(),
            right: vec![0, 0],
        });
    }
    let (t_len, classes) = (log_probs.dims()[0], log_probs.dims()[1]);
    if label.blank_id() >= classes || label.tokens().iter().any(|&t| t >= classes) {
        return Err(SluError::Contract(format!(
            "CTC token id out of range for {} classes",
            classes
        )));
    }
    if t_len < label.min_frames() {
        return Err(SluError::InfeasibleLabel(format!(
            "label needs ≥ {} frames, got {}",
            label.min_frames(),
            t_len
        )));
    }
    Ok((t_len, classes))
}

/// Shared forward(+backward) recursion. Returns the loss and, when
/// requested, `d loss / d log_probs` (row-major `[T×C]`).
fn ctc_forward_backward(
    log_probs: &Tensor,
    label: &CtcLabelSequence,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let (t_len, classes) = validate_ctc_inputs(log_probs, label)?;
    let ext = label.extended();
    let s_len = ext.len();
    let y = |t: usize, k: usize| log_probs.data()[t * classes + k];

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; t_len * s_len];
    alpha[0] = y(0, ext[0]);
    if s_len > 1 {
        alpha[1] = y(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_sum_exp2(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if s >= 2 && ext[s] != label.blank_id() && ext[s] != ext[s - 2] {
                a = log_sum_exp2(a, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = a + y(t, ext[s]);
        }
    }
    let last = (t_len - 1) * s_len;
    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_sum_exp2(log_p, alpha[last + s_len - 2]);
    }
    let loss = -log_p;

    if !want_grad {
        return Ok((loss, None));
    }

    // beta[t][s]: log-probability of completing the label from state s after
    // frame t (exclusive of frame t's emission).
    let mut beta = vec![neg; t_len * s_len];
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[(t + 1) * s_len + s] + y(t + 1, ext[s]);
            if s + 1 < s_len {
                b = log_sum_exp2(b, beta[(t + 1) * s_len + s + 1] + y(t + 1, ext[s + 1]));
            }
            if s + 2 < s_len && ext[s + 2] != label.blank_id() && ext[s + 2] != ext[s] {
                b = log_sum_exp2(b, beta[(t + 1) * s_len + s + 2] + y(t + 1, ext[s + 2]));
            }
            beta[t * s_len + s] = b;
        }
    }

    let mut grad = vec![0.0; t_len * classes];
    for t in 0..t_len {
        for s in 0..s_len {
            let g = alpha[t * s_len + s] + beta[t * s_len + s] - log_p;
            if g > neg {
                grad[t * classes + ext[s]] -= g.exp();
            }
        }
    }
    Ok((loss, Some(grad)))
}

/// Negative log-probability of `label` under CTC, summing over all
/// alignments via the forward recursion in log space.
pub fn ctc_loss(log_probs: &Tensor, label: &CtcLabelSequence) -> Result<f64> {
    ctc_forward_backward(log_probs, label, false).map(|(l, _)| l)
}

struct CtcGradOp {
    grad: Vec<f64>,
}

impl CustomOp for CtcGradOp {
    fn name(&self) -> &'static str {
        "ctc_loss"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _out_value: &Tensor,
        out_grad: &[f64],
        input_grads: &mut [Option<Vec<f64>>],
    ) {
        if let Some(g) = input_grads[0].as_mut() {
            for (gi, di) in g.iter_mut().zip(&self.grad) {
                *gi += out_grad[0] * di;
            }
        }
    }
}

/// Differentiable CTC loss node over a `[T×(V+1)]` log-prob node.
pub fn ctc_loss_tape(tape: &mut Tape, log_probs: NodeId, label: &CtcLabelSequence) -> Result<NodeId> {
    let (loss, grad) = ctc_forward_backward(tape.value(log_probs), label, true)?;
    let op = CtcGradOp {
        grad: grad.expect("gradient requested"),
    };
    Ok(tape.custom(vec![log_probs], Tensor::scalar(loss), Box::new(op)))
}

/// Oracle: enumerate every `(V+1)^T` frame path, collapse (dedupe adjacent
/// repeats, then strip blanks), and sum the probabilities of paths that
/// collapse to `label`.
pub fn ctc_loss_bruteforce(log_probs: &Tensor, label: &CtcLabelSequence) -> Result<f64> {
    let (t_len, classes) = validate_ctc_inputs(log_probs, label)?;
    let total_paths = (classes as f64).powi(t_len as i32);
    if total_paths > 1e7 {
        return Err(SluError::Contract(format!(
            "{}^{} paths exceed the brute-force budget",
            classes, t_len
        )));
    }
    let mut path = vec![0usize; t_len];
    let mut total = 0.0f64;
    loop {
        // collapse: dedupe adjacent repeats, then strip blanks
        let mut collapsed = Vec::with_capacity(t_len);
        let mut prev = usize::MAX;
        for &p in &path {
            if p != prev {
                if p != label.blank_id() {
                    collapsed.push(p);
                }
                prev = p;
            }
        }
        if collapsed == label.tokens() {
            let mut lp = 0.0;
            for (t, &p) in path.iter().enumerate() {
                lp += log_probs.data()[t * classes + p];
            }
            total += lp.exp();
        }
        // next path in odometer order
        let mut i = 0;
        loop {
            if i == t_len {
                return Ok(-total.ln());
            }
            path[i] += 1;
            if path[i] < classes {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Mean over frames of `-log softmax(logits_t)[alignment_t]`.
pub fn frame_ce_loss(logits: &Tensor, alignment: &[usize]) -> Result<f64> {
    if logits.rank() != 2 || logits.dims()[0] != alignment.len() {
        return Err(SluError::Contract(format!(
            "alignment length {} does not match logits {:?}",
            alignment.len(),
            logits.dims()
        )));
    }
    let classes = logits.dims()[1];
    if let Some(&bad) = alignment.iter().find(|&&p| p >= classes) {
        return Err(SluError::Contract(format!(
            "phone id {} out of range for {} classes",
            bad, classes
        )));
    }
    let t_len = alignment.len();
    let mut ls = vec![0.0; classes];
    let mut total = 0.0;
    for (t, &p) in alignment.iter().enumerate() {
        log_softmax_row(logits.row(t), &mut ls);
        total += -ls[p];
    }
    Ok(total / t_len as f64)
}

/// Tape version of [`frame_ce_loss`] over a `[T×P]` logits node.
pub fn frame_ce_loss_tape(tape: &mut Tape, logits: NodeId, alignment: &[usize]) -> Result<NodeId> {
    let dims = tape.value(logits).dims().to_vec();
    if dims.len() != 2 || dims[0] != alignment.len() {
        return Err(SluError::Contract(format!(
            "alignment length {} does not match logits {:?}",
            alignment.len(),
            dims
        )));
    }
    let ls = tape.log_softmax(logits);
    let mut picks = Vec::with_capacity(alignment.len());
    for (t, &p) in alignment.iter().enumerate() {
        let row = tape.row_select(ls, t)?;
        picks.push(tape.pick(row, p)?);
    }
    let sum = tape.sum_list(&picks)?;
    Ok(tape.scale(sum, -1.0 / alignment.len() as f64))
}

/// `-log softmax(logits)[intent]`.
pub fn intent_ce_loss(logits: &Tensor, intent: usize) -> Result<f64> {
    if logits.rank() != 1 {
        return Err(SluError::Contract(format!(
            "intent logits must be rank-1, got {:?}",
            logits.dims()
        )));
    }
    if intent >= logits.len() {
        return Err(SluError::Contract(format!(
            "intent id {} out of range for {} intents",
            intent,
            logits.len()
        )));
    }
    let mut ls = vec![0.0; logits.len()];
    log_softmax_row(logits.data(), &mut ls);
    Ok(-ls[intent])
}

/// Tape version of [`intent_ce_loss`].
pub fn intent_ce_loss_tape(tape: &mut Tape, logits: NodeId, intent: usize) -> Result<NodeId> {
    let n = tape.value(logits).len();
    if intent >= n {
        return Err(SluError::Contract(format!(
            "intent id {} out of range for {} intents",
            intent, n
        )));
    }
    let ls = tape.log_softmax(logits);
    let p = tape.pick(ls, intent)?;
    Ok(tape.scale(p, -1.0))
}

/// Interpolation weight for the multi-target loss, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtlWeight {
    alpha: f64,
}

impl MtlWeight {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(SluError::Contract(format!(
                "MTL weight {} outside [0,1]",
                alpha
            )));
        }
        Ok(MtlWeight { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// `α·intent_loss + (1−α)·ctc_word_loss`; exact at the endpoints.
pub fn mtl_loss(intent_loss: f64, ctc_word_loss: f64, w: MtlWeight) -> f64 {
    if w.alpha == 1.0 {
        return intent_loss;
    }
    if w.alpha == 0.0 {
        return ctc_word_loss;
    }
    w.alpha * intent_loss + (1.0 - w.alpha) * ctc_word_loss
}

/// Tape version of [`mtl_loss`]; gradient flows to both branches.
pub fn mtl_loss_tape(
    tape: &mut Tape,
    intent_loss: NodeId,
    ctc_word_loss: NodeId,
    w: MtlWeight,
) -> Result<NodeId> {
    let a = tape.scale(intent_loss, w.alpha);
    let b = tape.scale(ctc_word_loss, 1.0 - w.alpha);
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_multi;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_log_probs(t_len: usize, classes: usize) -> Tensor {
        let v = (1.0 / classes as f64).ln();
        Tensor::new(vec![t_len, classes], vec![v; t_len * classes]).unwrap()
    }

    fn random_log_probs(rng: &mut ChaCha8Rng, t_len: usize, classes: usize) -> Tensor {
        let mut data = vec![0.0; t_len * classes];
        for t in 0..t_len {
            let logits: Vec<f64> = (0..classes).map(|_| rng.gen_range(-2.0..2.0)).collect();
            log_softmax_row(&logits, &mut data[t * classes..(t + 1) * classes]);
        }
        Tensor::new(vec![t_len, classes], data).unwrap()
    }

    #[test]
    fn ctc_t1_single_alignment() {
        // blank=0, vocab {a=1, b=2}, uniform over 3 classes
        let lp = uniform_log_probs(1, 3);
        let label = CtcLabelSequence::new(vec![1], 0).unwrap();
        let loss = ctc_loss(&lp, &label).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ctc_t2_three_alignments() {
        // alignments {aa, -a, a-} → p = 3/9
        let lp = uniform_log_probs(2, 3);
        let label = CtcLabelSequence::new(vec![1], 0).unwrap();
        let loss = ctc_loss(&lp, &label).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ctc_infeasible_label_is_error_not_infinity() {
        let lp = uniform_log_probs(2, 3);
        // "aa" needs at least 3 frames (repeat requires a separating blank)
        let label = CtcLabelSequence::new(vec![1, 1], 0).unwrap();
        assert_eq!(label.min_frames(), 3);
        assert!(matches!(
            ctc_loss(&lp, &label),
            Err(SluError::InfeasibleLabel(_))
        ));
    }

    #[test]
    fn ctc_label_rejects_blank_and_empty() {
        assert!(CtcLabelSequence::new(vec![], 0).is_err());
        assert!(CtcLabelSequence::new(vec![0, 1], 0).is_err());
    }

    /// Enumeration of the 27 paths for T=3, label "a": exactly 6 collapse to
    /// "a" under the standard collapse (dedupe repeats, then strip blanks).
    #[test]
    fn ctc_bruteforce_enumeration_t3() {
        let lp = uniform_log_probs(3, 3);
        let label = CtcLabelSequence::new(vec![1], 0).unwrap();
        let brute = ctc_loss_bruteforce(&lp, &label).unwrap();
        let want = -(6.0f64 / 27.0).ln();
        assert!((brute - want).abs() < 1e-12, "{} vs {}", brute, want);
        let fwd = ctc_loss(&lp, &label).unwrap();
        assert!((fwd - brute).abs() < 1e-12);
    }

    #[test]
    fn ctc_bruteforce_mirrors_trivial_cases() {
        let label = CtcLabelSequence::new(vec![1], 0).unwrap();
        let l1 = ctc_loss_bruteforce(&uniform_log_probs(1, 3), &label).unwrap();
        assert!((l1 - 3.0f64.ln()).abs() < 1e-12);
        let l2 = ctc_loss_bruteforce(&uniform_log_probs(2, 3), &label).unwrap();
        assert!((l2 - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ctc_bruteforce_budget_guard() {
        let lp = uniform_log_probs(30, 10);
        let label = CtcLabelSequence::new(vec![1], 0).unwrap();
        assert!(matches!(
            ctc_loss_bruteforce(&lp, &label),
            Err(SluError::Contract(_))
        ));
    }

    #[test]
    fn ctc_agrees_with_bruteforce_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut checked = 0;
        while checked < 60 {
            let t_len = rng.gen_range(1..=6);
            let vocab = rng.gen_range(1..=4usize);
            let label_len = rng.gen_range(1..=3.min(t_len));
            let tokens: Vec<usize> = (0..label_len).map(|_| rng.gen_range(1..=vocab)).collect();
            let label = CtcLabelSequence::new(tokens, 0).unwrap();
            if label.min_frames() > t_len {
                continue;
            }
            let lp = random_log_probs(&mut rng, t_len, vocab + 1);
            let a = ctc_loss(&lp, &label).unwrap();
            let b = ctc_loss_bruteforce(&lp, &label).unwrap();
            assert!((a - b).abs() <= 1e-9, "T={} |V|={} {} vs {}", t_len, vocab, a, b);
            checked += 1;
        }
    }

    #[test]
    fn ctc_gradient_rows_sum_to_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lp = random_log_probs(&mut rng, 5, 4);
        let label = CtcLabelSequence::new(vec![2, 1], 0).unwrap();
        let (_, grad) = ctc_forward_backward(&lp, &label, true).unwrap();
        let grad = grad.unwrap();
        for t in 0..5 {
            let row_sum: f64 = grad[t * 4..(t + 1) * 4].iter().sum();
            assert!((row_sum + 1.0).abs() < 1e-9, "t={} sum {}", t, row_sum);
        }
    }

    #[test]
    fn ctc_gradient_matches_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t_len = rng.gen_range(3..=6);
            let classes = rng.gen_range(3..=5);
            let logits = Tensor::new(
                vec![t_len, classes],
                (0..t_len * classes).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let tokens = vec![rng.gen_range(1..classes), rng.gen_range(1..classes)];
            let label = CtcLabelSequence::new(tokens, 0).unwrap();
            if label.min_frames() > t_len {
                continue;
            }
            let err = grad_check_multi(
                |tape, ids| {
                    let ls = tape.log_softmax(ids[0]);
                    ctc_loss_tape(tape, ls, &label)
                },
                &[logits],
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {} err {}", seed, err);
        }
    }

    #[test]
    fn frame_ce_uniform_is_ln_c() {
        let logits = Tensor::new(vec![4, 7], vec![0.0; 28]).unwrap();
        let loss = frame_ce_loss(&logits, &[0, 3, 6, 2]).unwrap();
        assert!((loss - 7.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn frame_ce_perfect_margin_goes_to_zero() {
        let mut data = vec![-100.0; 3 * 4];
        for (t, &p) in [1usize, 2, 0].iter().enumerate() {
            data[t * 4 + p] = 100.0;
        }
        let logits = Tensor::new(vec![3, 4], data).unwrap();
        let loss = frame_ce_loss(&logits, &[1, 2, 0]).unwrap();
        assert!(loss < 1e-12, "loss {}", loss);
    }

    #[test]
    fn frame_ce_matches_per_frame_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits = Tensor::new(
            vec![5, 6],
            (0..30).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let alignment = [3usize, 0, 5, 5, 1];
        let loss = frame_ce_loss(&logits, &alignment).unwrap();
        let mut want = 0.0;
        for (t, &p) in alignment.iter().enumerate() {
            let row = logits.row(t);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse: f64 = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            want += lse - row[p];
        }
        want /= 5.0;
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn frame_ce_length_mismatch_errors() {
        let logits = Tensor::new(vec![3, 4], vec![0.0; 12]).unwrap();
        assert!(matches!(
            frame_ce_loss(&logits, &[0, 1]),
            Err(SluError::Contract(_))
        ));
    }

    #[test]
    fn intent_ce_uniform_31_classes() {
        let logits = Tensor::vector(vec![0.0; 31]);
        let loss = intent_ce_loss(&logits, 17).unwrap();
        assert!((loss - 31.0f64.ln()).abs() < 1e-12);
        assert!((loss - 3.4340).abs() < 1e-4);
    }

    #[test]
    fn intent_ce_large_margin_goes_to_zero() {
        let mut logits = vec![0.0; 31];
        logits[5] = 500.0;
        let loss = intent_ce_loss(&Tensor::vector(logits), 5).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn intent_ce_out_of_range_errors() {
        let logits = Tensor::vector(vec![0.0; 4]);
        assert!(matches!(
            intent_ce_loss(&logits, 4),
            Err(SluError::Contract(_))
        ));
    }

    #[test]
    fn intent_ce_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let loss = intent_ce_loss(&Tensor::vector(logits.clone()), 2).unwrap();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse: f64 = mx + logits.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        assert!((loss - (lse - logits[2])).abs() < 1e-12);
    }

    #[test]
    fn mtl_endpoints_exact() {
        let w1 = MtlWeight::new(1.0).unwrap();
        let w0 = MtlWeight::new(0.0).unwrap();
        assert_eq!(mtl_loss(2.345, 9.876, w1), 2.345);
        assert_eq!(mtl_loss(2.345, 9.876, w0), 9.876);
    }

    #[test]
    fn mtl_alpha_point_six() {
        let w = MtlWeight::new(0.6).unwrap();
        let v = mtl_loss(2.0, 1.0, w);
        assert!((v - 1.6).abs() < 1e-12);
    }

    #[test]
    fn mtl_linear_in_alpha() {
        let (li, lc) = (3.0, 1.5);
        let f = |a: f64| mtl_loss(li, lc, MtlWeight::new(a).unwrap());
        // exact linearity: f(a) - f(0) proportional to a
        let slope = f(1.0) - f(0.0);
        for &a in &[0.1, 0.25, 0.5, 0.75, 0.9] {
            assert!((f(a) - (f(0.0) + slope * a)).abs() < 1e-12);
        }
    }

    #[test]
    fn mtl_weight_range_checked() {
        assert!(MtlWeight::new(-0.1).is_err());
        assert!(MtlWeight::new(1.1).is_err());
    }

    #[test]
    fn losses_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let lp = random_log_probs(&mut rng, 4, 4);
            let label = CtcLabelSequence::new(vec![1], 0).unwrap();
            assert!(ctc_loss(&lp, &label).unwrap() >= 0.0);
            let logits = Tensor::vector((0..6).map(|_| rng.gen_range(-2.0..2.0)).collect());
            assert!(intent_ce_loss(&logits, 3).unwrap() >= 0.0);
        }
    }

    #[test]
    fn tape_losses_match_raw() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = Tensor::new(
            vec![4, 5],
            (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let alignment = [1usize, 2, 3, 0];
        let raw = frame_ce_loss(&logits, &alignment).unwrap();
        let mut tape = Tape::new();
        let id = tape.leaf(&logits);
        let node = frame_ce_loss_tape(&mut tape, id, &alignment).unwrap();
        assert!((tape.value(node).item() - raw).abs() < 1e-12);

        let ivec = Tensor::vector((0..7).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let raw_i = intent_ce_loss(&ivec, 3).unwrap();
        let iid = tape.leaf(&ivec);
        let inode = intent_ce_loss_tape(&mut tape, iid, 3).unwrap();
        assert!((tape.value(inode).item() - raw_i).abs() < 1e-12);
    }
}
