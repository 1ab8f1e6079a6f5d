//! CTC decision rules: greedy best-path decoding and prefix beam search
//! with N-best output.
//!
//! Beam search merges alignments by collapsed-prefix identity and sums path
//! probabilities in log space, so with a beam wide enough to hold every
//! reachable prefix it returns exact prefix posteriors.

use std::collections::BTreeMap;

use crate::bpe::{TokenId, BLANK_ID};
use crate::error::{Result, SluError};
use crate::tensor::{argmax, log_sum_exp2, Tensor};

/// One decoded candidate: blank-free tokens and the merged CTC
/// log-probability of all alignments collapsing to them.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
}

/// Per-frame argmax, collapse adjacent repeats, strip blanks.
pub fn greedy_ctc_decode(wp_log_probs: &Tensor) -> Vec<TokenId> {
    let t_len = wp_log_probs.num_rows();
    let mut out = Vec::new();
    let mut prev = BLANK_ID;
    for t in 0..t_len {
        let k = argmax(wp_log_probs.row(t));
        if k != prev && k != BLANK_ID {
            out.push(k);
        }
        prev = k;
    }
    out
}

#[derive(Clone, Copy)]
struct PrefixProb {
    blank: f64,
    non_blank: f64,
}

impl PrefixProb {
    fn empty() -> Self {
        PrefixProb {
            blank: f64::NEG_INFINITY,
            non_blank: f64::NEG_INFINITY,
        }
    }

    fn total(&self) -> f64 {
        log_sum_exp2(self.blank, self.non_blank)
    }
}

/// CTC prefix beam search over `[T×(V+1)]` log-probs. Returns the top-`n`
/// distinct collapsed token sequences with merged log-probabilities, sorted
/// by log-probability descending (ties break on the token sequence).
pub fn beam_nbest_decode(
    wp_log_probs: &Tensor,
    beam_width: usize,
    n: usize,
) -> Result<Vec<Hypothesis>> {
    if n == 0 || beam_width < n {
        return Err(SluError::Contract(format!(
            "need beam_width ≥ N ≥ 1, got beam {} N {}",
            beam_width, n
        )));
    }
    if wp_log_probs.rank() != 2 {
        return Err(SluError::Shape {
            op: "beam_nbest_decode",
            left: wp_log_probs.dims().to_vec(),
            right: vec![0, 0],
        });
    }
    let t_len = wp_log_probs.dims()[0];
    let classes = wp_log_probs.dims()[1];

    let mut beams: BTreeMap<Vec<TokenId>, PrefixProb> = BTreeMap::new();
    beams.insert(
        Vec::new(),
        PrefixProb {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        },
    );

    for t in 0..t_len {
        let y = wp_log_probs.row(t);
        let mut next: BTreeMap<Vec<TokenId>, PrefixProb> = BTreeMap::new();
        for (prefix, pp) in &beams {
            let total = pp.total();
            // emit blank: prefix unchanged
            {
                let e = next.entry(prefix.clone()).or_insert_with(PrefixProb::empty);
                e.blank = log_sum_exp2(e.blank, total + y[BLANK_ID]);
            }
            for c in 0..classes {
                if c == BLANK_ID {
                    continue;
                }
                let p = y[c];
                if prefix.last() == Some(&c) {
                    // repeated symbol merges into the same prefix...
                    {
                        let e = next.entry(prefix.clone()).or_insert_with(PrefixProb::empty);
                        e.non_blank = log_sum_exp2(e.non_blank, pp.non_blank + p);
                    }
                    // ...and only a blank-separated path starts a new copy
                    let mut ext = prefix.clone();
                    ext.push(c);
                    let e = next.entry(ext).or_insert_with(PrefixProb::empty);
                    e.non_blank = log_sum_exp2(e.non_blank, pp.blank + p);
                } else {
                    let mut ext = prefix.clone();
                    ext.push(c);
                    let e = next.entry(ext).or_insert_with(PrefixProb::empty);
                    e.non_blank = log_sum_exp2(e.non_blank, total + p);
                }
            }
        }
        // prune to the beam width; deterministic order (score desc, tokens asc)
        let mut scored: Vec<(Vec<TokenId>, PrefixProb)> = next.into_iter().collect();
        scored.sort_by(|a, b| {
            b.1.total()
                .partial_cmp(&a.1.total())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(beam_width);
        beams = scored.into_iter().collect();
    }

    let mut hyps: Vec<Hypothesis> = beams
        .into_iter()
        .map(|(tokens, pp)| Hypothesis {
            tokens,
            log_prob: pp.total(),
        })
        .filter(|h| h.log_prob > f64::NEG_INFINITY)
        .collect();
    hyps.sort_by(|a, b| {
        b.log_prob
            .partial_cmp(&a.log_prob)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    hyps.truncate(n);
    Ok(hyps)
}
