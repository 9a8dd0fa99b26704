//! Greedy, beam and nucleus decoding over any [`StepModel`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DecodeOptions, SamplingOptions};
use crate::error::{ModelError, Result};
use crate::generator::StepModel;

/// `log_prob / len^penalty`, with length at least one.
pub fn length_penalized_score(log_prob: f64, len: usize, penalty: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(penalty)
}

/// Whether appending `next` repeats a trigram already in `seq`.
pub fn repeats_trigram(seq: &[usize], next: usize) -> bool {
    let n = seq.len();
    if n < 2 {
        return false;
    }
    let tri = [seq[n - 2], seq[n - 1], next];
    seq.windows(3).any(|w| w == tri)
}

pub fn has_repeated_trigram(seq: &[usize]) -> bool {
    (2..seq.len()).any(|i| repeats_trigram(&seq[..i], seq[i]))
}

fn constrained_log_probs<M: StepModel + ?Sized>(
    model: &M,
    generated: &[usize],
    min_len: usize,
    trigram_block: bool,
) -> Result<Vec<f64>> {
    let mut lp = model.log_probs(generated)?;
    if lp.len() != model.vocab_size() {
        return Err(ModelError::InvalidArgument(format!(
            "model returned {} scores for a vocabulary of {}",
            lp.len(),
            model.vocab_size()
        )));
    }
    let eos = model.eos();
    if generated.len() < min_len {
        lp[eos] = f64::NEG_INFINITY;
    }
    if trigram_block {
        for (tok, v) in lp.iter_mut().enumerate() {
            if tok != eos && repeats_trigram(generated, tok) {
                *v = f64::NEG_INFINITY;
            }
        }
    }
    Ok(lp)
}

/// Argmax decoding; ties go to the lowest id. The end token is not
/// included in the output.
pub fn greedy_decode<M: StepModel + ?Sized>(
    model: &M,
    min_len: usize,
    max_len: usize,
    trigram_block: bool,
) -> Result<Vec<usize>> {
    let max_len = max_len.min(model.max_len());
    let mut out = Vec::new();
    while out.len() < max_len {
        let lp = constrained_log_probs(model, &out, min_len, trigram_block)?;
        let Some(best) = argmax(&lp) else { break };
        if best == model.eos() {
            break;
        }
        out.push(best);
    }
    Ok(out)
}

fn argmax(lp: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in lp.iter().enumerate() {
        if v > f64::NEG_INFINITY && best.is_none_or(|b| v > lp[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    /// Generated ids, the end token included when emitted.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    pub fn score(&self, penalty: f64) -> f64 {
        length_penalized_score(self.log_prob, self.tokens.len(), penalty)
    }

    /// Tokens without the trailing end token.
    pub fn output(&self, eos: usize) -> &[usize] {
        match self.tokens.last() {
            Some(&t) if t == eos => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Index of the best finished hypothesis by length-penalized score; the
/// earliest wins ties.
pub fn rank_finished(hyps: &[BeamHypothesis], penalty: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, h) in hyps.iter().enumerate() {
        if best.is_none_or(|b| h.score(penalty) > hyps[b].score(penalty)) {
            best = Some(i);
        }
    }
    best
}

/// Beam search. Each step expands every live hypothesis over the allowed
/// vocabulary; end-token candidates ranked within the top `beam` finish,
/// the best `beam` others stay live. Search stops once `beam` hypotheses
/// have finished and no live hypothesis scores better than the worst of
/// them at its current length, or after `max_len` steps, when survivors
/// finish by length.
pub fn beam_search<M: StepModel + ?Sized>(model: &M, opts: &DecodeOptions) -> Result<Vec<BeamHypothesis>> {
    if opts.beam < 1 {
        return Err(ModelError::InvalidArgument("beam must be at least 1".into()));
    }
    let eos = model.eos();
    let mut alive = vec![BeamHypothesis {
        tokens: vec![],
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    for _ in 0..opts.max_len.min(model.max_len()) {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (hi, h) in alive.iter().enumerate() {
            let lp = constrained_log_probs(model, &h.tokens, opts.min_len, opts.trigram_block)?;
            let before = candidates.len();
            for (tok, &v) in lp.iter().enumerate() {
                if v > f64::NEG_INFINITY {
                    candidates.push((h.log_prob + v, hi, tok));
                }
            }
            if candidates.len() == before {
                // nothing may follow: the hypothesis ends here
                finished.push(BeamHypothesis {
                    finished: true,
                    ..h.clone()
                });
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(opts.beam);
        for (rank, &(lp, hi, tok)) in candidates.iter().enumerate() {
            if next.len() == opts.beam {
                break;
            }
            let mut tokens = alive[hi].tokens.clone();
            tokens.push(tok);
            if tok == eos {
                if rank < opts.beam {
                    finished.push(BeamHypothesis {
                        tokens,
                        log_prob: lp,
                        finished: true,
                    });
                }
            } else {
                next.push(BeamHypothesis {
                    tokens,
                    log_prob: lp,
                    finished: false,
                });
            }
        }
        alive = next;
        if alive.is_empty() || search_done(&finished, &alive, opts) {
            break;
        }
    }
    if finished.len() < opts.beam {
        finished.extend(alive.into_iter().map(|h| BeamHypothesis { finished: true, ..h }));
    }
    Ok(finished)
}

/// True once `beam` hypotheses have finished and the worst of the best
/// `beam` finished scores is at least the best live score at its current
/// length.
fn search_done(finished: &[BeamHypothesis], alive: &[BeamHypothesis], opts: &DecodeOptions) -> bool {
    if finished.len() < opts.beam {
        return false;
    }
    let mut scores: Vec<f64> = finished.iter().map(|h| h.score(opts.length_penalty)).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    let worst_kept = scores[opts.beam - 1];
    let best_live = alive
        .iter()
        .map(|h| h.score(opts.length_penalty))
        .fold(f64::NEG_INFINITY, f64::max);
    worst_kept >= best_live
}

/// Best beam-search output without the end token.
pub fn beam_decode<M: StepModel + ?Sized>(model: &M, opts: &DecodeOptions) -> Result<Vec<usize>> {
    let hyps = beam_search(model, opts)?;
    Ok(rank_finished(&hyps, opts.length_penalty)
        .map(|i| hyps[i].output(model.eos()).to_vec())
        .unwrap_or_default())
}

/// Top-k then top-p truncation: keep the `k` most probable ids, then the
/// shortest prefix whose mass reaches `p`, renormalized. Sorted by
/// descending probability, lower id first on ties.
pub fn nucleus_filter(probs: &[f64], k: usize, p: f64) -> Result<Vec<(usize, f64)>> {
    if k < 1 || !(p > 0.0 && p <= 1.0) {
        return Err(ModelError::InvalidArgument(format!(
            "nucleus sampling needs k >= 1 and 0 < p <= 1, got k={k}, p={p}"
        )));
    }
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(k);
    let total: f64 = order.iter().map(|&i| probs[i]).sum();
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for &i in &order {
        kept.push(i);
        mass += probs[i] / total;
        if mass >= p {
            break;
        }
    }
    let z: f64 = kept.iter().map(|&i| probs[i]).sum();
    Ok(kept.into_iter().map(|i| (i, probs[i] / z)).collect())
}

/// Draws an id from a normalized `(id, prob)` list.
pub fn sample_from<R: Rng + ?Sized>(dist: &[(usize, f64)], rng: &mut R) -> Option<usize> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(i, q) in dist {
        acc += q;
        if u < acc {
            return Some(i);
        }
    }
    dist.last().map(|&(i, _)| i)
}

/// Seeded top-k/top-p sampling until the end token or `max_len`.
pub fn nucleus_sample<M: StepModel + ?Sized>(model: &M, opts: &SamplingOptions, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let max_len = opts.max_len.min(model.max_len());
    while out.len() < max_len {
        let lp = constrained_log_probs(model, &out, opts.min_len, false)?;
        let probs: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        let dist = nucleus_filter(&probs, opts.top_k, opts.top_p)?;
        let Some(tok) = sample_from(&dist, &mut rng) else { break };
        if tok == model.eos() {
            break;
        }
        out.push(tok);
    }
    Ok(out)
}
