use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    None,
    /// Zero-match orders use `(0 + 1) / (total + 1)`.
    AddOne,
}

/// Sufficient statistics for BLEU-4; corpus scores add these up before
/// scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn compute<T: Eq + Hash, R: AsRef<[T]>>(
        hypothesis: &[T],
        references: &[R],
    ) -> Result<Self> {
        if references.is_empty() {
            return Err(CoreError::InvalidArgument(
                "bleu needs at least one reference".into(),
            ));
        }
        let mut stats = BleuStats {
            hyp_len: hypothesis.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let hyp = ngram_counts(hypothesis, n);
            let mut max_ref: HashMap<&[T], usize> = HashMap::new();
            for r in references {
                for (g, c) in ngram_counts(r.as_ref(), n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            stats.matches[n - 1] = hyp
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
            stats.totals[n - 1] = hypothesis.len().saturating_sub(n - 1);
        }
        // Closest reference length; shorter wins ties.
        stats.ref_len = references
            .iter()
            .map(|r| r.as_ref().len())
            .min_by_key(|&l| (l.abs_diff(hypothesis.len()), l))
            .expect("nonempty");
        Ok(stats)
    }

    pub fn accumulate(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        (1.0 - self.ref_len as f64 / self.hyp_len as f64)
            .min(0.0)
            .exp()
    }

    /// Score in `[0, 1]`.
    pub fn score(&self, smoothing: Smoothing) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let (m, t) = (self.matches[n], self.totals[n]);
            let p = if m > 0 {
                m as f64 / t as f64
            } else {
                match smoothing {
                    Smoothing::None => return 0.0,
                    Smoothing::AddOne => 1.0 / (t as f64 + 1.0),
                }
            };
            log_sum += p.ln();
        }
        (log_sum / MAX_ORDER as f64).exp() * self.brevity_penalty()
    }
}

/// Sentence BLEU-4 against one or more references.
pub fn bleu4<T: Eq + Hash, R: AsRef<[T]>>(
    hypothesis: &[T],
    references: &[R],
    smoothing: Smoothing,
) -> Result<f64> {
    Ok(BleuStats::compute(hypothesis, references)?.score(smoothing))
}

/// Corpus BLEU-4 from pooled statistics, unsmoothed, in `[0, 1]`.
pub fn corpus_bleu4<T: Eq + Hash, R: AsRef<[T]>>(samples: &[(&[T], &[R])]) -> Result<f64> {
    let mut total = BleuStats::default();
    for (hyp, refs) in samples {
        total.accumulate(&BleuStats::compute(hyp, refs)?);
    }
    Ok(total.score(Smoothing::None))
}

/// Mean add-one-smoothed BLEU-4 over ordered pairs `(i, j)`, `i != j`,
/// scaled to `[0, 100]`.
pub fn pairwise_bleu<T: Eq + Hash, Q: AsRef<[T]>>(questions: &[Q]) -> Result<f64> {
    if questions.len() < 2 {
        return Err(CoreError::InvalidArgument(format!(
            "pairwise BLEU needs at least 2 questions, got {}",
            questions.len()
        )));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, hyp) in questions.iter().enumerate() {
        for (j, r) in questions.iter().enumerate() {
            if i != j {
                sum += bleu4(hyp.as_ref(), std::slice::from_ref(r), Smoothing::AddOne)?;
                pairs += 1;
            }
        }
    }
    Ok(100.0 * sum / pairs as f64)
}
