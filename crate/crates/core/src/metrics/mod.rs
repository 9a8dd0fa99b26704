//! Automatic evaluation: BLEU-4, ROUGE-L, type-control diversity metrics,
//! focus precision/recall and score binning.

mod bleu;
mod stats;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::QuestionType;
use crate::error::{CoreError, Result};

pub use bleu::{bleu4, corpus_bleu4, pairwise_bleu, BleuStats, Smoothing, MAX_ORDER};
pub use stats::{bin_by_score, pearson, pearson_p_value, ScoreBin};

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L precision, recall and F1.
pub fn rouge_l_prf<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> (f64, f64, f64) {
    if hypothesis.is_empty() || reference.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let lcs = lcs_len(hypothesis, reference) as f64;
    let p = lcs / hypothesis.len() as f64;
    let r = lcs / reference.len() as f64;
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

pub fn rouge_l<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> f64 {
    rouge_l_prf(hypothesis, reference).2
}

pub fn unique_types(labels: &[QuestionType]) -> Result<usize> {
    if labels.is_empty() {
        return Err(CoreError::InvalidArgument(
            "unique_types needs at least one label".into(),
        ));
    }
    Ok(labels.iter().collect::<BTreeSet<_>>().len())
}

pub fn type_accuracy(specified: &[QuestionType], generated_labels: &[QuestionType]) -> Result<f64> {
    if specified.len() != generated_labels.len() {
        return Err(CoreError::DimensionMismatch {
            left: specified.len(),
            right: generated_labels.len(),
        });
    }
    if specified.is_empty() {
        return Err(CoreError::InvalidArgument(
            "type_accuracy needs at least one label".into(),
        ));
    }
    let hits = specified
        .iter()
        .zip(generated_labels)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / specified.len() as f64)
}

/// Set precision, recall and F1. Two empty sets score `(1, 1, 1)`; an empty
/// side against a nonempty one scores zero.
pub fn focus_prf(predicted: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> (f64, f64, f64) {
    if predicted.is_empty() && gold.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    if predicted.is_empty() || gold.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let hit = predicted.intersection(gold).count() as f64;
    let p = hit / predicted.len() as f64;
    let r = hit / gold.len() as f64;
    let f = if hit == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    /// Add-one smoothed sentence BLEU-4, `[0, 1]`.
    pub bleu4: f64,
    pub rouge_l: f64,
}

/// Corpus-level BLEU-4 (pooled counts) and mean ROUGE-L, with per-sample
/// scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub hypotheses: String,
    pub references: String,
    pub count: usize,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub samples: Vec<SampleMetrics>,
}

impl MetricReport {
    /// `pairs` are `(id, hypothesis tokens, reference tokens)`.
    pub fn compute(
        hypotheses: &str,
        references: &str,
        pairs: &[(String, Vec<String>, Vec<String>)],
    ) -> Result<Self> {
        let mut pooled = BleuStats::default();
        let mut samples = Vec::with_capacity(pairs.len());
        let mut rouge_sum = 0.0;
        for (id, hyp, reference) in pairs {
            let stats = BleuStats::compute(hyp, std::slice::from_ref(reference))?;
            pooled.accumulate(&stats);
            let r = rouge_l(hyp, reference);
            rouge_sum += r;
            samples.push(SampleMetrics {
                id: id.clone(),
                bleu4: stats.score(Smoothing::AddOne),
                rouge_l: r,
            });
        }
        Ok(MetricReport {
            hypotheses: hypotheses.to_string(),
            references: references.to_string(),
            count: pairs.len(),
            bleu4: pooled.score(Smoothing::None),
            rouge_l: if pairs.is_empty() {
                0.0
            } else {
                rouge_sum / pairs.len() as f64
            },
            samples,
        })
    }
}

/// One answer's worth of type-controlled generations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversitySample {
    pub id: String,
    pub specified: Vec<QuestionType>,
    pub predicted: Vec<QuestionType>,
    pub questions: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityResult {
    pub samples: usize,
    pub type_accuracy: f64,
    pub unique_types: f64,
    pub pairwise_bleu: f64,
}

impl DiversityResult {
    /// Accuracy pools all positions; unique types and pairwise BLEU are
    /// per-sample means.
    pub fn compute(samples: &[DiversitySample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::InvalidArgument("no diversity samples".into()));
        }
        let mut spec = Vec::new();
        let mut pred = Vec::new();
        let (mut unt, mut pair) = (0.0, 0.0);
        for s in samples {
            spec.extend_from_slice(&s.specified);
            pred.extend_from_slice(&s.predicted);
            unt += unique_types(&s.predicted)? as f64;
            pair += pairwise_bleu(&s.questions)?;
        }
        let n = samples.len() as f64;
        Ok(DiversityResult {
            samples: samples.len(),
            type_accuracy: type_accuracy(&spec, &pred)?,
            unique_types: unt / n,
            pairwise_bleu: pair / n,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSample {
    pub id: String,
    pub focus_f1: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub n: usize,
    /// Focus F1 against sentence BLEU-4.
    pub pearson_r: f64,
    pub p_value: Option<f64>,
    pub rouge_pearson_r: f64,
    pub rouge_p_value: Option<f64>,
    pub p_threshold: f64,
    pub significant: bool,
    /// Payload means are `[bleu4, rouge_l]`.
    pub bins: Vec<ScoreBin>,
}

impl CorrelationResult {
    pub fn compute(samples: &[CorrelationSample], n_bins: usize, p_threshold: f64) -> Result<Self> {
        let f1: Vec<f64> = samples.iter().map(|s| s.focus_f1).collect();
        let bleu: Vec<f64> = samples.iter().map(|s| s.bleu4).collect();
        let rouge: Vec<f64> = samples.iter().map(|s| s.rouge_l).collect();
        let r = pearson(&f1, &bleu)?;
        let rr = pearson(&f1, &rouge)?;
        let p = pearson_p_value(r, samples.len());
        let pr = pearson_p_value(rr, samples.len());
        let payload: Vec<(f64, Vec<f64>)> = samples
            .iter()
            .map(|s| (s.focus_f1, vec![s.bleu4, s.rouge_l]))
            .collect();
        Ok(CorrelationResult {
            n: samples.len(),
            pearson_r: r,
            p_value: p,
            rouge_pearson_r: rr,
            rouge_p_value: pr,
            p_threshold,
            significant: p.is_some_and(|p| p < p_threshold) && pr.is_some_and(|p| p < p_threshold),
            bins: bin_by_score(&payload, n_bins)?,
        })
    }

    /// `bin,lower,upper,count,mean_focus_f1,mean_bleu4,mean_rouge_l`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lower,upper,count,mean_focus_f1,mean_bleu4,mean_rouge_l\n");
        for b in &self.bins {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            let payload = b.payload_means.as_deref();
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{},{},{}\n",
                b.index,
                b.lower,
                b.upper,
                b.count,
                fmt(b.mean_score),
                fmt(payload.map(|p| p[0])),
                fmt(payload.map(|p| p[1])),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn rouge_swaps_precision_and_recall() {
        let (h, r) = (toks("the cat sat"), toks("the cat sat down today"));
        let (p1, r1, f1) = rouge_l_prf(&h, &r);
        let (p2, r2, f2) = rouge_l_prf(&r, &h);
        assert_eq!((p1, r1), (r2, p2));
        assert_eq!(f1, f2);
        assert_eq!(rouge_l(&toks("the cat"), &toks("cat the")), 0.5);
    }

    #[test]
    fn focus_conventions() {
        let e = BTreeSet::new();
        assert_eq!(focus_prf(&e, &e), (1.0, 1.0, 1.0));
        assert_eq!(focus_prf(&e, &BTreeSet::from([1])), (0.0, 0.0, 0.0));
        assert_eq!(
            focus_prf(&BTreeSet::from([1, 2]), &BTreeSet::from([2, 3])),
            (0.5, 0.5, 0.5)
        );
    }
}
