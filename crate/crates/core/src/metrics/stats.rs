use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{CoreError, Result};

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(CoreError::DimensionMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(CoreError::InvalidArgument(
            "pearson needs at least 2 points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CoreError::InvalidArgument(
            "pearson is undefined for zero variance".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` under the null of no correlation, via the
/// t statistic with `n - 2` degrees of freedom. `None` when `n < 3`.
pub fn pearson_p_value(r: f64, n: usize) -> Option<f64> {
    if n < 3 {
        return None;
    }
    if r.abs() >= 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(2.0 * (1.0 - dist.cdf(t.abs())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBin {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean_score: Option<f64>,
    pub payload_means: Option<Vec<f64>>,
}

/// Equal-width bins over `[0, 1]`; each bin is `[lo, hi)` except the last,
/// which also takes 1.0.
pub fn bin_by_score(samples: &[(f64, Vec<f64>)], n_bins: usize) -> Result<Vec<ScoreBin>> {
    if n_bins < 1 {
        return Err(CoreError::InvalidArgument(
            "n_bins must be at least 1".into(),
        ));
    }
    let width = samples.first().map_or(0, |s| s.1.len());
    let mut sums = vec![(0usize, 0.0, vec![0.0; width]); n_bins];
    for (score, payload) in samples {
        if !(0.0..=1.0).contains(score) {
            return Err(CoreError::InvalidArgument(format!(
                "score {score} outside [0, 1]"
            )));
        }
        if payload.len() != width {
            return Err(CoreError::DimensionMismatch {
                left: width,
                right: payload.len(),
            });
        }
        let b = ((score * n_bins as f64).floor() as usize).min(n_bins - 1);
        let entry = &mut sums[b];
        entry.0 += 1;
        entry.1 += score;
        for (acc, v) in entry.2.iter_mut().zip(payload) {
            *acc += v;
        }
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(i, (count, score_sum, payload_sum))| {
            let c = count as f64;
            ScoreBin {
                index: i,
                lower: i as f64 / n_bins as f64,
                upper: (i + 1) as f64 / n_bins as f64,
                count,
                mean_score: (count > 0).then(|| score_sum / c),
                payload_means: (count > 0).then(|| payload_sum.iter().map(|s| s / c).collect()),
            }
        })
        .collect())
}
