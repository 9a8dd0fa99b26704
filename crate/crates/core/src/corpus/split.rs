use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::QAPair;
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Split>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitAssignment {
    pub fn count(&self, split: Split) -> usize {
        self.assignments.values().filter(|&&s| s == split).count()
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignments
            .iter()
            .filter(move |(_, &s)| s == split)
            .map(|(id, _)| id.as_str())
    }
}

const RATIO_TOLERANCE: f64 = 1e-9;

/// Largest-remainder rounding of `n * ratios`; ties go to the earlier bucket.
fn bucket_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut sizes = exact.map(|x| x.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Seeded shuffle followed by a contiguous train/valid/test partition.
pub fn split_dataset(pairs: &[QAPair], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "split ratios must be nonnegative, got {ratios:?}"
        )));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > RATIO_TOLERANCE {
        return Err(CoreError::InvalidArgument(format!(
            "split ratios must sum to 1, got {ratios:?} (sum {total})"
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let sizes = bucket_sizes(pairs.len(), ratios);
    let mut assignments = BTreeMap::new();
    let mut cursor = 0;
    for (split, size) in Split::ALL.into_iter().zip(sizes) {
        for &i in &order[cursor..cursor + size] {
            if assignments.insert(pairs[i].id.clone(), split).is_some() {
                return Err(CoreError::DuplicateId(pairs[i].id.clone()));
            }
        }
        cursor += size;
    }
    Ok(SplitAssignment {
        assignments,
        ratios,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder() {
        assert_eq!(bucket_sizes(100, [0.9, 0.05, 0.05]), [90, 5, 5]);
        assert_eq!(
            bucket_sizes(10, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
            [4, 3, 3]
        );
        assert_eq!(bucket_sizes(7, [1.0, 0.0, 0.0]), [7, 0, 0]);
        assert_eq!(bucket_sizes(0, [0.9, 0.05, 0.05]), [0, 0, 0]);
        assert_eq!(bucket_sizes(3, [0.5, 0.25, 0.25]), [1, 1, 1]);
    }
}
