use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArchiveError, ArchiveStore};
use crate::concepts::{CalibrationModel, Scorer};
use crate::querymodel::Relationship;

/// Empirical probability that a random observation pair satisfies each
/// relationship. Relationships never seen passing are recorded as 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelFreqTable {
    pub freq: BTreeMap<Relationship, f64>,
    pub sample_size: usize,
    pub seed: u64,
    /// Probability a pair must exceed to count as satisfying a relationship.
    pub threshold: f64,
    /// True when every ordered pair was enumerated instead of sampled.
    pub exhaustive: bool,
}

impl RelFreqTable {
    /// Every relationship nondiscriminative.
    pub fn uniform() -> Self {
        Self {
            freq: Relationship::ALL.iter().map(|&r| (r, 1.0)).collect(),
            sample_size: 0,
            seed: 0,
            threshold: 0.5,
            exhaustive: false,
        }
    }

    pub fn get(&self, rel: Relationship) -> f64 {
        self.freq.get(&rel).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FreqOptions {
    /// `None` samples `min(100_000, all ordered pairs)`.
    pub n_samples: Option<usize>,
    pub seed: u64,
    pub threshold: f64,
    pub reid: bool,
}

impl Default for FreqOptions {
    fn default() -> Self {
        Self {
            n_samples: None,
            seed: 0,
            threshold: 0.5,
            reid: true,
        }
    }
}

pub const DEFAULT_FREQ_SAMPLES: usize = 100_000;

/// Estimates `p(r)` for every vocabulary relationship over ordered pairs of
/// distinct observations. When the budget covers every ordered pair the
/// pairs are enumerated and the result is exact.
pub fn estimate_relationship_frequencies(
    store: &ArchiveStore,
    models: &CalibrationModel,
    opts: &FreqOptions,
) -> Result<RelFreqTable, ArchiveError> {
    let n = store.len();
    if n < 2 {
        return Err(ArchiveError::Degenerate(format!(
            "{n} observation(s); relationship frequencies need at least 2"
        )));
    }
    let all_pairs = n.saturating_mul(n - 1);
    let budget = opts.n_samples.unwrap_or(DEFAULT_FREQ_SAMPLES.min(all_pairs));
    if budget == 0 {
        return Err(ArchiveError::Degenerate("n_samples must be at least 1".into()));
    }
    let scorer = Scorer::new(store, models).with_reid(opts.reid);
    let obs = store.observations();
    let mut hits = [0usize; Relationship::ALL.len()];
    let mut count = |i: usize, j: usize| -> Result<(), ArchiveError> {
        for (k, &rel) in Relationship::ALL.iter().enumerate() {
            if scorer.relationship_probability(rel, &obs[i], &obs[j])? > opts.threshold {
                hits[k] += 1;
            }
        }
        Ok(())
    };

    let exhaustive = budget >= all_pairs;
    let sample_size = if exhaustive {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    count(i, j)?;
                }
            }
        }
        all_pairs
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..budget {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            count(i, j)?;
        }
        budget
    };

    let freq = Relationship::ALL
        .iter()
        .zip(hits)
        .map(|(&rel, h)| {
            let p = if h == 0 { 1.0 } else { h as f64 / sample_size as f64 };
            (rel, p)
        })
        .collect();
    Ok(RelFreqTable {
        freq,
        sample_size,
        seed: opts.seed,
        threshold: opts.threshold,
        exhaustive,
    })
}
