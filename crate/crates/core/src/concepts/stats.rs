use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::querymodel::{Attribute, NodeClass, Relationship};

/// Bin width in nats used when none is given.
pub const DEFAULT_BIN_WIDTH: f64 = 0.01;

/// Histogram of `-ln p` for a set of probabilities. Bin `k` holds values in
/// `[k h, (k + 1) h)`, i.e. `ln p` in `(-(k + 1) h, -k h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl ScoreHistogram {
    pub fn new(bin_width: f64) -> Self {
        assert!(bin_width > 0.0 && bin_width.is_finite(), "bin width must be positive");
        Self {
            bin_width,
            counts: Vec::new(),
        }
    }

    pub fn from_probabilities(probs: impl IntoIterator<Item = f64>, bin_width: f64) -> Self {
        let mut h = Self::new(bin_width);
        for p in probs {
            h.add(p);
        }
        h
    }

    pub fn bin_of(&self, p: f64) -> usize {
        let x = -p.ln();
        if x <= 0.0 {
            0
        } else {
            (x / self.bin_width).floor() as usize
        }
    }

    pub fn add(&mut self, p: f64) {
        debug_assert!(p > 0.0 && p <= 1.0, "probability {p} out of range");
        let k = self.bin_of(p);
        if self.counts.len() <= k {
            self.counts.resize(k + 1, 0);
        }
        self.counts[k] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of samples with probability at least `tau`.
    pub fn pass_rate(&self, tau: f64) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        if tau <= 0.0 {
            return 1.0;
        }
        let limit = -tau.ln();
        let passing: u64 = self
            .counts
            .iter()
            .enumerate()
            .filter(|(k, _)| ((*k + 1) as f64) * self.bin_width <= limit + 1e-12)
            .map(|(_, c)| c)
            .sum();
        passing as f64 / total as f64
    }
}

/// Positive and background score histograms for one concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptStats {
    pub positive: ScoreHistogram,
    pub background: ScoreHistogram,
}

/// Per-concept score statistics, keyed by [`class_key`], [`attr_key`] and
/// [`rel_key`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreStats {
    pub concepts: BTreeMap<String, ConceptStats>,
}

impl ScoreStats {
    pub fn get(&self, key: &str) -> Option<&ConceptStats> {
        self.concepts.get(key)
    }

    pub fn insert(
        &mut self,
        key: impl Into<String>,
        positives: impl IntoIterator<Item = f64>,
        background: impl IntoIterator<Item = f64>,
        bin_width: f64,
    ) {
        self.concepts.insert(
            key.into(),
            ConceptStats {
                positive: ScoreHistogram::from_probabilities(positives, bin_width),
                background: ScoreHistogram::from_probabilities(background, bin_width),
            },
        );
    }
}

pub fn class_key(c: NodeClass) -> String {
    format!("class:{c}")
}

pub fn attr_key(a: Attribute) -> String {
    format!("attr:{a}")
}

pub fn rel_key(r: Relationship) -> String {
    format!("rel:{r}")
}
