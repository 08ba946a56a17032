//! Probability models for query concepts.
//!
//! Classes and attributes are Platt-calibrated detector margins. `near` and
//! `not_near` are linear classifiers over [`pair_features`]. `later` is a
//! deterministic time-order check and `same_entity` uses track identity,
//! falling back to a bilinear re-identification model across tracks.
//!
//! Every factor used in scoring is clamped to `[PROB_EPS, 1 - PROB_EPS]` so
//! log-scores stay finite.

mod features;
mod linear;
mod model;
mod platt;
mod reid;
mod stats;

use thiserror::Error;

pub use features::{pair_features, PAIR_FEATURES};
pub use linear::{train_linear, train_margin_concept, LinearConcept, TrainOptions};
pub use model::{
    node_probability, CalibrationModel, LaterModel, Scorer, LEARNED_RELATIONSHIPS, MODEL_VERSION,
};
pub use platt::{fit_platt, margin_to_probability, PlattParams};
pub use reid::{
    bilinear_score, reid_feature_spec, reid_features, reid_probability, tracklets_overlap, train_reid, ReIdModel,
    REID_BASE_FEATURES, REID_DIM,
};
pub use stats::{
    attr_key, class_key, rel_key, ConceptStats, ScoreHistogram, ScoreStats, DEFAULT_BIN_WIDTH,
};

use crate::archive::Observation;

/// Floor and ceiling applied to every scoring factor.
pub const PROB_EPS: f64 = 1e-3;

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("degenerate training data: {0}")]
    Degenerate(String),
    #[error("observation {obs_id} has no margin for {concept}")]
    MissingMargin { concept: String, obs_id: u64 },
    #[error("model bundle has no model for {0}")]
    MissingModel(String),
    #[error("{0}")]
    Invalid(String),
    #[error("model bundle is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Trains a pairwise relationship classifier over [`pair_features`].
pub fn train_relationship(
    name: &str,
    examples: &[(Observation, Observation, bool)],
) -> Result<LinearConcept, ConceptError> {
    let xs: Vec<Vec<f64>> = examples.iter().map(|(a, b, _)| pair_features(a, b).to_vec()).collect();
    let ys: Vec<bool> = examples.iter().map(|e| e.2).collect();
    let spec = PAIR_FEATURES.iter().map(|s| s.to_string()).collect();
    train_linear(name, spec, &xs, &ys, TrainOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::BBox;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn at(x: f64, y: f64, t: f64) -> Observation {
        Observation {
            obs_id: 0,
            track_id: 0,
            time: t,
            bbox: BBox::new(x, y, 20.0, 50.0),
            class_margins: BTreeMap::new(),
            attr_margins: BTreeMap::new(),
        }
    }

    fn near_examples(seed: u64, n: usize) -> Vec<(Observation, Observation, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let pos = i % 2 == 0;
                let d = if pos { rng.random_range(0.0..50.0) } else { rng.random_range(200.0..600.0) };
                let th = rng.random_range(0.0..std::f64::consts::TAU);
                let (x, y) = (rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0));
                let t = rng.random_range(0.0..100.0);
                (at(x, y, t), at(x + d * th.cos(), y + d * th.sin(), t), pos)
            })
            .collect()
    }

    #[test]
    fn near_classifier_generalises() {
        let c = train_relationship("near", &near_examples(1, 200)).unwrap();
        let test = near_examples(2, 400);
        let ok = test
            .iter()
            .filter(|(a, b, y)| (c.probability(&pair_features(a, b)) > 0.5) == *y)
            .count();
        assert!(ok as f64 / 400.0 >= 0.95, "{ok}/400");
    }

    #[test]
    fn permuted_examples_same_predictions() {
        let ex = near_examples(5, 100);
        let a = train_relationship("near", &ex).unwrap();
        let mut shuffled = ex.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
        let b = train_relationship("near", &shuffled).unwrap();
        for (x, y, _) in near_examples(6, 50) {
            let f = pair_features(&x, &y);
            assert!((a.probability(&f) - b.probability(&f)).abs() < 1e-9);
        }
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn single_class_relationship_data() {
        let ex: Vec<_> = near_examples(1, 40).into_iter().map(|(a, b, _)| (a, b, true)).collect();
        assert!(matches!(train_relationship("near", &ex), Err(ConceptError::Degenerate(_))));
    }
}
