use serde::{Deserialize, Serialize};

use super::linear::{train_linear, TrainOptions};
use super::platt::{margin_to_probability, PlattParams};
use super::{clamp_probability, ConceptError, PROB_EPS};
use crate::archive::TrackletSummary;

/// Elementary per-state features before squaring.
pub const REID_BASE_FEATURES: [&str; 6] = ["log_aspect", "log_area", "speed", "x", "y", "t"];

/// Dimension of the tracklet feature vector `[1, u, u^2]`.
pub const REID_DIM: usize = 1 + 2 * REID_BASE_FEATURES.len();

/// Bilinear re-identification model: score `trace(W X1 X2^T)` then Platt.
///
/// `X1` describes the end of the earlier tracklet and `X2` the start of the
/// later one; `W[0][0]` acts as the bias. Elementary features are centered
/// on `center` (their training mean) before squaring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReIdModel {
    pub w: Vec<Vec<f64>>,
    pub platt: PlattParams,
    pub feature_spec: Vec<String>,
    #[serde(default)]
    pub center: [f64; 6],
}

impl ReIdModel {
    pub fn check(&self) -> Result<(), ConceptError> {
        let d = self.feature_spec.len();
        if self.w.len() != d || self.w.iter().any(|r| r.len() != d) {
            return Err(ConceptError::Invalid(format!("re-id W must be {d}x{d}")));
        }
        if self.w.iter().flatten().chain(&self.center).any(|v| !v.is_finite()) {
            return Err(ConceptError::Invalid("re-id W has non-finite entries".into()));
        }
        PlattParams::new(self.platt.s, self.platt.t).map(|_| ())
    }

    /// Untrained model that scores every pair at one half.
    pub fn neutral() -> Self {
        Self {
            w: vec![vec![0.0; REID_DIM]; REID_DIM],
            platt: PlattParams::identity(),
            feature_spec: reid_feature_spec(),
            center: [0.0; 6],
        }
    }
}

pub fn reid_feature_spec() -> Vec<String> {
    let mut spec = vec!["one".to_string()];
    spec.extend(REID_BASE_FEATURES.iter().map(|s| s.to_string()));
    spec.extend(REID_BASE_FEATURES.iter().map(|s| format!("{s}^2")));
    spec
}

fn expand(u: [f64; 6]) -> [f64; REID_DIM] {
    let mut x = [0.0; REID_DIM];
    x[0] = 1.0;
    for (i, v) in u.iter().enumerate() {
        x[1 + i] = *v;
        x[1 + u.len() + i] = v * v;
    }
    x
}

/// Uncentered elementary features of a tracklet's end (or start) state.
fn elementary(s: &TrackletSummary, end: bool) -> [f64; 6] {
    let ((x, y), t) = if end {
        (s.end_center, s.end_time)
    } else {
        (s.start_center, s.start_time)
    };
    [
        s.mean_aspect.ln(),
        s.mean_area.ln(),
        s.mean_speed / 10.0,
        x / 100.0,
        y / 100.0,
        t / 100.0,
    ]
}

fn ordered<'a>(a: &'a TrackletSummary, b: &'a TrackletSummary) -> (&'a TrackletSummary, &'a TrackletSummary) {
    if (a.start_time, a.track_id) <= (b.start_time, b.track_id) {
        (a, b)
    } else {
        (b, a)
    }
}

/// `(X1, X2)` for a tracklet pair, earlier tracklet first.
pub fn reid_features(
    a: &TrackletSummary,
    b: &TrackletSummary,
    center: &[f64; 6],
) -> ([f64; REID_DIM], [f64; REID_DIM]) {
    let (first, second) = ordered(a, b);
    let state = |s, end| {
        let mut u = elementary(s, end);
        for (v, c) in u.iter_mut().zip(center) {
            *v -= c;
        }
        expand(u)
    };
    (state(first, true), state(second, false))
}

/// Raw bilinear score `trace(W X1 X2^T) = sum_ij W_ij X1_j X2_i`.
pub fn bilinear_score(w: &[Vec<f64>], x1: &[f64], x2: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, row) in w.iter().enumerate() {
        for (j, wij) in row.iter().enumerate() {
            s += wij * x1[j] * x2[i];
        }
    }
    s
}

/// True when the two tracklets share at least one instant.
pub fn tracklets_overlap(a: &TrackletSummary, b: &TrackletSummary) -> bool {
    a.start_time <= b.end_time && b.start_time <= a.end_time
}

/// Probability that two tracklets belong to the same physical entity,
/// clamped to `[eps, 1 - eps]`. Symmetric in its arguments. Tracklets that
/// overlap in time get eps: one entity is never in two tracks at once.
pub fn reid_probability(a: &TrackletSummary, b: &TrackletSummary, model: &ReIdModel) -> f64 {
    if tracklets_overlap(a, b) {
        return PROB_EPS;
    }
    let (x1, x2) = reid_features(a, b, &model.center);
    let score = bilinear_score(&model.w, &x1, &x2);
    clamp_probability(margin_to_probability(score, model.platt))
}

/// Trains `W` as a linear classifier over the vectorized outer product
/// `X2 X1^T`, calibrated like the relationship concepts.
pub fn train_reid(examples: &[(TrackletSummary, TrackletSummary, bool)]) -> Result<ReIdModel, ConceptError> {
    let d = REID_DIM;
    let mut center = [0.0; 6];
    for (a, b, _) in examples {
        let (first, second) = ordered(a, b);
        for (c, v) in center.iter_mut().zip(elementary(first, true).iter().zip(elementary(second, false))) {
            *c += (v.0 + v.1) / (2 * examples.len()) as f64;
        }
    }
    let mut xs = Vec::with_capacity(examples.len());
    let mut ys = Vec::with_capacity(examples.len());
    for (a, b, label) in examples {
        let (x1, x2) = reid_features(a, b, &center);
        // skip the (0, 0) entry: it is the constant 1 and becomes the bias
        let mut row = Vec::with_capacity(d * d - 1);
        for i in 0..d {
            for j in 0..d {
                if i + j > 0 {
                    row.push(x1[j] * x2[i]);
                }
            }
        }
        xs.push(row);
        ys.push(*label);
    }
    let names = (0..d * d).skip(1).map(|k| format!("w{}_{}", k / d, k % d)).collect();
    let lin = train_linear("same_entity", names, &xs, &ys, TrainOptions::default())?;
    let mut w = vec![vec![0.0; d]; d];
    w[0][0] = lin.bias;
    for (k, wk) in lin.weights.iter().enumerate() {
        let flat = k + 1;
        w[flat / d][flat % d] = *wk;
    }
    Ok(ReIdModel {
        w,
        platt: lin.platt,
        feature_spec: reid_feature_spec(),
        center,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_on_unit_vector() {
        let mut w = vec![vec![0.0; 3]; 3];
        for (i, row) in w.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let e1 = [1.0, 0.0, 0.0];
        assert_eq!(bilinear_score(&w, &e1, &e1), 1.0);
        assert_eq!(margin_to_probability(0.0, PlattParams::identity()), 0.5);
    }

    #[test]
    fn bilinear_matches_trace_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 4;
        let w: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let x1: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        // trace(W M) with M = x1 x2^T
        let mut tr = 0.0;
        for i in 0..d {
            for k in 0..d {
                tr += w[i][k] * x1[k] * x2[i];
            }
        }
        assert!((bilinear_score(&w, &x1, &x2) - tr).abs() < 1e-12);
    }

    fn summary(id: u64, t0: f64, t1: f64, p0: (f64, f64), p1: (f64, f64), area: f64) -> TrackletSummary {
        TrackletSummary {
            track_id: id,
            start_time: t0,
            end_time: t1,
            start_center: p0,
            end_center: p1,
            mean_aspect: 0.4,
            mean_area: area,
            mean_speed: 10.0,
        }
    }

    fn pairs(seed: u64, n: usize) -> Vec<(TrackletSummary, TrackletSummary, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for i in 0..n {
            let t = rng.random_range(0.0..1500.0);
            let p = (rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0));
            let area = rng.random_range(900.0..1600.0);
            let a = summary(2 * i as u64, t, t + 40.0, (p.0 - 300.0, p.1), p, area);
            if i % 2 == 0 {
                let q = (p.0 + rng.random_range(-10.0..10.0), p.1 + rng.random_range(-10.0..10.0));
                let b = summary(2 * i as u64 + 1, t + 41.0, t + 80.0, q, (q.0 + 300.0, q.1), area);
                out.push((a, b, true));
            } else {
                let t2 = rng.random_range(0.0..1500.0);
                let q = (rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0));
                let b = summary(2 * i as u64 + 1, t2, t2 + 40.0, q, q, rng.random_range(900.0..1600.0));
                out.push((a, b, false));
            }
        }
        out
    }

    #[test]
    fn separates_broken_tracks_from_random_pairs() {
        let model = train_reid(&pairs(1, 400)).unwrap();
        model.check().unwrap();
        let test = pairs(2, 400);
        let correct = test
            .iter()
            .filter(|(a, b, y)| (reid_probability(a, b, &model) > 0.5) == *y)
            .count();
        assert!(correct as f64 / test.len() as f64 >= 0.9, "{correct}");
        let (a, b, _) = &test[0];
        assert_eq!(reid_probability(a, b, &model), reid_probability(b, a, &model));
    }

    #[test]
    fn overlapping_tracklets_are_never_the_same_entity() {
        let model = train_reid(&pairs(1, 400)).unwrap();
        let a = summary(1, 0.0, 40.0, (0.0, 0.0), (300.0, 0.0), 1000.0);
        let b = summary(2, 40.0, 80.0, (300.0, 0.0), (600.0, 0.0), 1000.0);
        assert_eq!(reid_probability(&a, &b, &model), PROB_EPS);
        let c = summary(3, 41.0, 80.0, (300.0, 0.0), (600.0, 0.0), 1000.0);
        assert!(reid_probability(&a, &c, &model) > 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        let only_pos: Vec<_> = pairs(1, 40).into_iter().filter(|p| p.2).collect();
        assert!(matches!(train_reid(&only_pos), Err(ConceptError::Degenerate(_))));
    }
}
