use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::platt::{fit_platt, margin_to_probability, PlattParams};
use super::{clamp_probability, ConceptError};

/// Linear scorer `w . x + b` followed by a Platt map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConcept {
    pub name: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub platt: PlattParams,
    pub feature_spec: Vec<String>,
}

impl LinearConcept {
    /// One-feature concept over a detector margin.
    pub fn from_margin(name: impl Into<String>, platt: PlattParams) -> Self {
        Self {
            name: name.into(),
            weights: vec![1.0],
            bias: 0.0,
            platt,
            feature_spec: vec!["margin".into()],
        }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.weights.len());
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// Probability clamped to `[eps, 1 - eps]`.
    pub fn probability(&self, x: &[f64]) -> f64 {
        clamp_probability(margin_to_probability(self.margin(x), self.platt))
    }

    pub fn check(&self) -> Result<(), ConceptError> {
        if self.weights.len() != self.feature_spec.len() {
            return Err(ConceptError::Invalid(format!(
                "concept '{}': {} weights for {} features",
                self.name,
                self.weights.len(),
                self.feature_spec.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) || !self.bias.is_finite() {
            return Err(ConceptError::Invalid(format!("concept '{}': non-finite weights", self.name)));
        }
        PlattParams::new(self.platt.s, self.platt.t).map(|_| ())
    }
}

/// Fits a single-feature margin concept: only the Platt map is learned.
pub fn train_margin_concept(
    name: impl Into<String>,
    margins: &[f64],
    labels: &[bool],
) -> Result<LinearConcept, ConceptError> {
    let platt = fit_platt(margins, labels)?;
    Ok(LinearConcept::from_margin(name, platt))
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    /// L2 penalty on standardized weights.
    pub lambda: f64,
    pub folds: usize,
    pub min_examples: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            folds: 5,
            min_examples: 10,
        }
    }
}

/// Trains a regularized logistic-regression concept and calibrates it on
/// out-of-fold margins.
///
/// Examples are put in a canonical order first, so the result does not
/// depend on the order they were given in.
pub fn train_linear(
    name: impl Into<String>,
    feature_spec: Vec<String>,
    xs: &[Vec<f64>],
    ys: &[bool],
    opts: TrainOptions,
) -> Result<LinearConcept, ConceptError> {
    let name = name.into();
    let d = feature_spec.len();
    if xs.len() != ys.len() {
        return Err(ConceptError::Invalid(format!("{} rows but {} labels", xs.len(), ys.len())));
    }
    if xs.len() < opts.min_examples {
        return Err(ConceptError::Invalid(format!(
            "'{name}' needs at least {} examples, got {}",
            opts.min_examples,
            xs.len()
        )));
    }
    if let Some(row) = xs.iter().find(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(ConceptError::Invalid(format!(
            "'{name}': bad feature row of length {} (expected {d} finite values)",
            row.len()
        )));
    }
    let n_pos = ys.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == ys.len() {
        return Err(ConceptError::Degenerate(format!(
            "'{name}' training data has a single class"
        )));
    }

    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| ys[i].cmp(&ys[j]).then_with(|| lex_cmp(&xs[i], &xs[j])));
    let xs: Vec<&[f64]> = order.iter().map(|&i| xs[i].as_slice()).collect();
    let ys: Vec<bool> = order.iter().map(|&i| ys[i]).collect();

    let (weights, bias) = fit_logistic(&xs, &ys, opts.lambda);

    let k = opts.folds.max(2);
    let mut oof = vec![0.0; xs.len()];
    let mut usable = true;
    for fold in 0..k {
        let train: Vec<usize> = (0..xs.len()).filter(|i| i % k != fold).collect();
        let tx: Vec<&[f64]> = train.iter().map(|&i| xs[i]).collect();
        let ty: Vec<bool> = train.iter().map(|&i| ys[i]).collect();
        if ty.iter().all(|&y| y) || ty.iter().all(|&y| !y) {
            usable = false;
            break;
        }
        let (w, b) = fit_logistic(&tx, &ty, opts.lambda);
        for i in (0..xs.len()).filter(|i| i % k == fold) {
            oof[i] = dot(&w, xs[i]) + b;
        }
    }
    if !usable {
        for (m, x) in oof.iter_mut().zip(&xs) {
            *m = dot(&weights, x) + bias;
        }
    }
    let platt = fit_platt(&oof, &ys)?;
    Ok(LinearConcept {
        name,
        weights,
        bias,
        platt,
        feature_spec,
    })
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Newton/IRLS on standardized features; returns weights in raw units.
fn fit_logistic(xs: &[&[f64]], ys: &[bool], lambda: f64) -> (Vec<f64>, f64) {
    let n = xs.len();
    let d = xs.first().map_or(0, |r| r.len());
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for x in xs {
        for j in 0..d {
            mean[j] += x[j] / nf;
        }
    }
    let mut scale = vec![0.0; d];
    for x in xs {
        for j in 0..d {
            scale[j] += (x[j] - mean[j]).powi(2) / nf;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 0.0 };
    }
    // column 0 is the intercept
    let z = DMatrix::from_fn(n, d + 1, |i, j| {
        if j == 0 {
            1.0
        } else if scale[j - 1] == 0.0 {
            0.0
        } else {
            (xs[i][j - 1] - mean[j - 1]) / scale[j - 1]
        }
    });
    let y = DVector::from_fn(n, |i, _| if ys[i] { 1.0 } else { 0.0 });
    let mut penalty = DVector::from_element(d + 1, lambda);
    penalty[0] = 1e-9;

    let objective = |beta: &DVector<f64>| -> f64 {
        let eta = &z * beta;
        let mut loss = 0.0;
        for i in 0..n {
            let e = eta[i];
            // log(1 + exp(e)) - y e
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            loss += softplus - y[i] * e;
        }
        loss + 0.5 * beta.iter().zip(penalty.iter()).map(|(b, l)| l * b * b).sum::<f64>()
    };

    let mut beta = DVector::zeros(d + 1);
    let mut fval = objective(&beta);
    for _ in 0..100 {
        let eta = &z * &beta;
        let p = eta.map(sigmoid);
        let mut grad = z.transpose() * (&p - &y);
        let mut zw = z.clone();
        for i in 0..n {
            let w = p[i] * (1.0 - p[i]);
            zw.row_mut(i).scale_mut(w);
        }
        let mut hess = z.transpose() * zw;
        for j in 0..=d {
            grad[j] += penalty[j] * beta[j];
            hess[(j, j)] += penalty[j];
        }
        if grad.amax() < 1e-10 {
            break;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        let decrement = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand = &beta - &step * t;
            let fc = objective(&cand);
            if fc <= fval - 1e-4 * t * decrement {
                beta = cand;
                fval = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || (step.amax() * t) < 1e-12 {
            break;
        }
    }

    let mut weights = vec![0.0; d];
    let mut bias = beta[0];
    for j in 0..d {
        if scale[j] > 0.0 {
            weights[j] = beta[j + 1] / scale[j];
            bias -= weights[j] * mean[j];
        }
    }
    (weights, bias)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let c = if pos { 2.0 } else { -2.0 };
            xs.push(vec![c + rng.random_range(-1.5..1.5), rng.random_range(-5.0..5.0)]);
            ys.push(pos);
        }
        (xs, ys)
    }

    fn spec() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn separable_training_accuracy_is_perfect() {
        let (xs, ys) = blobs(200, 1);
        let c = train_linear("t", spec(), &xs, &ys, TrainOptions::default()).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(c.margin(x) > 0.0, y);
            assert_eq!(c.probability(x) > 0.5, y);
        }
        assert!(c.check().is_ok());
    }

    #[test]
    fn order_does_not_matter() {
        let (xs, ys) = blobs(120, 3);
        let a = train_linear("t", spec(), &xs, &ys, TrainOptions::default()).unwrap();
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        let xs2: Vec<_> = idx.iter().map(|&i| xs[i].clone()).collect();
        let ys2: Vec<_> = idx.iter().map(|&i| ys[i]).collect();
        let b = train_linear("t", spec(), &xs2, &ys2, TrainOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_and_too_few() {
        let (xs, _) = blobs(20, 1);
        assert!(matches!(
            train_linear("t", spec(), &xs, &[true; 20], TrainOptions::default()),
            Err(ConceptError::Degenerate(_))
        ));
        let (xs, ys) = blobs(6, 1);
        assert!(train_linear("t", spec(), &xs, &ys, TrainOptions::default()).is_err());
    }

    #[test]
    fn constant_feature_is_ignored() {
        let (mut xs, ys) = blobs(60, 5);
        for x in &mut xs {
            x[1] = 3.0;
        }
        let c = train_linear("t", spec(), &xs, &ys, TrainOptions::default()).unwrap();
        assert_eq!(c.weights[1], 0.0);
        assert!(c.weights[0] > 0.0);
    }
}
