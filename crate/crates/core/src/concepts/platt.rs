use serde::{Deserialize, Serialize};

use super::ConceptError;

/// Logistic map `P = 1 / (1 + exp(s * f + t))` from a classifier margin `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub s: f64,
    pub t: f64,
}

impl PlattParams {
    pub fn new(s: f64, t: f64) -> Result<Self, ConceptError> {
        if !s.is_finite() || s == 0.0 || !t.is_finite() {
            return Err(ConceptError::Invalid(format!("platt parameters s={s}, t={t}")));
        }
        Ok(Self { s, t })
    }

    /// Standard logistic: positive margins map above one half.
    pub fn identity() -> Self {
        Self { s: -1.0, t: 0.0 }
    }
}

/// Maps a margin to a probability. Not clamped: very large margins saturate
/// to exactly 0 or 1 in floating point.
pub fn margin_to_probability(margin: f64, platt: PlattParams) -> f64 {
    let z = platt.s * margin + platt.t;
    // evaluate on the side that cannot overflow
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

const MAX_ITER: usize = 5;
const TOL: f64 = 1e-10;
const MIN_STEP: f64 = 1e-10;
const SIGMA: f64 = 1e-12;

/// Fits `(s, t)` by maximum likelihood against prior-corrected targets
/// `(N+ + 1) / (N+ + 2)` and `1 / (N- + 2)`, using Newton steps with
/// backtracking.
pub fn fit_platt(margins: &[f64], labels: &[bool]) -> Result<PlattParams, ConceptError> {
    if margins.len() != labels.len() {
        return Err(ConceptError::Invalid(format!(
            "{} margins but {} labels",
            margins.len(),
            labels.len()
        )));
    }
    if margins.len() < 4 {
        return Err(ConceptError::Invalid(format!(
            "platt fit needs at least 4 examples, got {}",
            margins.len()
        )));
    }
    if let Some(m) = margins.iter().find(|m| !m.is_finite()) {
        return Err(ConceptError::Invalid(format!("non-finite margin {m}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ConceptError::Degenerate(format!(
            "platt fit needs both labels ({n_pos} positive, {n_neg} negative)"
        )));
    }

    let hi = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
    let lo = 1.0 / (n_neg as f64 + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();

    // negative log-likelihood in the numerically stable form
    let objective = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&targets)
            .map(|(&f, &y)| {
                let z = f * a + b;
                if z >= 0.0 {
                    y * z + (-z).exp().ln_1p()
                } else {
                    (y - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((n_neg as f64 + 1.0) / (n_pos as f64 + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&f, &y) in margins.iter().zip(&targets) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = y - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < TOL && g2.abs() < TOL {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        let mut moved = false;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    if a == 0.0 {
        // margins carry no signal in the fitted direction; keep the map monotone
        a = -f64::EPSILON;
    }
    PlattParams::new(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn midpoint_and_known_value() {
        assert_eq!(margin_to_probability(0.0, PlattParams::identity()), 0.5);
        let p = margin_to_probability(1.0, PlattParams { s: -2.0, t: 0.0 });
        assert!((p - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!((p - 0.88080).abs() < 1e-5);
    }

    #[test]
    fn saturates() {
        let p = margin_to_probability(1e6, PlattParams::identity());
        assert!((p - 1.0).abs() < 1e-12);
        let q = margin_to_probability(-1e6, PlattParams::identity());
        assert!((0.0..1e-12).contains(&q));
    }

    #[test]
    fn separated_orientation() {
        let p = fit_platt(&[-1.0, -1.0, 1.0, 1.0], &[false, false, true, true]).unwrap();
        assert!(margin_to_probability(1.0, p) > 0.5);
        assert!(margin_to_probability(-1.0, p) < 0.5);
        assert!(p.s < 0.0);
    }

    #[test]
    fn inverted_labels_flip_slope() {
        let m = [-2.0, -1.0, -0.5, 0.3, 0.8, 1.5, 2.0, -0.2];
        let l = [false, false, true, false, true, true, true, false];
        let inv: Vec<bool> = l.iter().map(|x| !x).collect();
        let a = fit_platt(&m, &l).unwrap();
        let b = fit_platt(&m, &inv).unwrap();
        assert!(a.s < 0.0 && b.s > 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            fit_platt(&[1.0, 2.0, 3.0, 4.0], &[true; 4]),
            Err(ConceptError::Degenerate(_))
        ));
        assert!(fit_platt(&[1.0, 2.0], &[true, false]).is_err());
        assert!(fit_platt(&[1.0, 2.0, 3.0], &[true, false, true, false]).is_err());
    }

    // Gradient of the objective vanishes at the fit: compare against a
    // brute-force grid refinement of the same objective.
    #[test]
    fn fit_matches_direct_minimisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut m = Vec::new();
        let mut l = Vec::new();
        for i in 0..400 {
            let pos = i % 2 == 0;
            m.push(n.sample(&mut rng) + if pos { 1.0 } else { -1.0 });
            l.push(pos);
        }
        let fit = fit_platt(&m, &l).unwrap();
        let np = 200.0;
        let (hi, lo) = ((np + 1.0) / (np + 2.0), 1.0 / (np + 2.0));
        let nll = |a: f64, b: f64| -> f64 {
            m.iter()
                .zip(&l)
                .map(|(&f, &y)| {
                    let p = 1.0 / (1.0 + (a * f + b).exp());
                    let t = if y { hi } else { lo };
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .sum()
        };
        // coordinate pattern search from a coarse start
        let (mut a, mut b, mut step) = (-1.0, 0.0, 0.5);
        while step > 1e-7 {
            let mut improved = false;
            for (da, db) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
                if nll(a + da, b + db) < nll(a, b) {
                    a += da;
                    b += db;
                    improved = true;
                }
            }
            if !improved {
                step /= 2.0;
            }
        }
        assert!((fit.s - a).abs() < 1e-4, "{} vs {a}", fit.s);
        assert!((fit.t - b).abs() < 1e-4, "{} vs {b}", fit.t);
    }

    #[test]
    fn brier_beats_constant_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = Normal::new(0.0, 1.0).unwrap();
        let (mut m, mut l) = (Vec::new(), Vec::new());
        for i in 0..2000 {
            let pos = i % 2 == 1;
            m.push(n.sample(&mut rng) + if pos { 1.0 } else { -1.0 });
            l.push(pos);
        }
        let fit = fit_platt(&m[..1000], &l[..1000]).unwrap();
        let brier: f64 = m[1000..]
            .iter()
            .zip(&l[1000..])
            .map(|(&f, &y)| (margin_to_probability(f, fit) - if y { 1.0 } else { 0.0 }).powi(2))
            .sum::<f64>()
            / 1000.0;
        assert!(brier < 0.25, "brier {brier}");
    }

    proptest! {
        #[test]
        fn monotone_in_margin(mut ms in prop::collection::vec(-50.0f64..50.0, 2..200),
                              s in -5.0f64..-0.01, t in -3.0f64..3.0) {
            ms.sort_by(f64::total_cmp);
            let p = PlattParams { s, t };
            for w in ms.windows(2) {
                let (a, b) = (margin_to_probability(w[0], p), margin_to_probability(w[1], p));
                prop_assert!(a <= b);
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }

        #[test]
        fn strictly_inside_for_moderate_margins(m in -30.0f64..30.0, s in -1.0f64..-0.01) {
            let p = margin_to_probability(m, PlattParams { s, t: 0.0 });
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}
