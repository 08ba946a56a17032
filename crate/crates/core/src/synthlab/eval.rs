use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::GroundTruthInstance;
use crate::archive::Volume;
use crate::matcher::RetrievalResult;

/// Cutoffs reported by [`EvalReport::precision_at_k`].
pub const PRECISION_KS: [usize; 4] = [1, 5, 10, 20];

/// A return matches a truth instance when their volume IoU exceeds this.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Number of returns at or above the score threshold.
    pub rank: usize,
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_returns: usize,
    pub n_truth: usize,
    pub true_positives: usize,
    /// For each return in rank order, the index of the truth it matched.
    pub matches: Vec<Option<usize>>,
    /// One point per distinct score threshold, highest threshold first.
    pub pr_points: Vec<PrPoint>,
    pub auc: f64,
    /// `None` when nothing was returned.
    pub precision_at_k: BTreeMap<usize, Option<f64>>,
    pub recall: f64,
}

impl EvalReport {
    /// True positives among the first `k` returns over `k`.
    pub fn precision_at(&self, k: usize) -> Option<f64> {
        if self.n_returns == 0 || k == 0 {
            return None;
        }
        let tp = self.matches.iter().take(k).filter(|m| m.is_some()).count();
        Some(tp as f64 / k as f64)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report always serializes");
        s.push('\n');
        s
    }

    pub fn pr_csv(&self) -> String {
        let mut s = String::from("rank,score,precision,recall\n");
        for p in &self.pr_points {
            let _ = writeln!(s, "{},{},{},{}", p.rank, p.score, p.precision, p.recall);
        }
        s
    }

    /// Plain-text summary; missing precision values print as `-`.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14}{}", "returns", self.n_returns);
        let _ = writeln!(s, "{:<14}{}", "truths", self.n_truth);
        let _ = writeln!(s, "{:<14}{}", "matched", self.true_positives);
        let _ = writeln!(s, "{:<14}{:.3}", "recall", self.recall);
        let _ = writeln!(s, "{:<14}{:.3}", "auc", self.auc);
        for (k, p) in &self.precision_at_k {
            let label = format!("precision@{k}");
            match p {
                Some(p) => {
                    let _ = writeln!(s, "{label:<14}{p:.3}");
                }
                None => {
                    let _ = writeln!(s, "{label:<14}-");
                }
            }
        }
        s
    }
}

/// Scores a ranked list of `(score, volume)` returns against planted truth.
///
/// Returns are matched greedily in rank order, each to the unmatched truth
/// with the highest IoU above [`MATCH_IOU`]. The PR curve gets one point per
/// distinct score; the area under it is trapezoidal, starting from recall 0
/// at the first point's precision.
pub fn evaluate_ranked(returns: &[(f64, Volume)], truth: &[GroundTruthInstance]) -> EvalReport {
    let mut used = vec![false; truth.len()];
    let mut matches = Vec::with_capacity(returns.len());
    for (_, v) in returns {
        let best = truth
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, t)| (i, v.iou(&t.volume)))
            .filter(|(_, iou)| *iou > MATCH_IOU)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((i, _)) = best {
            used[i] = true;
        }
        matches.push(best.map(|(i, _)| i));
    }

    let n_truth = truth.len();
    let recall_of = |tp: usize| if n_truth == 0 { 0.0 } else { tp as f64 / n_truth as f64 };
    let mut pr_points = Vec::new();
    let mut tp = 0;
    for (i, (score, _)) in returns.iter().enumerate() {
        if matches[i].is_some() {
            tp += 1;
        }
        let last_of_tie = returns.get(i + 1).is_none_or(|(next, _)| next != score);
        if last_of_tie {
            pr_points.push(PrPoint {
                rank: i + 1,
                score: *score,
                precision: tp as f64 / (i + 1) as f64,
                recall: recall_of(tp),
            });
        }
    }

    let mut auc = 0.0;
    if let Some(first) = pr_points.first() {
        let (mut r0, mut p0) = (0.0, first.precision);
        for p in &pr_points {
            auc += (p.recall - r0) * (p.precision + p0) / 2.0;
            r0 = p.recall;
            p0 = p.precision;
        }
    }

    let mut report = EvalReport {
        n_returns: returns.len(),
        n_truth,
        true_positives: tp,
        matches,
        pr_points,
        auc,
        precision_at_k: BTreeMap::new(),
        recall: recall_of(tp),
    };
    report.precision_at_k = PRECISION_KS.iter().map(|&k| (k, report.precision_at(k))).collect();
    report
}

pub fn evaluate(result: &RetrievalResult, truth: &[GroundTruthInstance]) -> EvalReport {
    let returns: Vec<(f64, Volume)> = result.ranked.iter().map(|g| (g.full_log_score, g.volume)).collect();
    evaluate_ranked(&returns, truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlab::Template;

    fn vol(x: f64) -> Volume {
        Volume {
            x,
            y: 0.0,
            w: 10.0,
            h: 10.0,
            t_start: 0.0,
            t_end: 10.0,
        }
    }

    fn truth(xs: &[f64]) -> Vec<GroundTruthInstance> {
        xs.iter()
            .map(|&x| GroundTruthInstance {
                template: Template::ObjectDeposit,
                mapping: BTreeMap::new(),
                key: BTreeMap::new(),
                volume: vol(x),
            })
            .collect()
    }

    #[test]
    fn identical_volume_is_a_true_positive() {
        let r = evaluate_ranked(&[(0.0, vol(0.0))], &truth(&[0.0]));
        assert_eq!(r.matches, vec![Some(0)]);
        assert_eq!(r.precision_at(1), Some(1.0));
    }

    #[test]
    fn no_returns_leaves_precision_absent() {
        let r = evaluate_ranked(&[], &truth(&[0.0, 100.0]));
        assert!(r.precision_at_k.values().all(Option::is_none));
        assert_eq!(r.auc, 0.0);
        assert!(r.table().contains("precision@1   -"));
    }

    #[test]
    fn four_returns_two_correct_three_truths() {
        let returns = [(-1.0, vol(0.0)), (-2.0, vol(500.0)), (-3.0, vol(100.0)), (-4.0, vol(600.0))];
        let r = evaluate_ranked(&returns, &truth(&[0.0, 100.0, 200.0]));
        assert_eq!(r.precision_at(4), Some(0.5));
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.true_positives, 2);
    }

    #[test]
    fn each_truth_matches_once() {
        let returns = [(-1.0, vol(0.0)), (-2.0, vol(1.0))];
        let r = evaluate_ranked(&returns, &truth(&[0.0]));
        assert_eq!(r.matches, vec![Some(0), None]);
    }

    #[test]
    fn greedy_picks_best_overlap() {
        // overlaps 0.67 with truth 0 and 1.0 with truth 1
        let r = evaluate_ranked(&[(-1.0, vol(2.0))], &truth(&[0.0, 2.0]));
        assert_eq!(r.matches, vec![Some(1)]);
    }

    #[test]
    fn perfect_ranking_has_unit_area() {
        let mut returns: Vec<(f64, Volume)> = (0..5).map(|i| (-(i as f64), vol(100.0 * i as f64))).collect();
        returns.extend((0..5).map(|i| (-10.0 - i as f64, vol(5000.0 + 100.0 * i as f64))));
        let r = evaluate_ranked(&returns, &truth(&[0.0, 100.0, 200.0, 300.0, 400.0]));
        assert!((r.auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_true_returns_has_zero_area() {
        let returns: Vec<(f64, Volume)> = (0..5).map(|i| (-(i as f64), vol(5000.0 + 100.0 * i as f64))).collect();
        let r = evaluate_ranked(&returns, &truth(&[0.0, 100.0]));
        assert_eq!(r.auc, 0.0);
    }

    #[test]
    fn trapezoid_by_hand() {
        // hits at ranks 1 and 3 of 4, two truths:
        // (0,1) (0.5,1) (0.5,0.5) (1,0.667) (1,0.5)
        let returns = [(-1.0, vol(0.0)), (-2.0, vol(900.0)), (-3.0, vol(100.0)), (-4.0, vol(800.0))];
        let r = evaluate_ranked(&returns, &truth(&[0.0, 100.0]));
        let expected = 0.5 * 1.0 + 0.5 * (0.5 + 2.0 / 3.0) / 2.0;
        assert!((r.auc - expected).abs() < 1e-12, "{}", r.auc);
        let recalls: Vec<f64> = r.pr_points.iter().map(|p| p.recall).collect();
        assert!(recalls.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn tied_scores_share_a_threshold() {
        let returns = [(-1.0, vol(0.0)), (-1.0, vol(900.0)), (-2.0, vol(100.0))];
        let r = evaluate_ranked(&returns, &truth(&[0.0, 100.0]));
        assert_eq!(r.pr_points.len(), 2);
        assert_eq!(r.pr_points[0].rank, 2);
        assert_eq!(r.pr_points[0].precision, 0.5);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let r = evaluate_ranked(&[(-1.0, vol(0.0))], &truth(&[0.0]));
        assert_eq!(r.pr_csv(), "rank,score,precision,recall\n1,-1,1,1\n");
    }
}
