//! Retrieval: matching graph construction, tree dynamic programming,
//! full-graph rescoring, de-duplication and successive refinement.
//!
//! All scores are natural-log probabilities.

mod dp;
mod graph;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dp::{optimize_groundings, RootSolution};
pub use graph::{build_matching_graph, Assignment, Link, MatchingGraph};

use crate::archive::{spatio_temporal_volume, ArchiveError, ArchiveStore, RelFreqTable, Volume};
use crate::concepts::{CalibrationModel, ConceptError, Scorer};
use crate::planner::{hpst, select_thresholds, PlanError, SpanningTree, ThresholdAssignment};
use crate::querymodel::ActivityGraph;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Concept(#[from] ConceptError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("model bundle carries no score statistics; threshold selection needs them")]
    NoStats,
}

/// A total mapping from query nodes to observations, with its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    pub mapping: BTreeMap<String, u64>,
    pub tree_log_score: f64,
    pub full_log_score: f64,
    pub volume: Volume,
}

impl Grounding {
    pub fn new(
        store: &ArchiveStore,
        mapping: BTreeMap<String, u64>,
        tree_log_score: f64,
    ) -> Result<Self, ArchiveError> {
        let ids: Vec<u64> = mapping.values().copied().collect();
        let volume = spatio_temporal_volume(store, &ids)?;
        Ok(Self {
            mapping,
            tree_log_score,
            full_log_score: tree_log_score,
            volume,
        })
    }
}

/// Ranking order: higher full score, then earlier start, then lower obs ids.
pub fn ranking_order(a: &Grounding, b: &Grounding) -> Ordering {
    b.full_log_score
        .total_cmp(&a.full_log_score)
        .then_with(|| a.volume.t_start.total_cmp(&b.volume.t_start))
        .then_with(|| a.mapping.values().cmp(b.mapping.values()))
}

/// Outcome of [`rescore_full_graph`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rescored {
    pub kept: Vec<Grounding>,
    pub filtered: usize,
}

/// Checks the edges left out of the tree and scores survivors against the
/// whole query. `full_log_score` is the tree score plus the log
/// probabilities of the non-tree edges; the result is sorted by
/// [`ranking_order`].
pub fn rescore_full_graph(
    candidates: Vec<Grounding>,
    graph: &ActivityGraph,
    tree: &SpanningTree,
    taus: &ThresholdAssignment,
    scorer: &Scorer<'_>,
) -> Result<Rescored, MatchError> {
    let store = scorer.store();
    let mut out = Rescored::default();
    'next: for mut g in candidates {
        let mut extra = 0.0;
        for (i, edge) in graph.edges.iter().enumerate() {
            if tree.is_tree_edge(i) {
                continue;
            }
            let a = store.get(g.mapping[&edge.a]).ok_or(ArchiveError::UnknownObservation(g.mapping[&edge.a]))?;
            let b = store.get(g.mapping[&edge.b]).ok_or(ArchiveError::UnknownObservation(g.mapping[&edge.b]))?;
            let factors = scorer.edge_factors(&edge.relationships, a, b)?;
            if factors.iter().product::<f64>() < taus.edge(i) {
                out.filtered += 1;
                continue 'next;
            }
            extra += factors.iter().map(|f| f.ln()).sum::<f64>();
        }
        g.full_log_score = g.tree_log_score + extra;
        out.kept.push(g);
    }
    out.kept.sort_by(ranking_order);
    Ok(out)
}

/// Greedy suppression: walks the ranked list and drops any grounding whose
/// volume IoU with an already kept one exceeds 0.5.
pub fn deduplicate(ranked: Vec<Grounding>) -> Vec<Grounding> {
    let mut kept: Vec<Grounding> = Vec::new();
    for g in ranked {
        if kept.iter().all(|k| k.volume.iou(&g.volume) <= 0.5) {
            kept.push(g);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Target recall for threshold selection.
    pub eta: f64,
    /// Number of ranked groundings returned.
    pub k: usize,
    /// Tree groundings kept per root assignment.
    pub top_r: usize,
    /// Maximum refinement rounds when nothing survives.
    pub rounds: usize,
    /// Threshold multiplier per refinement round.
    pub decay: f64,
    /// Use re-identification for `same_entity` across tracks.
    pub reid: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            eta: 0.9,
            k: 20,
            top_r: 1,
            rounds: 3,
            decay: 0.5,
            reid: true,
        }
    }
}

/// Counters describing one retrieval.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub assignments: usize,
    pub links: usize,
    pub root_assignments: usize,
    pub infeasible_roots: usize,
    pub tree_groundings: usize,
    pub filtered_by_non_tree_edges: usize,
    pub suppressed_duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Sorted by `full_log_score`, best first.
    pub ranked: Vec<Grounding>,
    pub thresholds_used: ThresholdAssignment,
    pub refinement_rounds: usize,
    pub tree: SpanningTree,
    pub diagnostics: Diagnostics,
}

/// One entry of the result document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedGrounding {
    pub rank: usize,
    pub full_log_score: f64,
    pub tree_log_score: f64,
    pub mapping: BTreeMap<String, u64>,
    pub volume: Volume,
    pub refinement_rounds: usize,
}

/// Serialized retrieval output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub groundings: Vec<RankedGrounding>,
    pub refinement_rounds: usize,
    pub thresholds: ThresholdAssignment,
    pub tree: SpanningTree,
    pub diagnostics: Diagnostics,
}

impl RetrievalResult {
    /// Ranks start at 1.
    pub fn document(&self) -> ResultDocument {
        ResultDocument {
            groundings: self
                .ranked
                .iter()
                .enumerate()
                .map(|(i, g)| RankedGrounding {
                    rank: i + 1,
                    full_log_score: g.full_log_score,
                    tree_log_score: g.tree_log_score,
                    mapping: g.mapping.clone(),
                    volume: g.volume,
                    refinement_rounds: self.refinement_rounds,
                })
                .collect(),
            refinement_rounds: self.refinement_rounds,
            thresholds: self.thresholds_used.clone(),
            tree: self.tree.clone(),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// Runs one matching pass with fixed thresholds: matching graph, tree DP,
/// full-graph rescoring and de-duplication.
pub fn match_with_thresholds(
    graph: &ActivityGraph,
    tree: &SpanningTree,
    taus: &ThresholdAssignment,
    scorer: &Scorer<'_>,
    top_r: usize,
) -> Result<(Vec<Grounding>, Diagnostics), MatchError> {
    let store = scorer.store();
    let h = build_matching_graph(graph, tree, scorer, taus)?;
    let (roots, infeasible) = optimize_groundings(tree, &h, store, top_r);
    let mut candidates = Vec::new();
    for root in &roots {
        for (score, mapping) in &root.groundings {
            candidates.push(Grounding::new(store, mapping.clone(), *score)?);
        }
    }
    let n_candidates = candidates.len();
    let rescored = rescore_full_graph(candidates, graph, tree, taus, scorer)?;
    let before = rescored.kept.len();
    let kept = deduplicate(rescored.kept);
    let diag = Diagnostics {
        assignments: h.assignments.len(),
        links: h.links.len(),
        root_assignments: h.node_assignments(&tree.root).len(),
        infeasible_roots: infeasible,
        tree_groundings: n_candidates,
        filtered_by_non_tree_edges: rescored.filtered,
        suppressed_duplicates: before - kept.len(),
    };
    Ok((kept, diag))
}

/// Full retrieval pipeline.
///
/// When nothing survives, every threshold is multiplied by `config.decay`
/// and matching is retried, up to `config.rounds` times.
pub fn retrieve(
    graph: &ActivityGraph,
    store: &ArchiveStore,
    models: &CalibrationModel,
    freqs: &RelFreqTable,
    config: &RetrievalConfig,
) -> Result<RetrievalResult, MatchError> {
    let stats = models.stats.as_ref().ok_or(MatchError::NoStats)?;
    let tree = hpst(graph, freqs)?;
    let taus = select_thresholds(graph, stats, config.eta)?;
    retrieve_with_thresholds(graph, store, models, tree, taus, config)
}

/// [`retrieve`] with an already chosen tree and thresholds.
pub fn retrieve_with_thresholds(
    graph: &ActivityGraph,
    store: &ArchiveStore,
    models: &CalibrationModel,
    tree: SpanningTree,
    mut taus: ThresholdAssignment,
    config: &RetrievalConfig,
) -> Result<RetrievalResult, MatchError> {
    let scorer = Scorer::new(store, models).with_reid(config.reid);
    let mut round = 0;
    loop {
        let (mut kept, diagnostics) = match_with_thresholds(graph, &tree, &taus, &scorer, config.top_r)?;
        if !kept.is_empty() || round >= config.rounds {
            kept.truncate(config.k);
            return Ok(RetrievalResult {
                ranked: kept,
                thresholds_used: taus,
                refinement_rounds: round,
                tree,
                diagnostics,
            });
        }
        taus = taus.relax(config.decay);
        round += 1;
    }
}
