use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::MatchError;
use crate::archive::{ArchiveStore, Observation};
use crate::concepts::Scorer;
use crate::planner::{SpanningTree, ThresholdAssignment};
use crate::querymodel::ActivityGraph;

/// Proposed assignment of one query node to one observation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub node: String,
    pub obs_id: u64,
    pub log_prob: f64,
}

/// Tree edge between a parent and a child assignment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Link {
    pub parent: usize,
    pub child: usize,
    pub log_prob: f64,
}

/// Candidate assignments and the tree-edge links between them.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MatchingGraph {
    pub assignments: Vec<Assignment>,
    pub links: Vec<Link>,
    /// node id -> assignment indices, ascending obs_id
    pub by_node: BTreeMap<String, Vec<usize>>,
}

impl MatchingGraph {
    pub fn node_assignments(&self, node: &str) -> &[usize] {
        self.by_node.get(node).map_or(&[], Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Child links per assignment, each list in link order.
    pub fn children_of(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.assignments.len()];
        for (i, l) in self.links.iter().enumerate() {
            out[l.parent].push(i);
        }
        out
    }
}

/// Observations passing a node's threshold, with their log probabilities.
pub(crate) fn node_candidates(
    scorer: &Scorer<'_>,
    store: &ArchiveStore,
    graph: &ActivityGraph,
    node_id: &str,
    tau: f64,
) -> Result<Vec<(usize, f64)>, MatchError> {
    let node = graph.node(node_id).expect("tree nodes come from the graph");
    let scored: Result<Vec<Option<(usize, f64)>>, MatchError> = store
        .observations()
        .par_iter()
        .enumerate()
        .map(|(i, obs)| {
            let factors = scorer.node_factors(node, obs)?;
            let p: f64 = factors.iter().product();
            Ok((p >= tau).then(|| (i, factors.iter().map(|f| f.ln()).sum())))
        })
        .collect();
    Ok(scored?.into_iter().flatten().collect())
}

/// Edge log-probability between a parent and child observation, respecting
/// the edge's declared direction.
pub(crate) fn oriented_edge(
    scorer: &Scorer<'_>,
    graph: &ActivityGraph,
    edge: usize,
    parent_node: &str,
    parent: &Observation,
    child: &Observation,
) -> Result<(f64, f64), MatchError> {
    let e = &graph.edges[edge];
    let (a, b) = if e.a == parent_node { (parent, child) } else { (child, parent) };
    let factors = scorer.edge_factors(&e.relationships, a, b)?;
    Ok((factors.iter().product(), factors.iter().map(|f| f.ln()).sum()))
}

/// Builds the matching graph from the tree root towards the leaves.
///
/// A child assignment is kept only if it links to at least one surviving
/// assignment of its parent node; no assignment is below its node
/// threshold and no link below its edge threshold.
pub fn build_matching_graph(
    graph: &ActivityGraph,
    tree: &SpanningTree,
    scorer: &Scorer<'_>,
    taus: &ThresholdAssignment,
) -> Result<MatchingGraph, MatchError> {
    let store = scorer.store();
    let mut h = MatchingGraph::default();
    let root = &tree.root;
    let mut root_ids = Vec::new();
    for (obs, lp) in node_candidates(scorer, store, graph, root, taus.node(root))? {
        root_ids.push(h.assignments.len());
        h.assignments.push(Assignment {
            node: root.clone(),
            obs_id: store.observation(obs).obs_id,
            log_prob: lp,
        });
    }
    h.by_node.insert(root.clone(), root_ids);

    for child in tree.order.iter().skip(1) {
        let parent = &tree.parent[child];
        let edge = tree.parent_edge[child];
        let edge_tau = taus.edge(edge);
        let candidates = node_candidates(scorer, store, graph, child, taus.node(child))?;
        let parents: Vec<usize> = h.node_assignments(parent).to_vec();

        // (parent assignment, candidate position, link log-prob), in parent order
        let found: Result<Vec<Vec<(usize, usize, f64)>>, MatchError> = parents
            .par_iter()
            .map(|&pa| {
                let pobs = store.get(h.assignments[pa].obs_id).expect("assignment in archive");
                let mut out = Vec::new();
                for (ci, &(cobs, _)) in candidates.iter().enumerate() {
                    let (p, lp) =
                        oriented_edge(scorer, graph, edge, parent, pobs, store.observation(cobs))?;
                    if p >= edge_tau {
                        out.push((pa, ci, lp));
                    }
                }
                Ok(out)
            })
            .collect();
        let found = found?;

        let mut used: Vec<bool> = vec![false; candidates.len()];
        for links in &found {
            for &(_, ci, _) in links {
                used[ci] = true;
            }
        }
        let mut ids = Vec::new();
        let mut slot = vec![usize::MAX; candidates.len()];
        for (ci, &(obs, lp)) in candidates.iter().enumerate() {
            if used[ci] {
                slot[ci] = h.assignments.len();
                ids.push(h.assignments.len());
                h.assignments.push(Assignment {
                    node: child.clone(),
                    obs_id: store.observation(obs).obs_id,
                    log_prob: lp,
                });
            }
        }
        h.by_node.insert(child.clone(), ids);
        for links in found {
            for (pa, ci, lp) in links {
                h.links.push(Link {
                    parent: pa,
                    child: slot[ci],
                    log_prob: lp,
                });
            }
        }
    }
    Ok(h)
}
