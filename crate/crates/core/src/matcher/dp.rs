use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;

use super::graph::MatchingGraph;
use crate::archive::ArchiveStore;
use crate::planner::SpanningTree;

/// Best tree groundings for one root assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct RootSolution {
    pub root_assignment: usize,
    /// Up to `top_r` `(tree log score, node id -> obs_id)`, best first.
    pub groundings: Vec<(f64, BTreeMap<String, u64>)>,
}

/// Partial solution for the subtree under one assignment: obs ids by tree
/// position (`None` outside the subtree).
#[derive(Debug, Clone)]
struct Partial {
    score: f64,
    first_time: f64,
    obs: Vec<Option<u64>>,
}

fn better(a: &Partial, b: &Partial) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.first_time.total_cmp(&b.first_time))
        .then_with(|| a.obs.cmp(&b.obs))
}

fn merge(a: &Partial, b: &Partial, extra: f64) -> Partial {
    Partial {
        score: a.score + b.score + extra,
        first_time: a.first_time.min(b.first_time),
        obs: a.obs.iter().zip(&b.obs).map(|(x, y)| x.or(*y)).collect(),
    }
}

/// Leaf-to-root max-product over the matching graph.
///
/// Each assignment keeps its `top_r` best subtree solutions; a parent
/// combines, child node by child node, the best options reachable over its
/// links. Root assignments left without a complete subtree are dropped and
/// counted in the second return value.
pub fn optimize_groundings(
    tree: &SpanningTree,
    h: &MatchingGraph,
    store: &ArchiveStore,
    top_r: usize,
) -> (Vec<RootSolution>, usize) {
    let r = top_r.max(1);
    let position: BTreeMap<&str, usize> =
        tree.order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let n_nodes = tree.order.len();
    let children_links = h.children_of();
    let mut best: Vec<Vec<Partial>> = vec![Vec::new(); h.assignments.len()];

    for node in tree.order.iter().rev() {
        let child_nodes: Vec<&str> = tree.children(node);
        let ids = h.node_assignments(node);
        let solved: Vec<(usize, Vec<Partial>)> = ids
            .par_iter()
            .map(|&ai| {
                let a = &h.assignments[ai];
                let mut obs = vec![None; n_nodes];
                obs[position[node.as_str()]] = Some(a.obs_id);
                let time = store.get(a.obs_id).map_or(f64::INFINITY, |o| o.time);
                let mut acc = vec![Partial {
                    score: a.log_prob,
                    first_time: time,
                    obs,
                }];
                for &cn in &child_nodes {
                    // best options for this child node over all links
                    let mut options: Vec<Partial> = Vec::new();
                    for &li in &children_links[ai] {
                        let link = &h.links[li];
                        if h.assignments[link.child].node != cn {
                            continue;
                        }
                        for p in &best[link.child] {
                            let mut q = p.clone();
                            q.score += link.log_prob;
                            options.push(q);
                        }
                    }
                    options.sort_by(better);
                    options.truncate(r);
                    if options.is_empty() {
                        return (ai, Vec::new());
                    }
                    let mut next: Vec<Partial> = Vec::with_capacity(acc.len() * options.len());
                    for x in &acc {
                        for y in &options {
                            next.push(merge(x, y, 0.0));
                        }
                    }
                    next.sort_by(better);
                    next.truncate(r);
                    acc = next;
                }
                (ai, acc)
            })
            .collect();
        for (ai, list) in solved {
            best[ai] = list;
        }
    }

    let mut infeasible = 0;
    let mut out = Vec::new();
    for &ai in h.node_assignments(&tree.root) {
        if best[ai].is_empty() {
            infeasible += 1;
            continue;
        }
        let groundings = best[ai]
            .iter()
            .map(|p| {
                let mapping = tree
                    .order
                    .iter()
                    .zip(&p.obs)
                    .map(|(n, o)| (n.clone(), o.expect("complete subtree")))
                    .collect();
                (p.score, mapping)
            })
            .collect();
        out.push(RootSolution {
            root_assignment: ai,
            groundings,
        });
    }
    (out, infeasible)
}
