use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::PlanError;
use crate::archive::RelFreqTable;
use crate::querymodel::{validate, ActivityGraph, QueryEdge};

/// Largest query accepted by [`enumerate_spanning_trees`].
pub const MAX_ENUMERATION_NODES: usize = 8;

/// `sum over relationships of ln p(r)`; more negative is more discriminative.
pub fn edge_weight(edge: &QueryEdge, freqs: &RelFreqTable) -> f64 {
    edge.relationships.iter().map(|&r| freqs.get(r).ln()).sum()
}

/// Rooted spanning tree of a query graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanningTree {
    pub root: String,
    /// child id -> parent id, root excluded
    pub parent: BTreeMap<String, String>,
    /// Indices into the graph's edge list, ascending.
    pub tree_edges: Vec<usize>,
    pub total_weight: f64,
    /// Breadth-first order from the root; children visited by id.
    pub order: Vec<String>,
    /// child id -> index of the edge joining it to its parent
    pub parent_edge: BTreeMap<String, usize>,
}

impl SpanningTree {
    pub fn children(&self, id: &str) -> Vec<&str> {
        self.parent
            .iter()
            .filter(|(_, p)| p.as_str() == id)
            .map(|(c, _)| c.as_str())
            .collect()
    }

    pub fn is_tree_edge(&self, edge: usize) -> bool {
        self.tree_edges.binary_search(&edge).is_ok()
    }

    /// Roots the given edge set. `edges` must form a spanning tree of `graph`.
    fn build(graph: &ActivityGraph, mut edges: Vec<usize>, weights: &[f64]) -> Self {
        edges.sort_unstable();
        let root = if edges.is_empty() {
            graph.nodes[0].id.clone()
        } else {
            let best = edges
                .iter()
                .copied()
                .min_by(|&x, &y| edge_order(graph, weights, x, y))
                .unwrap();
            graph.edges[best].key().0.to_string()
        };

        let mut adj: BTreeMap<&str, Vec<(&str, usize)>> = BTreeMap::new();
        for &e in &edges {
            let edge = &graph.edges[e];
            adj.entry(&edge.a).or_default().push((&edge.b, e));
            adj.entry(&edge.b).or_default().push((&edge.a, e));
        }
        for v in adj.values_mut() {
            v.sort();
        }
        let mut parent = BTreeMap::new();
        let mut parent_edge = BTreeMap::new();
        let mut order = vec![root.clone()];
        let mut queue = VecDeque::from([root.clone()]);
        while let Some(u) = queue.pop_front() {
            for &(v, e) in adj.get(u.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
                if v == root || parent.contains_key(v) {
                    continue;
                }
                parent.insert(v.to_string(), u.clone());
                parent_edge.insert(v.to_string(), e);
                order.push(v.to_string());
                queue.push_back(v.to_string());
            }
        }
        // summed in value order so trees with equal weight multisets agree bit for bit
        let mut ws: Vec<f64> = edges.iter().map(|&e| weights[e]).collect();
        ws.sort_by(f64::total_cmp);
        let total_weight = ws.iter().sum();
        Self {
            root,
            parent,
            tree_edges: edges,
            total_weight,
            order,
            parent_edge,
        }
    }
}

/// Kruskal order: weight, then lexicographic unordered endpoint ids.
fn edge_order(graph: &ActivityGraph, weights: &[f64], x: usize, y: usize) -> Ordering {
    weights[x]
        .total_cmp(&weights[y])
        .then_with(|| graph.edges[x].key().cmp(&graph.edges[y].key()))
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

fn checked(graph: &ActivityGraph) -> Result<(), PlanError> {
    let violations = validate(graph);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(PlanError::InvalidGraph(violations))
    }
}

fn endpoints(graph: &ActivityGraph, e: usize) -> (usize, usize) {
    let edge = &graph.edges[e];
    (
        graph.node_index(&edge.a).expect("validated"),
        graph.node_index(&edge.b).expect("validated"),
    )
}

/// Highest precision spanning tree: Kruskal's minimum spanning tree under
/// [`edge_weight`], rooted at the smaller-id endpoint of its most negative
/// edge.
pub fn hpst(graph: &ActivityGraph, freqs: &RelFreqTable) -> Result<SpanningTree, PlanError> {
    checked(graph)?;
    let weights: Vec<f64> = graph.edges.iter().map(|e| edge_weight(e, freqs)).collect();
    let mut order: Vec<usize> = (0..graph.edges.len()).collect();
    order.sort_by(|&x, &y| edge_order(graph, &weights, x, y));
    let mut uf = UnionFind::new(graph.nodes.len());
    let mut chosen = Vec::with_capacity(graph.nodes.len().saturating_sub(1));
    for e in order {
        let (a, b) = endpoints(graph, e);
        if uf.union(a, b) {
            chosen.push(e);
        }
    }
    Ok(SpanningTree::build(graph, chosen, &weights))
}

/// Every spanning tree of a small query graph, each rooted like [`hpst`].
pub fn enumerate_spanning_trees(
    graph: &ActivityGraph,
    freqs: &RelFreqTable,
) -> Result<Vec<SpanningTree>, PlanError> {
    if graph.nodes.len() > MAX_ENUMERATION_NODES {
        return Err(PlanError::TooLarge(graph.nodes.len()));
    }
    checked(graph)?;
    let weights: Vec<f64> = graph.edges.iter().map(|e| edge_weight(e, freqs)).collect();
    let need = graph.nodes.len() - 1;
    let mut out = Vec::new();
    let mut pick = Vec::with_capacity(need);
    combine(graph, &weights, need, 0, &mut pick, &mut out);
    Ok(out)
}

fn combine(
    graph: &ActivityGraph,
    weights: &[f64],
    need: usize,
    start: usize,
    pick: &mut Vec<usize>,
    out: &mut Vec<SpanningTree>,
) {
    if pick.len() == need {
        let mut uf = UnionFind::new(graph.nodes.len());
        if pick.iter().all(|&e| {
            let (a, b) = endpoints(graph, e);
            uf.union(a, b)
        }) {
            out.push(SpanningTree::build(graph, pick.clone(), weights));
        }
        return;
    }
    let remaining = need - pick.len();
    for e in start..graph.edges.len() {
        if graph.edges.len() - e < remaining {
            break;
        }
        pick.push(e);
        combine(graph, weights, need, e + 1, pick, out);
        pick.pop();
    }
}
