use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{generate_archive, rng_for, Labels, SynthConfig, SynthError};
use crate::archive::ArchiveStore;
use crate::concepts::{CalibrationModel, Scorer};
use crate::matcher::{ranking_order, Grounding, MatchError};
use crate::planner::PlanError;
use crate::querymodel::{validate, ActivityGraph, Attribute, NodeClass, QueryEdge, QueryNode, Relationship};

/// Largest number of candidate groundings the oracle will enumerate.
pub const ORACLE_LIMIT: f64 = 1e7;

/// Edge tables are precomputed up to this many observations.
const TABLE_MAX_OBS: usize = 1000;

/// Exhaustive MAP grounding of the full query, without thresholds.
///
/// Enumerates all `|observations|^|nodes|` mappings and keeps the highest
/// full log score, breaking ties like the matcher's ranking. Refuses
/// instances with more than [`ORACLE_LIMIT`] mappings.
pub fn brute_force_ground(
    graph: &ActivityGraph,
    store: &ArchiveStore,
    models: &CalibrationModel,
) -> Result<Grounding, SynthError> {
    let violations = validate(graph);
    if !violations.is_empty() {
        return Err(MatchError::Plan(PlanError::InvalidGraph(violations)).into());
    }
    let n = store.len();
    let m = graph.nodes.len();
    let combinations = (n as f64).powi(m as i32);
    if combinations > ORACLE_LIMIT {
        return Err(SynthError::TooLarge { combinations });
    }
    if n == 0 {
        return Err(SynthError::NoGrounding);
    }
    let scorer = Scorer::new(store, models);
    let obs = store.observations();

    let mut node_lp = vec![vec![0.0; n]; m];
    for (k, node) in graph.nodes.iter().enumerate() {
        for (i, o) in obs.iter().enumerate() {
            node_lp[k][i] = scorer.node_log_probability(node, o)?;
        }
    }
    // edges checked once both endpoints are assigned: (a pos, b pos, edge)
    let mut edges_at: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); m];
    for (e, edge) in graph.edges.iter().enumerate() {
        let a = graph.node_index(&edge.a).expect("validated");
        let b = graph.node_index(&edge.b).expect("validated");
        edges_at[a.max(b)].push((a, b, e));
    }
    let tables: Option<Vec<Vec<f64>>> = if n <= TABLE_MAX_OBS {
        let mut t = Vec::with_capacity(graph.edges.len());
        for edge in &graph.edges {
            let mut row = Vec::with_capacity(n * n);
            for a in obs {
                for b in obs {
                    row.push(scorer.edge_log_probability(&edge.relationships, a, b)?);
                }
            }
            t.push(row);
        }
        Some(t)
    } else {
        None
    };
    let edge_lp = |e: usize, i: usize, j: usize| -> Result<f64, SynthError> {
        match &tables {
            Some(t) => Ok(t[e][i * n + j]),
            None => Ok(scorer.edge_log_probability(&graph.edges[e].relationships, &obs[i], &obs[j])?),
        }
    };

    let mut best_score = f64::NEG_INFINITY;
    let mut best: Vec<Vec<usize>> = Vec::new();
    let mut assign = vec![0usize; m];
    let mut partial = vec![0.0; m + 1];
    let mut depth = 0;
    let mut next = vec![0usize; m];
    // iterative depth-first odometer over assignments
    loop {
        if next[depth] == n {
            if depth == 0 {
                break;
            }
            next[depth] = 0;
            depth -= 1;
            continue;
        }
        let i = next[depth];
        next[depth] += 1;
        assign[depth] = i;
        let mut s = partial[depth] + node_lp[depth][i];
        for &(a, b, e) in &edges_at[depth] {
            s += edge_lp(e, assign[a], assign[b])?;
        }
        partial[depth + 1] = s;
        if depth + 1 < m {
            depth += 1;
            continue;
        }
        if s > best_score {
            best_score = s;
            best.clear();
            best.push(assign.clone());
        } else if s == best_score {
            best.push(assign.clone());
        }
    }

    let mut out: Option<Grounding> = None;
    for a in best {
        let mapping: BTreeMap<String, u64> = graph
            .nodes
            .iter()
            .zip(&a)
            .map(|(node, &i)| (node.id.clone(), obs[i].obs_id))
            .collect();
        let g = Grounding::new(store, mapping, best_score)?;
        if out.as_ref().is_none_or(|o| ranking_order(&g, o).is_lt()) {
            out = Some(g);
        }
    }
    Ok(out.expect("at least one mapping was scored"))
}

/// A random small archive and query for oracle comparisons.
#[derive(Debug, Clone)]
pub struct SmallInstance {
    pub graph: ActivityGraph,
    pub store: ArchiveStore,
    pub labels: Labels,
}

/// Seeded small instance: a crowded 240 px scene over 40 s, subsampled to
/// at most `max_obs` observations, and a random connected query of at most
/// `max_nodes` nodes.
pub fn small_instance(seed: u64, max_obs: usize, max_nodes: usize) -> Result<SmallInstance, SynthError> {
    let cfg = SynthConfig {
        scene_width: 240.0,
        scene_height: 240.0,
        duration: 40.0,
        n_clutter: (max_obs / 6).max(2),
        clutter_seconds: (2.0, 12.0),
        seed,
        ..SynthConfig::default()
    };
    let (store, truth) = generate_archive(&cfg)?;
    let mut rng = rng_for(seed, 7);
    let store = if store.len() > max_obs {
        let mut keep: Vec<_> = store.observations().to_vec();
        keep.shuffle(&mut rng);
        keep.truncate(max_obs);
        ArchiveStore::from_observations(keep)?
    } else {
        store
    };
    Ok(SmallInstance {
        graph: random_query(&mut rng, max_nodes),
        store,
        labels: truth.labels,
    })
}

/// Random connected query: a random tree plus extra edges with
/// probability 0.3, each carrying one or two relationships.
pub fn random_query(rng: &mut ChaCha8Rng, max_nodes: usize) -> ActivityGraph {
    let m = rng.random_range(1..=max_nodes.max(1));
    let nodes: Vec<QueryNode> = (0..m)
        .map(|k| {
            let class = *NodeClass::ALL.choose(rng).unwrap();
            let node = QueryNode::new(format!("n{k}"), class);
            if rng.random_bool(0.3) {
                node.with(*Attribute::ALL.choose(rng).unwrap())
            } else {
                node
            }
        })
        .collect();
    let mut pairs = Vec::new();
    for k in 1..m {
        pairs.push((rng.random_range(0..k), k));
    }
    for i in 0..m {
        for j in i + 1..m {
            if !pairs.contains(&(i, j)) && rng.random_bool(0.3) {
                pairs.push((i, j));
            }
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(i, j)| {
            let (a, b) = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
            let count = rng.random_range(1..=2);
            let rels: Vec<Relationship> = Relationship::ALL.choose_multiple(rng, count).copied().collect();
            QueryEdge::new(nodes[a].id.clone(), nodes[b].id.clone(), rels)
        })
        .collect();
    ActivityGraph::new(nodes, edges)
}
