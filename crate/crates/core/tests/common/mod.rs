#![allow(dead_code)]

use std::sync::OnceLock;

use actgraph::archive::{estimate_relationship_frequencies, FreqOptions};
use actgraph::synthlab::{calibrate, generate_archive, CalibrateOptions, SynthConfig};
use actgraph::{ActivityGraph, ArchiveStore, CalibrationModel, RelFreqTable, Scorer};

/// Models calibrated once per test binary on a 200-entity archive.
pub fn models() -> &'static CalibrationModel {
    static MODELS: OnceLock<CalibrationModel> = OnceLock::new();
    MODELS.get_or_init(|| {
        let cfg = SynthConfig {
            n_clutter: 200,
            seed: 1000,
            ..SynthConfig::default()
        };
        let (store, truth) = generate_archive(&cfg).unwrap();
        calibrate(&store, &truth.labels, &CalibrateOptions::default()).unwrap()
    })
}

pub fn freqs(store: &ArchiveStore, models: &CalibrationModel) -> RelFreqTable {
    estimate_relationship_frequencies(store, models, &FreqOptions::default()).unwrap()
}

/// Every node and edge factor of a query over a small archive, as
/// `(probability, log probability)`.
pub struct Tables {
    pub n: usize,
    /// `[node][obs]`
    pub node: Vec<Vec<(f64, f64)>>,
    /// `[edge][a_obs * n + b_obs]`
    pub edge: Vec<Vec<(f64, f64)>>,
    /// `(a node index, b node index)` per edge
    pub ends: Vec<(usize, usize)>,
}

impl Tables {
    pub fn new(graph: &ActivityGraph, store: &ArchiveStore, scorer: &Scorer<'_>) -> Self {
        let obs = store.observations();
        let n = obs.len();
        let node = graph
            .nodes
            .iter()
            .map(|q| {
                obs.iter()
                    .map(|o| {
                        let f = scorer.node_factors(q, o).unwrap();
                        (f.iter().product(), f.iter().map(|x| x.ln()).sum())
                    })
                    .collect()
            })
            .collect();
        let edge = graph
            .edges
            .iter()
            .map(|e| {
                let mut row = Vec::with_capacity(n * n);
                for a in obs {
                    for b in obs {
                        let f = scorer.edge_factors(&e.relationships, a, b).unwrap();
                        row.push((f.iter().product(), f.iter().map(|x| x.ln()).sum()));
                    }
                }
                row
            })
            .collect();
        let ends = graph
            .edges
            .iter()
            .map(|e| (graph.node_index(&e.a).unwrap(), graph.node_index(&e.b).unwrap()))
            .collect();
        Self { n, node, edge, ends }
    }

    pub fn edge_at(&self, e: usize, assign: &[usize]) -> (f64, f64) {
        let (a, b) = self.ends[e];
        self.edge[e][assign[a] * self.n + assign[b]]
    }

    pub fn full_score(&self, assign: &[usize]) -> f64 {
        let nodes: f64 = assign.iter().enumerate().map(|(k, &i)| self.node[k][i].1).sum();
        nodes + (0..self.edge.len()).map(|e| self.edge_at(e, assign).1).sum::<f64>()
    }
}

/// Calls `visit` with every assignment of `m` nodes to `n` observations.
pub fn for_each_mapping(n: usize, m: usize, mut visit: impl FnMut(&[usize])) {
    if n == 0 {
        return;
    }
    let mut assign = vec![0usize; m];
    loop {
        visit(&assign);
        let mut k = 0;
        loop {
            if k == m {
                return;
            }
            assign[k] += 1;
            if assign[k] < n {
                break;
            }
            assign[k] = 0;
            k += 1;
        }
    }
}
