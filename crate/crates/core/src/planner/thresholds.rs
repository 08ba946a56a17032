use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PlanError;
use crate::concepts::{attr_key, class_key, rel_key, ScoreHistogram, ScoreStats};
use crate::querymodel::{validate, ActivityGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeThreshold {
    pub a: String,
    pub b: String,
    pub tau: f64,
}

/// What the planner expects of one node or edge at its threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPlan {
    pub component: String,
    pub target_recall: f64,
    pub tau: f64,
    /// Lower bound on the fraction of positive samples passing `tau`.
    pub positive_pass: f64,
    /// Estimated fraction of background samples passing `tau`.
    pub background_pass: f64,
}

/// Probability thresholds for every query node and edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAssignment {
    pub node_tau: BTreeMap<String, f64>,
    /// Aligned with the graph's edge list.
    pub edge_tau: Vec<EdgeThreshold>,
    pub eta: f64,
    #[serde(default)]
    pub components: Vec<ComponentPlan>,
}

impl ThresholdAssignment {
    /// Every threshold zero: nothing is pruned.
    pub fn zero(graph: &ActivityGraph, eta: f64) -> Self {
        Self {
            node_tau: graph.nodes.iter().map(|n| (n.id.clone(), 0.0)).collect(),
            edge_tau: graph
                .edges
                .iter()
                .map(|e| EdgeThreshold {
                    a: e.a.clone(),
                    b: e.b.clone(),
                    tau: 0.0,
                })
                .collect(),
            eta,
            components: Vec::new(),
        }
    }

    pub fn node(&self, id: &str) -> f64 {
        self.node_tau.get(id).copied().unwrap_or(0.0)
    }

    pub fn edge(&self, index: usize) -> f64 {
        self.edge_tau.get(index).map_or(0.0, |e| e.tau)
    }

    /// Multiplies every threshold by `factor`.
    pub fn relax(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for t in out.node_tau.values_mut() {
            *t *= factor;
        }
        for e in &mut out.edge_tau {
            e.tau *= factor;
        }
        for c in &mut out.components {
            c.tau *= factor;
        }
        out
    }
}

/// Probability mass per bin of `-ln p`, for a product of independent factors.
struct Distribution {
    mass: Vec<f64>,
    samples: u64,
}

impl Distribution {
    fn of(h: &ScoreHistogram) -> Self {
        let total = h.total();
        let mass = if total == 0 {
            Vec::new()
        } else {
            h.counts.iter().map(|&c| c as f64 / total as f64).collect()
        };
        Self { mass, samples: total }
    }

    /// Sum of two binned variables. Values in bins `i` and `j` sum to less
    /// than `(i + j + 2) h`, so the mass goes to bin `i + j + 1`.
    fn convolve(&self, other: &Distribution) -> Distribution {
        if self.mass.is_empty() || other.mass.is_empty() {
            return Distribution {
                mass: Vec::new(),
                samples: 0,
            };
        }
        let mut mass = vec![0.0; self.mass.len() + other.mass.len()];
        for (i, a) in self.mass.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.mass.iter().enumerate() {
                mass[i + j + 1] += a * b;
            }
        }
        Distribution {
            mass,
            samples: self.samples.min(other.samples),
        }
    }

    fn cumulative_through(&self, k: usize) -> f64 {
        self.mass.iter().take(k + 1).sum()
    }
}

fn component_distribution(
    stats: &ScoreStats,
    keys: &[String],
    background: bool,
) -> Result<Distribution, PlanError> {
    let mut dist: Option<Distribution> = None;
    for key in keys {
        let cs = stats.get(key).ok_or_else(|| PlanError::MissingStats(key.clone()))?;
        let d = Distribution::of(if background { &cs.background } else { &cs.positive });
        dist = Some(match dist {
            None => d,
            Some(acc) => acc.convolve(&d),
        });
    }
    Ok(dist.expect("every component has at least one concept"))
}

/// Allocates recall `eta^(1/m)` to each of the `m` nodes and edges and picks,
/// per component, the largest histogram-edge threshold whose positive pass
/// rate reaches that target.
pub fn select_thresholds(
    graph: &ActivityGraph,
    stats: &ScoreStats,
    eta: f64,
) -> Result<ThresholdAssignment, PlanError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(PlanError::BadEta(eta));
    }
    let violations = validate(graph);
    if !violations.is_empty() {
        return Err(PlanError::InvalidGraph(violations));
    }
    let bin_width = stats
        .concepts
        .values()
        .next()
        .map(|c| c.positive.bin_width)
        .unwrap_or(crate::concepts::DEFAULT_BIN_WIDTH);
    if stats
        .concepts
        .values()
        .any(|c| c.positive.bin_width != bin_width || c.background.bin_width != bin_width)
    {
        return Err(PlanError::MissingStats("histograms with a common bin width".into()));
    }

    let m = graph.nodes.len() + graph.edges.len();
    let target = eta.powf(1.0 / m as f64);

    let choose = |name: String, keys: Vec<String>| -> Result<ComponentPlan, PlanError> {
        let pos = component_distribution(stats, &keys, false)?;
        let bg = component_distribution(stats, &keys, true)?;
        if target >= 1.0 {
            return Ok(ComponentPlan {
                component: name,
                target_recall: target,
                tau: 0.0,
                positive_pass: 1.0,
                background_pass: 1.0,
            });
        }
        if pos.samples == 0 || (pos.samples as f64) * (1.0 - target) < 1.0 {
            return Err(PlanError::Infeasible {
                component: name,
                target,
                samples: pos.samples,
            });
        }
        let mut cum = 0.0;
        let mut k = pos.mass.len() - 1;
        for (i, m) in pos.mass.iter().enumerate() {
            cum += m;
            if cum >= target - 1e-12 {
                k = i;
                break;
            }
        }
        Ok(ComponentPlan {
            component: name,
            target_recall: target,
            tau: (-((k + 1) as f64) * bin_width).exp(),
            positive_pass: pos.cumulative_through(k).min(1.0),
            background_pass: bg.cumulative_through(k).min(1.0),
        })
    };

    let mut components = Vec::with_capacity(m);
    let mut node_tau = BTreeMap::new();
    for node in &graph.nodes {
        let mut keys = vec![class_key(node.class)];
        keys.extend(node.attributes.iter().map(|&a| attr_key(a)));
        let plan = choose(format!("node {}", node.id), keys)?;
        node_tau.insert(node.id.clone(), plan.tau);
        components.push(plan);
    }
    let mut edge_tau = Vec::with_capacity(graph.edges.len());
    for edge in &graph.edges {
        let keys = edge.relationships.iter().map(|&r| rel_key(r)).collect();
        let plan = choose(format!("edge {}-{}", edge.a, edge.b), keys)?;
        edge_tau.push(EdgeThreshold {
            a: edge.a.clone(),
            b: edge.b.clone(),
            tau: plan.tau,
        });
        components.push(plan);
    }
    Ok(ThresholdAssignment {
        node_tau,
        edge_tau,
        eta,
        components,
    })
}
