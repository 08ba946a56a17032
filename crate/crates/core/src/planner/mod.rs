//! Query planning: the most discriminative spanning tree of the query and the
//! per-component probability thresholds that meet a recall target.

mod thresholds;
mod tree;

use thiserror::Error;

pub use thresholds::{select_thresholds, ComponentPlan, EdgeThreshold, ThresholdAssignment};
pub use tree::{edge_weight, enumerate_spanning_trees, hpst, SpanningTree, MAX_ENUMERATION_NODES};

use crate::querymodel::Violation;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid activity graph: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidGraph(Vec<Violation>),
    #[error("spanning-tree enumeration refused: {0} nodes exceeds the limit of {MAX_ENUMERATION_NODES}")]
    TooLarge(usize),
    #[error("recall target {0} must be in (0, 1]")]
    BadEta(f64),
    #[error("no score statistics for {0}")]
    MissingStats(String),
    #[error(
        "recall target unreachable for {component}: per-component recall {target:.6} \
         needs more than {samples} positive samples to certify"
    )]
    Infeasible {
        component: String,
        target: f64,
        samples: u64,
    },
}
