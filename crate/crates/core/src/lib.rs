//! # actgraph
//!
//! Retrieval of analyst-described activities from archives of tracked-object
//! observations.
//!
//! A query is an [`ActivityGraph`](querymodel::ActivityGraph): typed nodes
//! (person, object, vehicle) carrying attributes, joined by edges that carry
//! spatio-temporal relationships (`near`, `not_near`, `later`,
//! `same_entity`). A *grounding* maps every query node to one archived
//! observation, and is scored by a product of calibrated node and edge
//! probabilities, accumulated in the log domain.
//!
//! The search pipeline is:
//!
//! 1. [`planner::hpst`] picks the most discriminative spanning tree of the
//!    query using empirical relationship frequencies from the archive.
//! 2. [`planner::select_thresholds`] sets per-node and per-edge probability
//!    thresholds that meet a target recall.
//! 3. [`matcher::build_matching_graph`] expands candidate assignments from the
//!    tree root to the leaves, pruning anything below threshold.
//! 4. [`matcher::optimize_groundings`] runs leaf-to-root max-product dynamic
//!    programming to get the best tree grounding for each root assignment.
//! 5. [`matcher::rescore_full_graph`] checks the edges that were dropped from
//!    the tree and scores survivors against the full query.
//!
//! [`matcher::retrieve`] ties the steps together and relaxes thresholds when
//! nothing survives. [`synthlab`] generates synthetic archives with planted
//! activities, a brute-force oracle and the evaluation metrics used to check
//! all of the above.
//!
//! See the crate's `examples/` directory for one runnable program per major
//! capability.

pub mod archive;
pub mod concepts;
pub mod matcher;
pub mod planner;
pub mod querymodel;
pub mod synthlab;

pub use archive::{ArchiveStore, BBox, Observation, RelFreqTable, Tracklet, Volume};
pub use concepts::{CalibrationModel, PlattParams, Scorer};
pub use matcher::{retrieve, Grounding, RetrievalConfig, RetrievalResult};
pub use planner::{hpst, select_thresholds, SpanningTree, ThresholdAssignment};
pub use querymodel::{ActivityGraph, Attribute, NodeClass, QueryEdge, QueryNode, Relationship};
