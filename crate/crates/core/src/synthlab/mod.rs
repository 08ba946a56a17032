//! Synthetic archives with planted activities.
//!
//! The generator simulates tracked people, objects and vehicles moving along
//! piecewise-linear paths in a rectangular scene, sampled once per second.
//! Each entity produces one tracklet whose observations carry detector-like
//! margins drawn around +2 for true concepts and -2 for false ones. Planted
//! [`Template`] instances realize a known activity; clutter entities move at
//! random. [`inject_noise`] then simulates missed detections, track breaks
//! and margin noise.
//!
//! Besides the generator the module provides model calibration from the
//! generator's labels ([`calibrate`]), an exhaustive grounding oracle
//! ([`brute_force_ground`]) and retrieval metrics ([`evaluate`]).

mod calibrate;
mod eval;
mod noise;
mod oracle;
mod templates;
mod world;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibrate::{calibrate, truly_near, truly_not_near, CalibrateOptions};
pub use eval::{evaluate, evaluate_ranked, EvalReport, PrPoint, PRECISION_KS};
pub use noise::inject_noise;
pub use oracle::{brute_force_ground, random_query, small_instance, SmallInstance, ORACLE_LIMIT};
pub use world::generate_archive;

use crate::archive::{ArchiveError, Volume};
use crate::concepts::{ConceptError, Scorer};
use crate::matcher::MatchError;
use crate::planner::ThresholdAssignment;
use crate::querymodel::{ActivityGraph, Attribute, NodeClass};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot place {template}: {reason}")]
    Placement { template: Template, reason: String },
    #[error("unknown template '{0}' (expected one of person_mount, object_deposit, group_meeting, car_following)")]
    UnknownTemplate(String),
    #[error("oracle refuses {combinations:.3e} groundings (limit {ORACLE_LIMIT:.0e})")]
    TooLarge { combinations: f64 },
    #[error("no grounding exists: the archive is empty")]
    NoGrounding,
    #[error("observation {0} has no label")]
    Unlabeled(u64),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Concept(#[from] ConceptError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("truth document is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Built-in planted activities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// A person walks up to a parked vehicle and vanishes into it.
    PersonMount,
    /// An object appears next to a person, is carried to a parked vehicle
    /// and disappears there.
    ObjectDeposit,
    /// Two people enter apart, walk to a common spot and stand together.
    GroupMeeting,
    /// Two vehicles enter one after the other and stop next to each other.
    CarFollowing,
}

impl Template {
    pub const ALL: [Template; 4] = [
        Template::PersonMount,
        Template::ObjectDeposit,
        Template::GroupMeeting,
        Template::CarFollowing,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Template::PersonMount => "person_mount",
            Template::ObjectDeposit => "object_deposit",
            Template::GroupMeeting => "group_meeting",
            Template::CarFollowing => "car_following",
        }
    }

    pub fn parse(name: &str) -> Result<Self, SynthError> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == name)
            .ok_or_else(|| SynthError::UnknownTemplate(name.to_string()))
    }

    /// The activity graph that retrieves this template.
    pub fn query(&self) -> ActivityGraph {
        templates::query(*self)
    }
}

impl std::fmt::Display for Template {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Fraction of observations deleted.
    pub miss_rate: f64,
    /// Probability that a tracklet is split in two.
    pub track_break_rate: f64,
    /// Standard deviation of Gaussian noise added to every margin.
    pub margin_noise_sigma: f64,
}

impl NoiseParams {
    pub fn off() -> Self {
        Self::default()
    }

    pub fn is_off(&self) -> bool {
        self.miss_rate == 0.0 && self.track_break_rate == 0.0 && self.margin_noise_sigma == 0.0
    }

    pub fn check(&self) -> Result<(), SynthError> {
        for (name, r) in [("miss_rate", self.miss_rate), ("track_break_rate", self.track_break_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(SynthError::Config(format!("{name} {r} is outside [0, 1]")));
            }
        }
        if !(self.margin_noise_sigma >= 0.0 && self.margin_noise_sigma.is_finite()) {
            return Err(SynthError::Config(format!(
                "margin_noise_sigma {} must be finite and non-negative",
                self.margin_noise_sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub template: Template,
    pub count: usize,
}

/// Generator settings. Lengths are in pixels, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scene_width: f64,
    pub scene_height: f64,
    pub duration: f64,
    pub n_clutter: usize,
    /// Range of clutter tracklet lengths.
    pub clutter_seconds: (f64, f64),
    pub planted: Vec<PlantSpec>,
    pub noise: NoiseParams,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene_width: 1000.0,
            scene_height: 1000.0,
            duration: 1800.0,
            n_clutter: 200,
            clutter_seconds: (20.0, 120.0),
            planted: Vec::new(),
            noise: NoiseParams::off(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn with_planted(mut self, template: Template, count: usize) -> Self {
        self.planted.push(PlantSpec { template, count });
        self
    }

    pub fn check(&self) -> Result<(), SynthError> {
        for (name, v) in [
            ("scene_width", self.scene_width),
            ("scene_height", self.scene_height),
            ("duration", self.duration),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SynthError::Config(format!("{name} {v} must be positive")));
            }
        }
        let (lo, hi) = self.clutter_seconds;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(SynthError::Config(format!("clutter_seconds ({lo}, {hi}) is not a range")));
        }
        if self.n_clutter > 0 && hi > self.duration {
            return Err(SynthError::Config(format!(
                "clutter tracklets of up to {hi} s do not fit in {} s",
                self.duration
            )));
        }
        self.noise.check()
    }
}

/// Generator-side truth for one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsLabel {
    pub entity: u64,
    pub class: NodeClass,
    pub attributes: BTreeSet<Attribute>,
}

/// Per-observation truth, keyed by obs_id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Labels {
    pub observations: BTreeMap<u64, ObsLabel>,
}

impl Labels {
    pub fn get(&self, obs_id: u64) -> Option<&ObsLabel> {
        self.observations.get(&obs_id)
    }
}

/// One planted activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub template: Template,
    /// Every observation that validly realizes each query node.
    pub mapping: BTreeMap<String, Vec<u64>>,
    /// The reference grounding, one observation per node.
    pub key: BTreeMap<String, u64>,
    /// Bounding volume of all mapped observations.
    pub volume: Volume,
}

/// Everything the generator knows about an archive it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub instances: Vec<GroundTruthInstance>,
    pub labels: Labels,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("truth always serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn instances_of(&self, template: Template) -> impl Iterator<Item = &GroundTruthInstance> {
        self.instances.iter().filter(move |i| i.template == template)
    }
}

/// Does `mapping` pass every node and edge threshold of the full query?
pub fn passes_thresholds(
    graph: &ActivityGraph,
    mapping: &BTreeMap<String, u64>,
    scorer: &Scorer<'_>,
    taus: &ThresholdAssignment,
) -> Result<bool, SynthError> {
    let store = scorer.store();
    let obs = |node: &str| {
        let id = mapping[node];
        store.get(id).ok_or(SynthError::Archive(ArchiveError::UnknownObservation(id)))
    };
    for node in &graph.nodes {
        if scorer.node_probability(node, obs(&node.id)?)? < taus.node(&node.id) {
            return Ok(false);
        }
    }
    for (i, e) in graph.edges.iter().enumerate() {
        if scorer.edge_probability(&e.relationships, obs(&e.a)?, obs(&e.b)?)? < taus.edge(i) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Independent random stream `stream` derived from `seed`.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_names_round_trip() {
        for t in Template::ALL {
            assert_eq!(Template::parse(t.as_str()).unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{t}\""));
        }
        assert!(matches!(Template::parse("heist"), Err(SynthError::UnknownTemplate(_))));
    }

    #[test]
    fn noise_rates_checked() {
        let bad = NoiseParams {
            miss_rate: 1.5,
            ..NoiseParams::off()
        };
        assert!(bad.check().is_err());
        let bad = NoiseParams {
            margin_noise_sigma: -0.1,
            ..NoiseParams::off()
        };
        assert!(bad.check().is_err());
        assert!(NoiseParams::off().is_off());
    }

    #[test]
    fn config_checked() {
        let c = SynthConfig {
            duration: 10.0,
            ..SynthConfig::default()
        };
        assert!(matches!(c.check(), Err(SynthError::Config(_))));
        assert!(SynthConfig::default().check().is_ok());
    }
}
