use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::features::{pair_features, PAIR_FEATURES};
use super::linear::LinearConcept;
use super::platt::PlattParams;
use super::reid::{reid_probability, ReIdModel};
use super::stats::ScoreStats;
use super::{clamp_probability, ConceptError, PROB_EPS};
use crate::archive::{ArchiveStore, Observation};
use crate::querymodel::{Attribute, NodeClass, QueryNode, Relationship};

pub const MODEL_VERSION: u32 = 1;

/// Deterministic temporal-order check for `later`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaterModel {
    pub gap_min: f64,
    pub gap_max: f64,
    /// Probability when the gap falls in `(gap_min, gap_max]`; otherwise eps.
    pub confidence: f64,
}

impl Default for LaterModel {
    fn default() -> Self {
        Self {
            gap_min: 0.0,
            gap_max: 600.0,
            confidence: 1.0 - PROB_EPS,
        }
    }
}

impl LaterModel {
    pub fn satisfied(&self, a: &Observation, b: &Observation) -> bool {
        let gap = b.time - a.time;
        gap > self.gap_min && gap <= self.gap_max
    }

    pub fn probability(&self, a: &Observation, b: &Observation) -> f64 {
        if self.satisfied(a, b) {
            clamp_probability(self.confidence)
        } else {
            PROB_EPS
        }
    }
}

/// Every trained model needed to score a query, serialized as one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub version: u32,
    pub class_models: BTreeMap<NodeClass, LinearConcept>,
    pub attr_models: BTreeMap<Attribute, LinearConcept>,
    /// Learned relationships (`near`, `not_near`); `later` and `same_entity`
    /// are built in.
    pub rel_models: BTreeMap<Relationship, LinearConcept>,
    #[serde(default)]
    pub later: LaterModel,
    pub reid: ReIdModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<ScoreStats>,
}

pub const LEARNED_RELATIONSHIPS: [Relationship; 2] = [Relationship::Near, Relationship::NotNear];

impl CalibrationModel {
    /// Hand-set model for demos and tests: identity Platt maps on detector
    /// margins and fixed linear rules for `near` / `not_near`.
    pub fn uncalibrated() -> Self {
        let spec: Vec<String> = PAIR_FEATURES.iter().map(|s| s.to_string()).collect();
        let rel = |name: &str, nd: f64, dt: f64, bias: f64| {
            let mut weights = vec![0.0; PAIR_FEATURES.len()];
            weights[0] = nd;
            weights[6] = dt;
            LinearConcept {
                name: name.into(),
                weights,
                bias,
                platt: PlattParams::identity(),
                feature_spec: spec.clone(),
            }
        };
        Self {
            version: MODEL_VERSION,
            class_models: NodeClass::ALL
                .iter()
                .map(|&c| (c, LinearConcept::from_margin(c.as_str(), PlattParams::identity())))
                .collect(),
            attr_models: Attribute::ALL
                .iter()
                .map(|&a| (a, LinearConcept::from_margin(a.as_str(), PlattParams::identity())))
                .collect(),
            rel_models: [
                (Relationship::Near, rel("near", -3.0, -1.0, 5.0)),
                (Relationship::NotNear, rel("not_near", 2.0, 0.2, -5.0)),
            ]
            .into(),
            later: LaterModel::default(),
            reid: ReIdModel::neutral(),
            stats: None,
        }
    }

    /// Checks vocabulary coverage and parameter sanity.
    pub fn check(&self) -> Result<(), ConceptError> {
        if self.version != MODEL_VERSION {
            return Err(ConceptError::Invalid(format!(
                "model version {} is not supported (expected {MODEL_VERSION})",
                self.version
            )));
        }
        for c in NodeClass::ALL {
            self.class_models
                .get(c)
                .ok_or_else(|| ConceptError::MissingModel(format!("class:{c}")))?
                .check()?;
        }
        for a in Attribute::ALL {
            self.attr_models
                .get(a)
                .ok_or_else(|| ConceptError::MissingModel(format!("attr:{a}")))?
                .check()?;
        }
        for r in LEARNED_RELATIONSHIPS {
            let m = self
                .rel_models
                .get(&r)
                .ok_or_else(|| ConceptError::MissingModel(format!("rel:{r}")))?;
            m.check()?;
            if m.weights.len() != PAIR_FEATURES.len() {
                return Err(ConceptError::Invalid(format!(
                    "rel:{r} has {} weights, pair features have {}",
                    m.weights.len(),
                    PAIR_FEATURES.len()
                )));
            }
        }
        let l = &self.later;
        if !(l.gap_min.is_finite() && l.gap_max.is_finite() && l.gap_min < l.gap_max) {
            return Err(ConceptError::Invalid(format!(
                "later gap window ({}, {}] is empty",
                l.gap_min, l.gap_max
            )));
        }
        if !(l.confidence > 0.0 && l.confidence < 1.0) {
            return Err(ConceptError::Invalid(format!("later confidence {}", l.confidence)));
        }
        self.reid.check()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("models always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ConceptError> {
        let model: Self = serde_json::from_str(text)?;
        model.check()?;
        Ok(model)
    }
}

/// Probability of a node's concepts for one observation, without an archive.
pub fn node_probability(
    node: &QueryNode,
    obs: &Observation,
    models: &CalibrationModel,
) -> Result<f64, ConceptError> {
    Ok(node_factors(node, obs, models)?.iter().product())
}

fn concept_probability(
    concept: &LinearConcept,
    kind: &str,
    margins: &BTreeMap<String, f64>,
    lookup: &str,
    obs: &Observation,
) -> Result<f64, ConceptError> {
    let m = margins.get(lookup).ok_or_else(|| ConceptError::MissingMargin {
        concept: format!("{kind}:{lookup}"),
        obs_id: obs.obs_id,
    })?;
    Ok(concept.probability(&[*m]))
}

fn node_factors(
    node: &QueryNode,
    obs: &Observation,
    models: &CalibrationModel,
) -> Result<Vec<f64>, ConceptError> {
    let mut out = Vec::with_capacity(1 + node.attributes.len());
    let cm = models
        .class_models
        .get(&node.class)
        .ok_or_else(|| ConceptError::MissingModel(format!("class:{}", node.class)))?;
    out.push(concept_probability(cm, "class", &obs.class_margins, node.class.as_str(), obs)?);
    for a in &node.attributes {
        let am = models
            .attr_models
            .get(a)
            .ok_or_else(|| ConceptError::MissingModel(format!("attr:{a}")))?;
        out.push(concept_probability(am, "attr", &obs.attr_margins, a.as_str(), obs)?);
    }
    Ok(out)
}

/// Scores nodes and edges against one archive. `same_entity` between
/// different tracks consults the archive's tracklet summaries.
///
/// `appearing` and `disappearing` also use track context: the detector's
/// probability is scaled by the chance that nothing of the same entity was
/// seen before (after) the observation, which is zero inside a track and
/// otherwise one minus the best re-ID match to an earlier (later) track.
#[derive(Clone, Copy)]
pub struct Scorer<'a> {
    store: &'a ArchiveStore,
    models: &'a CalibrationModel,
    reid: bool,
}

impl<'a> Scorer<'a> {
    pub fn new(store: &'a ArchiveStore, models: &'a CalibrationModel) -> Self {
        Self {
            store,
            models,
            reid: true,
        }
    }

    /// With re-ID off, `same_entity` across tracks is always eps.
    pub fn with_reid(mut self, enabled: bool) -> Self {
        self.reid = enabled;
        self
    }

    pub fn models(&self) -> &'a CalibrationModel {
        self.models
    }

    pub fn store(&self) -> &'a ArchiveStore {
        self.store
    }

    /// Class probability followed by one factor per attribute, each clamped.
    pub fn node_factors(&self, node: &QueryNode, obs: &Observation) -> Result<Vec<f64>, ConceptError> {
        let mut out = node_factors(node, obs, self.models)?;
        for (a, p) in node.attributes.iter().zip(&mut out[1..]) {
            let forward = match a {
                Attribute::Appearing => false,
                Attribute::Disappearing => true,
                _ => continue,
            };
            *p = clamp_probability(*p * (1.0 - self.continuation(obs, forward)));
        }
        Ok(out)
    }

    /// Probability that the entity of `obs` is also observed before it, or
    /// after it when `forward`.
    pub fn continuation(&self, obs: &Observation, forward: bool) -> f64 {
        let Some(own) = self.store.summary(obs.track_id) else {
            return 0.0;
        };
        let inside = if forward { obs.time < own.end_time } else { obs.time > own.start_time };
        if inside {
            return 1.0;
        }
        if !self.reid {
            return 0.0;
        }
        self.store
            .summaries()
            .iter()
            .filter(|s| if forward { s.start_time > own.end_time } else { s.end_time < own.start_time })
            .map(|s| reid_probability(own, s, &self.models.reid))
            .fold(0.0, f64::max)
    }

    pub fn node_probability(&self, node: &QueryNode, obs: &Observation) -> Result<f64, ConceptError> {
        Ok(self.node_factors(node, obs)?.iter().product())
    }

    pub fn node_log_probability(&self, node: &QueryNode, obs: &Observation) -> Result<f64, ConceptError> {
        Ok(self.node_factors(node, obs)?.iter().map(|p| p.ln()).sum())
    }

    /// Probability that `rel` holds from `a` to `b`, clamped to `[eps, 1 - eps]`.
    pub fn relationship_probability(
        &self,
        rel: Relationship,
        a: &Observation,
        b: &Observation,
    ) -> Result<f64, ConceptError> {
        match rel {
            Relationship::Later => Ok(self.models.later.probability(a, b)),
            Relationship::SameEntity => Ok(self.same_entity(a, b)),
            // spatial relationships hold between two different tracks
            Relationship::Near | Relationship::NotNear if a.track_id == b.track_id => Ok(PROB_EPS),
            Relationship::Near | Relationship::NotNear => {
                let m = self
                    .models
                    .rel_models
                    .get(&rel)
                    .ok_or_else(|| ConceptError::MissingModel(format!("rel:{rel}")))?;
                Ok(m.probability(&pair_features(a, b)))
            }
        }
    }

    fn same_entity(&self, a: &Observation, b: &Observation) -> f64 {
        if a.track_id == b.track_id {
            return 1.0 - PROB_EPS;
        }
        if !self.reid {
            return PROB_EPS;
        }
        match (self.store.summary(a.track_id), self.store.summary(b.track_id)) {
            (Some(sa), Some(sb)) => reid_probability(sa, sb, &self.models.reid),
            _ => PROB_EPS,
        }
    }

    /// Per-relationship factors of an edge, in relationship order.
    pub fn edge_factors(
        &self,
        rels: &BTreeSet<Relationship>,
        a: &Observation,
        b: &Observation,
    ) -> Result<Vec<f64>, ConceptError> {
        rels.iter().map(|&r| self.relationship_probability(r, a, b)).collect()
    }

    pub fn edge_probability(
        &self,
        rels: &BTreeSet<Relationship>,
        a: &Observation,
        b: &Observation,
    ) -> Result<f64, ConceptError> {
        Ok(self.edge_factors(rels, a, b)?.iter().product())
    }

    pub fn edge_log_probability(
        &self,
        rels: &BTreeSet<Relationship>,
        a: &Observation,
        b: &Observation,
    ) -> Result<f64, ConceptError> {
        Ok(self.edge_factors(rels, a, b)?.iter().map(|p| p.ln()).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::BBox;
    use proptest::prelude::*;

    fn obs(id: u64, track: u64, t: f64, x: f64, margins: &[(&str, f64)]) -> Observation {
        let mut class_margins = BTreeMap::new();
        let mut attr_margins = BTreeMap::new();
        for (k, v) in margins {
            if NodeClass::parse(k).is_ok() {
                class_margins.insert(k.to_string(), *v);
            } else {
                attr_margins.insert(k.to_string(), *v);
            }
        }
        Observation {
            obs_id: id,
            track_id: track,
            time: t,
            bbox: BBox::new(x, 0.0, 20.0, 50.0),
            class_margins,
            attr_margins,
        }
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn node_product_rule() {
        let m = CalibrationModel::uncalibrated();
        let o = obs(1, 1, 0.0, 0.0, &[("person", logit(0.9)), ("speed:moving", logit(0.8))]);
        let node = QueryNode::new("p", NodeClass::Person).with(Attribute::SpeedMoving);
        assert!((node_probability(&node, &o, &m).unwrap() - 0.72).abs() < 1e-12);
        let bare = QueryNode::new("p", NodeClass::Person);
        assert!((node_probability(&bare, &o, &m).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn missing_margin_names_concept() {
        let m = CalibrationModel::uncalibrated();
        let o = obs(4, 1, 0.0, 0.0, &[("person", 1.0)]);
        let node = QueryNode::new("p", NodeClass::Person).with(Attribute::Appearing);
        let err = node_probability(&node, &o, &m).unwrap_err();
        assert!(err.to_string().contains("attr:appearing"), "{err}");
    }

    #[test]
    fn edge_products_and_builtins() {
        let mut m = CalibrationModel::uncalibrated();
        m.later.confidence = 0.98;
        let a = obs(1, 1, 0.0, 0.0, &[]);
        let b = obs(2, 2, 5.0, 10.0, &[]);
        let store = ArchiveStore::from_observations(vec![a.clone(), b.clone()]).unwrap();
        let s = Scorer::new(&store, &m);
        let near = s.relationship_probability(Relationship::Near, &a, &b).unwrap();
        let both: BTreeSet<_> = [Relationship::Near, Relationship::Later].into();
        let p = s.edge_probability(&both, &a, &b).unwrap();
        assert!((p - near * 0.98).abs() < 1e-12);
        // order matters for later only
        assert_eq!(s.relationship_probability(Relationship::Later, &b, &a).unwrap(), PROB_EPS);
        // same time is not later
        let c = obs(3, 3, 0.0, 0.0, &[]);
        assert_eq!(s.relationship_probability(Relationship::Later, &a, &c).unwrap(), PROB_EPS);
    }

    #[test]
    fn same_entity_rules() {
        let m = CalibrationModel::uncalibrated();
        let a = obs(1, 7, 0.0, 0.0, &[]);
        let b = obs(2, 7, 1.0, 5.0, &[]);
        let c = obs(3, 8, 2.0, 9.0, &[]);
        let store = ArchiveStore::from_observations(vec![a.clone(), b.clone(), c.clone()]).unwrap();
        let s = Scorer::new(&store, &m);
        let se = Relationship::SameEntity;
        assert_eq!(s.relationship_probability(se, &a, &b).unwrap(), 1.0 - PROB_EPS);
        // neutral re-id model scores one half
        assert_eq!(s.relationship_probability(se, &a, &c).unwrap(), 0.5);
        let off = s.with_reid(false);
        assert_eq!(off.relationship_probability(se, &a, &c).unwrap(), PROB_EPS);
    }

    #[test]
    fn appearing_uses_track_context() {
        let m = CalibrationModel::uncalibrated();
        let margins = [("person", logit(0.9)), ("appearing", logit(0.8)), ("disappearing", logit(0.6))];
        let a = obs(1, 7, 0.0, 0.0, &margins);
        let b = obs(2, 7, 1.0, 5.0, &margins);
        let c = obs(3, 8, 5.0, 9.0, &margins);
        let store = ArchiveStore::from_observations(vec![a.clone(), b.clone(), c.clone()]).unwrap();
        let s = Scorer::new(&store, &m);
        let appearing = QueryNode::new("p", NodeClass::Person).with(Attribute::Appearing);
        let disappearing = QueryNode::new("p", NodeClass::Person).with(Attribute::Disappearing);
        let factor = |s: &Scorer, n: &QueryNode, o: &Observation| s.node_factors(n, o).unwrap()[1];
        assert!((factor(&s, &appearing, &a) - 0.8).abs() < 1e-12);
        assert_eq!(factor(&s, &appearing, &b), PROB_EPS);
        assert_eq!(factor(&s, &disappearing, &a), PROB_EPS);
        // track 7 may continue as track 8: the neutral re-ID model says one half
        assert!((factor(&s, &appearing, &c) - 0.4).abs() < 1e-12);
        assert!((factor(&s, &disappearing, &b) - 0.3).abs() < 1e-12);
        assert!((factor(&s, &disappearing, &c) - 0.6).abs() < 1e-12);
        let off = s.with_reid(false);
        assert!((factor(&off, &appearing, &c) - 0.8).abs() < 1e-12);
        // class factor is untouched
        assert!((s.node_factors(&appearing, &b).unwrap()[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn one_track_is_never_near_itself() {
        let m = CalibrationModel::uncalibrated();
        let a = obs(1, 7, 0.0, 0.0, &[]);
        let b = obs(2, 7, 1.0, 1.0, &[]);
        let c = obs(3, 8, 1.0, 1.0, &[]);
        let store = ArchiveStore::from_observations(vec![a.clone(), b.clone(), c.clone()]).unwrap();
        let s = Scorer::new(&store, &m);
        for r in [Relationship::Near, Relationship::NotNear] {
            assert_eq!(s.relationship_probability(r, &a, &b).unwrap(), PROB_EPS);
        }
        assert!(s.relationship_probability(Relationship::Near, &a, &c).unwrap() > 0.5);
    }

    #[test]
    fn model_round_trips_and_checks() {
        let m = CalibrationModel::uncalibrated();
        let text = m.to_json();
        assert_eq!(CalibrationModel::from_json(&text).unwrap(), m);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v.as_object_mut().unwrap().remove("version");
        assert!(CalibrationModel::from_json(&v.to_string()).is_err());
        let mut missing = m.clone();
        missing.attr_models.remove(&Attribute::SizeLarge);
        assert!(matches!(missing.check(), Err(ConceptError::MissingModel(k)) if k == "attr:size:large"));
    }

    proptest! {
        #[test]
        fn log_domain_matches_products(cm in -40.0f64..40.0, am in prop::collection::vec(-40.0f64..40.0, 6),
                                       mask in 0u8..64, dx in 0.0f64..400.0, dt in -50.0f64..50.0) {
            let m = CalibrationModel::uncalibrated();
            let attrs: Vec<(&str, f64)> = Attribute::ALL.iter().zip(&am).map(|(a, v)| (a.as_str(), *v)).collect();
            let mut margins = vec![("vehicle", cm)];
            margins.extend(attrs);
            let a = obs(1, 1, 100.0, 0.0, &margins);
            let b = obs(2, 2, 100.0 + dt, dx, &margins);
            let store = ArchiveStore::from_observations(vec![a.clone(), b.clone()]).unwrap();
            let s = Scorer::new(&store, &m);
            let mut node = QueryNode::new("v", NodeClass::Vehicle);
            for (i, attr) in Attribute::ALL.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    node.attributes.insert(*attr);
                }
            }
            let p = s.node_probability(&node, &a).unwrap();
            let lp = s.node_log_probability(&node, &a).unwrap();
            prop_assert!((p - lp.exp()).abs() < 1e-12);
            prop_assert!(p > 0.0 && p < 1.0);
            let rels: BTreeSet<Relationship> = Relationship::ALL.iter().copied().collect();
            let e = s.edge_probability(&rels, &a, &b).unwrap();
            let le = s.edge_log_probability(&rels, &a, &b).unwrap();
            prop_assert!((e - le.exp()).abs() < 1e-12);
            prop_assert!(le.is_finite());
            for &r in Relationship::ALL {
                let q = s.relationship_probability(r, &a, &b).unwrap();
                prop_assert!(q > 0.0 && q < 1.0);
            }
        }
    }
}
