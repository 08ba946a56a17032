use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::world::dist;
use super::{inject_noise, rng_for, Labels, NoiseParams, ObsLabel, SynthError};
use crate::archive::{ArchiveStore, Observation, TrackletSummary};
use crate::concepts::{
    attr_key, bilinear_score, class_key, fit_platt, pair_features, reid_features, rel_key, tracklets_overlap,
    train_margin_concept, train_relationship, train_reid, CalibrationModel, ConceptError, PlattParams, ReIdModel,
    ScoreStats, Scorer, DEFAULT_BIN_WIDTH,
};
use crate::querymodel::{Attribute, NodeClass, QueryNode, Relationship};

/// Generator definition of `near`: centers within one mean box diagonal,
/// at most two seconds apart.
pub fn truly_near(a: &Observation, b: &Observation) -> bool {
    let f = pair_features(a, b);
    f[0] <= 1.0 && f[6] <= 2.0
}

/// Generator definition of `not_near`: at least three mean diagonals apart,
/// or at least thirty seconds apart. Pairs in between are neither.
pub fn truly_not_near(a: &Observation, b: &Observation) -> bool {
    let f = pair_features(a, b);
    f[0] >= 3.0 || f[6] >= 30.0
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrateOptions {
    /// Labeled pairs drawn per relationship and per sampling scheme.
    pub pair_samples: usize,
    /// Positive (and negative) tracklet pairs for re-identification.
    pub reid_pairs: usize,
    pub seed: u64,
    pub bin_width: f64,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        Self {
            pair_samples: 2000,
            reid_pairs: 3000,
            seed: 0,
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }
}

type Pair = (usize, usize);

struct Sampler<'a> {
    obs: &'a [Observation],
    labels: Vec<&'a ObsLabel>,
    store: &'a ArchiveStore,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn distinct(&self, (i, j): Pair) -> bool {
        self.labels[i].entity != self.labels[j].entity
    }

    fn random_pair(&mut self) -> Pair {
        let n = self.obs.len();
        let i = self.rng.random_range(0..n);
        let mut j = self.rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        (i, j)
    }

    /// Random partner of a random observation within `max_gap` seconds.
    fn nearby_pair(&mut self, max_gap: f64) -> Option<Pair> {
        let i = self.rng.random_range(0..self.obs.len());
        let t = self.obs[i].time;
        let window = self.store.time_index().window(t - max_gap, t + max_gap);
        let j = window[self.rng.random_range(0..window.len())];
        (j != i).then_some((i, j))
    }

    /// Up to `n` pairs from `draw` accepted by `keep`, trying at most `50 n` times.
    fn collect(
        &mut self,
        n: usize,
        mut draw: impl FnMut(&mut Self) -> Option<Pair>,
        keep: impl Fn(&Self, Pair) -> bool,
    ) -> Vec<Pair> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n.saturating_mul(50) {
            if out.len() >= n {
                break;
            }
            if let Some(p) = draw(self) {
                if keep(self, p) {
                    out.push(p);
                }
            }
        }
        out
    }

    /// Every ordered pair of distinct entities within two seconds that is
    /// truly near, shuffled and truncated to `n`.
    fn near_pairs(&mut self, n: usize) -> Vec<Pair> {
        let mut all = Vec::new();
        for (i, o) in self.obs.iter().enumerate() {
            for &j in self.store.time_index().window(o.time - 2.0, o.time + 2.0) {
                if j != i && self.distinct((i, j)) && truly_near(o, &self.obs[j]) {
                    all.push((i, j));
                }
            }
        }
        all.shuffle(&mut self.rng);
        all.truncate(n);
        all
    }

    fn examples(&self, pairs: &[Pair], label: bool) -> Vec<(Observation, Observation, bool)> {
        pairs
            .iter()
            .map(|&(i, j)| (self.obs[i].clone(), self.obs[j].clone(), label))
            .collect()
    }
}

fn margin(map: &BTreeMap<String, f64>, kind: &str, name: &str, obs: &Observation) -> Result<f64, ConceptError> {
    map.get(name).copied().ok_or_else(|| ConceptError::MissingMargin {
        concept: format!("{kind}:{name}"),
        obs_id: obs.obs_id,
    })
}

/// Fits every concept of a model bundle from generator labels and records
/// the score statistics used for threshold selection.
///
/// Class and attribute concepts get a Platt map over their detector margin.
/// `near` and `not_near` are trained on pairs of observations of distinct
/// entities labeled by [`truly_near`] / [`truly_not_near`]. Re-ID is trained
/// on the two pieces of randomly split tracks against same-class tracklets
/// of different entities, half of them starting shortly after the first
/// ends. `same_entity` statistics come from a copy with half of the tracks
/// split, so thresholds allow for track breaks.
pub fn calibrate(store: &ArchiveStore, labels: &Labels, opts: &CalibrateOptions) -> Result<CalibrationModel, SynthError> {
    let obs = store.observations();
    if obs.len() < 2 {
        return Err(SynthError::Config(format!("calibration needs at least 2 observations, got {}", obs.len())));
    }
    let obs_labels = obs
        .iter()
        .map(|o| labels.get(o.obs_id).ok_or(SynthError::Unlabeled(o.obs_id)))
        .collect::<Result<Vec<_>, _>>()?;
    let bw = opts.bin_width;
    let mut models = CalibrationModel::uncalibrated();
    let mut stats = ScoreStats::default();

    for &c in NodeClass::ALL {
        let margins = obs
            .iter()
            .map(|o| margin(&o.class_margins, "class", c.as_str(), o))
            .collect::<Result<Vec<_>, _>>()?;
        let ys: Vec<bool> = obs_labels.iter().map(|l| l.class == c).collect();
        let concept = train_margin_concept(c.as_str(), &margins, &ys)?;
        let probs: Vec<f64> = margins.iter().map(|m| concept.probability(&[*m])).collect();
        let pos = probs.iter().zip(&ys).filter(|(_, y)| **y).map(|(p, _)| *p);
        stats.insert(class_key(c), pos, probs.iter().copied(), bw);
        models.class_models.insert(c, concept);
    }
    for &a in Attribute::ALL {
        let margins = obs
            .iter()
            .map(|o| margin(&o.attr_margins, "attr", a.as_str(), o))
            .collect::<Result<Vec<_>, _>>()?;
        let ys: Vec<bool> = obs_labels.iter().map(|l| l.attributes.contains(&a)).collect();
        let concept = train_margin_concept(a.as_str(), &margins, &ys)?;
        let probs: Vec<f64> = margins.iter().map(|m| concept.probability(&[*m])).collect();
        let pos = probs.iter().zip(&ys).filter(|(_, y)| **y).map(|(p, _)| *p);
        stats.insert(attr_key(a), pos, probs.iter().copied(), bw);
        models.attr_models.insert(a, concept);
    }

    let n = opts.pair_samples.max(30);
    let mut s = Sampler {
        obs,
        labels: obs_labels,
        store,
        rng: rng_for(opts.seed, 1),
    };
    let near = s.near_pairs(n);
    let third = n.div_ceil(3);
    let mut not_near_examples = Vec::new();
    let mut near_neg = s.collect(third, |s| s.nearby_pair(2.0), |s, (i, j)| {
        s.distinct((i, j)) && !truly_near(&s.obs[i], &s.obs[j])
    });
    near_neg.extend(s.collect(third, |s| s.nearby_pair(30.0), |s, (i, j)| {
        s.distinct((i, j)) && pair_features(&s.obs[i], &s.obs[j])[0] <= 1.0 && !truly_near(&s.obs[i], &s.obs[j])
    }));
    let missing = n.saturating_sub(near_neg.len());
    near_neg.extend(s.collect(missing, |s| Some(s.random_pair()), |s, (i, j)| {
        s.distinct((i, j)) && !truly_near(&s.obs[i], &s.obs[j])
    }));
    let mut far = s.collect(n / 2, |s| s.nearby_pair(2.0), |s, (i, j)| {
        s.distinct((i, j)) && truly_not_near(&s.obs[i], &s.obs[j])
    });
    let missing = n.saturating_sub(far.len());
    far.extend(s.collect(missing, |s| Some(s.random_pair()), |s, (i, j)| {
        s.distinct((i, j)) && truly_not_near(&s.obs[i], &s.obs[j])
    }));
    let background = s.collect(n, |s| Some(s.random_pair()), |s, p| s.distinct(p));

    let mut near_examples = s.examples(&near, true);
    near_examples.extend(s.examples(&near_neg, false));
    let near_model = train_relationship("near", &near_examples)?;
    not_near_examples.extend(s.examples(&far, true));
    not_near_examples.extend(s.examples(&near, false));
    let not_near_model = train_relationship("not_near", &not_near_examples)?;

    let probs = |m: &crate::concepts::LinearConcept, pairs: &[Pair]| -> Vec<f64> {
        pairs
            .iter()
            .map(|&(i, j)| m.probability(&pair_features(&obs[i], &obs[j])))
            .collect()
    };
    stats.insert(rel_key(Relationship::Near), probs(&near_model, &near), probs(&near_model, &background), bw);
    stats.insert(
        rel_key(Relationship::NotNear),
        probs(&not_near_model, &far),
        probs(&not_near_model, &background),
        bw,
    );
    models.rel_models.insert(Relationship::Near, near_model);
    models.rel_models.insert(Relationship::NotNear, not_near_model);

    let later = models.later;
    let later_pos = s.collect(n, |s| Some(s.random_pair()), |s, (i, j)| later.satisfied(&s.obs[i], &s.obs[j]));
    stats.insert(
        rel_key(Relationship::Later),
        later_pos.iter().map(|&(i, j)| later.probability(&obs[i], &obs[j])),
        background.iter().map(|&(i, j)| later.probability(&obs[i], &obs[j])),
        bw,
    );

    let split_noise = NoiseParams {
        track_break_rate: 0.5,
        ..NoiseParams::off()
    };
    let split = inject_noise(store, &split_noise, opts.seed ^ 0x5eed)?;
    // every track broken once per copy; enough copies for `reid_pairs` positives
    let broken = NoiseParams {
        track_break_rate: 1.0,
        miss_rate: 0.2,
        ..NoiseParams::off()
    };
    let copies = opts.reid_pairs.div_ceil(store.tracklets().len().max(1)).clamp(1, 16);
    let mut reid_train = Vec::new();
    let mut first_copy = None;
    for c in 0..copies as u64 {
        let copy = inject_noise(store, &broken, opts.seed ^ 0x5eed ^ ((c + 1) << 32))?;
        let per_copy = opts.reid_pairs.div_ceil(copies);
        reid_train.extend(reid_examples(&copy, labels, per_copy, &mut s.rng)?);
        first_copy.get_or_insert(copy);
    }
    models.reid = train_reid(&reid_train)?;
    // the balanced training set fixes W; the probability scale comes from every ordered pair
    models.reid.platt = natural_prior_platt(first_copy.as_ref().expect("at least one copy"), labels, &models.reid)?;
    // appearing / disappearing are scored with track context, which needs re-ID
    let scorer = Scorer::new(store, &models);
    for a in [Attribute::Appearing, Attribute::Disappearing] {
        let node = QueryNode::new("n", NodeClass::Object).with(a);
        let probs = obs
            .iter()
            .map(|o| Ok(scorer.node_factors(&node, o)?[1]))
            .collect::<Result<Vec<f64>, ConceptError>>()?;
        let pos = probs.iter().zip(&s.labels).filter(|(_, l)| l.attributes.contains(&a)).map(|(p, _)| *p);
        stats.insert(attr_key(a), pos, probs.iter().copied(), bw);
    }
    stats.insert(
        rel_key(Relationship::SameEntity),
        same_entity_stats(&split, labels, &models, n, &mut s.rng, true)?,
        same_entity_stats(&split, labels, &models, n, &mut s.rng, false)?,
        bw,
    );

    models.stats = Some(stats);
    models.check()?;
    Ok(models)
}

/// Platt map for re-ID scores fitted on every time-ordered tracklet pair of
/// `split`, so probabilities carry the prior of a random candidate pair.
fn natural_prior_platt(split: &ArchiveStore, labels: &Labels, model: &ReIdModel) -> Result<PlattParams, SynthError> {
    let summaries: Vec<TrackletSummary> = split.summaries().to_vec();
    let mut entity = Vec::with_capacity(summaries.len());
    for t in split.tracklets() {
        let first = t.observations[0];
        entity.push(labels.get(first).ok_or(SynthError::Unlabeled(first))?.entity);
    }
    let (mut margins, mut ys) = (Vec::new(), Vec::new());
    for (i, a) in summaries.iter().enumerate() {
        for (j, b) in summaries.iter().enumerate() {
            if a.end_time < b.start_time {
                let (x1, x2) = reid_features(a, b, &model.center);
                margins.push(bilinear_score(&model.w, &x1, &x2));
                ys.push(entity[i] == entity[j]);
            }
        }
    }
    Ok(fit_platt(&margins, &ys)?)
}

fn reid_examples(
    split: &ArchiveStore,
    labels: &Labels,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(TrackletSummary, TrackletSummary, bool)>, SynthError> {
    let mut by_entity: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut owner = Vec::with_capacity(split.tracklets().len());
    let summaries: Vec<TrackletSummary> = split
        .tracklets()
        .iter()
        .map(|t| *split.summary(t.track_id).expect("every tracklet has a summary"))
        .collect();
    for (k, t) in split.tracklets().iter().enumerate() {
        let first = t.observations[0];
        let label = labels.get(first).ok_or(SynthError::Unlabeled(first))?;
        by_entity.entry(label.entity).or_default().push(k);
        owner.push((label.entity, label.class));
    }
    let mut positives = Vec::new();
    for pieces in by_entity.values() {
        let mut pieces = pieces.clone();
        pieces.sort_by(|&a, &b| summaries[a].start_time.total_cmp(&summaries[b].start_time));
        for w in pieces.windows(2) {
            positives.push((summaries[w[0]], summaries[w[1]], true));
        }
    }
    positives.shuffle(rng);
    positives.truncate(n);
    let m = split.tracklets().len();
    if m < 2 {
        return Err(SynthError::Config("re-ID training needs at least 2 tracklets".into()));
    }
    // tracklet indices by start time, for partners that begin soon after
    let mut by_start: Vec<usize> = (0..m).collect();
    by_start.sort_by(|&a, &b| summaries[a].start_time.total_cmp(&summaries[b].start_time));
    let starts: Vec<f64> = by_start.iter().map(|&k| summaries[k].start_time).collect();
    let mut negatives = Vec::new();
    for attempt in 0..positives.len().max(1) * 50 {
        if negatives.len() >= positives.len() {
            break;
        }
        let a = rng.random_range(0..m);
        let b = if attempt % 2 == 0 {
            // hard negative: the nearest other track starting within thirty
            // seconds of `a` ending
            let end = summaries[a].end_time;
            let lo = starts.partition_point(|&t| t <= end);
            let hi = starts.partition_point(|&t| t <= end + 30.0);
            let gap = |k: usize| dist(summaries[a].end_center, summaries[k].start_center);
            let Some(b) = by_start[lo..hi]
                .iter()
                .copied()
                .filter(|&k| owner[k].0 != owner[a].0 && owner[k].1 == owner[a].1)
                .min_by(|&x, &y| gap(x).total_cmp(&gap(y)))
            else {
                continue;
            };
            b
        } else {
            rng.random_range(0..m)
        };
        if owner[a].0 == owner[b].0 || owner[a].1 != owner[b].1 || tracklets_overlap(&summaries[a], &summaries[b]) {
            continue;
        }
        negatives.push((summaries[a], summaries[b], false));
    }
    positives.extend(negatives);
    Ok(positives)
}

/// `same_entity` probabilities for pairs of observations of one entity
/// (`positive`) or for random pairs.
fn same_entity_stats(
    split: &ArchiveStore,
    labels: &Labels,
    models: &CalibrationModel,
    n: usize,
    rng: &mut ChaCha8Rng,
    positive: bool,
) -> Result<Vec<f64>, SynthError> {
    let scorer = Scorer::new(split, models);
    let obs = split.observations();
    let mut by_entity: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, o) in obs.iter().enumerate() {
        let l = labels.get(o.obs_id).ok_or(SynthError::Unlabeled(o.obs_id))?;
        by_entity.entry(l.entity).or_default().push(i);
    }
    let groups: Vec<&Vec<usize>> = by_entity.values().filter(|g| g.len() >= 2).collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (i, j) = if positive {
            if groups.is_empty() {
                break;
            }
            let g = groups[rng.random_range(0..groups.len())];
            let i = g[rng.random_range(0..g.len())];
            let j = g[rng.random_range(0..g.len())];
            if i == j {
                continue;
            }
            if obs[i].time <= obs[j].time {
                (i, j)
            } else {
                (j, i)
            }
        } else {
            let i = rng.random_range(0..obs.len());
            let j = rng.random_range(0..obs.len());
            if i == j {
                continue;
            }
            (i, j)
        };
        out.push(scorer.relationship_probability(Relationship::SameEntity, &obs[i], &obs[j])?);
    }
    Ok(out)
}
