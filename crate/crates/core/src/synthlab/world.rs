use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::templates::{plant, Planted};
use super::{inject_noise, rng_for, GroundTruth, GroundTruthInstance, Labels, ObsLabel, SynthConfig, SynthError};
use crate::archive::{spatio_temporal_volume, ArchiveStore, BBox, Observation};
use crate::querymodel::{Attribute, NodeClass};

/// Mean margin of a true concept; false concepts sit at the negative.
pub(crate) const MARGIN_MEAN: f64 = 2.0;
/// Speed (px/s) above which an observation counts as moving.
pub(crate) const MOVING_SPEED: f64 = 2.0;
/// Size classes: area above `LARGE` or below `1 / LARGE` times the class median.
const LARGE: f64 = 1.2;

const STREAM_PLANT: u64 = 1;
const STREAM_CLUTTER: u64 = 2;
const STREAM_MARGINS: u64 = 3;
const STREAM_NOISE: u64 = 4;

pub(crate) type Point = (f64, f64);

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Piecewise-linear trajectory with knots at whole seconds.
#[derive(Debug, Clone)]
pub(crate) struct Path {
    knots: Vec<(f64, Point)>,
}

impl Path {
    pub(crate) fn start(t: f64, p: Point) -> Self {
        Self {
            knots: vec![(t.round(), p)],
        }
    }

    pub(crate) fn t_start(&self) -> f64 {
        self.knots[0].0
    }

    pub(crate) fn t_end(&self) -> f64 {
        self.knots.last().unwrap().0
    }

    pub(crate) fn end(&self) -> Point {
        self.knots.last().unwrap().1
    }

    pub(crate) fn hold(mut self, secs: f64) -> Self {
        let (t, p) = *self.knots.last().unwrap();
        self.knots.push((t + secs.round().max(1.0), p));
        self
    }

    /// Straight move at roughly `speed`, rounded up to whole seconds.
    pub(crate) fn go(mut self, to: Point, speed: f64) -> Self {
        let (t, p) = *self.knots.last().unwrap();
        let secs = (dist(p, to) / speed).ceil().max(1.0);
        self.knots.push((t + secs, to));
        self
    }

    pub(crate) fn at(&self, t: f64) -> Point {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((t0, p0), (t1, p1)) = (w[0], w[1]);
            if t <= t1 {
                let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                return (p0.0 + f * (p1.0 - p0.0), p0.1 + f * (p1.1 - p0.1));
            }
        }
        k.last().unwrap().1
    }

    /// The part of the path between `t0` and `t1`, displaced by `offset`.
    pub(crate) fn slice(&self, t0: f64, t1: f64, offset: Point) -> Path {
        let shift = |p: Point| (p.0 + offset.0, p.1 + offset.1);
        let mut knots = vec![(t0, shift(self.at(t0)))];
        knots.extend(self.knots.iter().filter(|(t, _)| *t > t0 && *t < t1).map(|&(t, p)| (t, shift(p))));
        knots.push((t1, shift(self.at(t1))));
        Path { knots }
    }
}

/// A simulated physical entity: one tracklet before noise.
#[derive(Debug, Clone)]
pub(crate) struct Entity {
    pub class: NodeClass,
    pub size: (f64, f64),
    pub path: Path,
}

impl Entity {
    pub(crate) fn new(rng: &mut ChaCha8Rng, class: NodeClass, path: Path) -> Self {
        Self {
            class,
            size: draw_size(rng, class),
            path,
        }
    }
}

pub(crate) fn median_size(class: NodeClass) -> (f64, f64) {
    match class {
        NodeClass::Person => (20.0, 50.0),
        NodeClass::Object => (24.0, 24.0),
        NodeClass::Vehicle => (80.0, 45.0),
    }
}

pub(crate) fn median_diagonal(class: NodeClass) -> f64 {
    let (w, h) = median_size(class);
    w.hypot(h)
}

fn draw_size(rng: &mut ChaCha8Rng, class: NodeClass) -> (f64, f64) {
    let (w, h) = median_size(class);
    let scale = Normal::<f64>::new(0.0, 0.15).unwrap().sample(rng).exp();
    let stretch = Normal::<f64>::new(0.0, 0.05).unwrap().sample(rng).exp();
    (round1(w * scale * stretch), round1(h * scale))
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub(crate) fn random_point(rng: &mut ChaCha8Rng, cfg: &SynthConfig, margin: f64) -> Point {
    let mx = margin.min(cfg.scene_width / 2.0);
    let my = margin.min(cfg.scene_height / 2.0);
    (
        uniform(rng, mx, cfg.scene_width - mx),
        uniform(rng, my, cfg.scene_height - my),
    )
}

fn clutter_entity(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Entity {
    let class = match rng.random_range(0..20) {
        0..=8 => NodeClass::Person,
        9..=13 => NodeClass::Object,
        _ => NodeClass::Vehicle,
    };
    let (lo, hi) = cfg.clutter_seconds;
    let len = uniform(rng, lo, hi + 1.0).floor().min(cfg.duration);
    let t0 = uniform(rng, 0.0, cfg.duration - len + 1.0).floor();
    let (p_still, vmin, vmax) = match class {
        NodeClass::Person => (0.3, 5.0, 12.0),
        NodeClass::Object => (0.7, 5.0, 12.0),
        NodeClass::Vehicle => (0.4, 15.0, 40.0),
    };
    let segments = rng.random_range(1..=3);
    let mut path = Path::start(t0, random_point(rng, cfg, 20.0));
    let mut left = len;
    for s in 0..segments {
        let secs = if s + 1 == segments {
            left
        } else {
            uniform(rng, 0.0, left).floor()
        };
        left -= secs;
        if secs < 1.0 {
            continue;
        }
        if rng.random_bool(p_still) {
            path = path.hold(secs);
            continue;
        }
        let speed = uniform(rng, vmin, vmax);
        let from = path.end();
        let target = random_point(rng, cfg, 20.0);
        let d = dist(from, target);
        let reach = (speed * secs).min(d);
        let to = if d > 0.0 {
            (from.0 + (target.0 - from.0) * reach / d, from.1 + (target.1 - from.1) * reach / d)
        } else {
            from
        };
        let t_before = path.t_end();
        path = path.go(to, speed);
        let spent = path.t_end() - t_before;
        if spent < secs {
            path = path.hold(secs - spent);
        }
    }
    Entity::new(rng, class, path)
}

/// One sampled state of an entity.
struct Sample {
    t: f64,
    center: Point,
    speed: f64,
    first: bool,
    last: bool,
}

fn samples(e: &Entity) -> Vec<Sample> {
    let (t0, t1) = (e.path.t_start(), e.path.t_end());
    let n = (t1 - t0).round() as usize + 1;
    (0..n)
        .map(|i| {
            let t = t0 + i as f64;
            let c = e.path.at(t);
            let speed = if n == 1 {
                0.0
            } else if i + 1 < n {
                dist(c, e.path.at(t + 1.0))
            } else {
                dist(e.path.at(t - 1.0), c)
            };
            Sample {
                t,
                center: c,
                speed,
                first: i == 0,
                last: i + 1 == n,
            }
        })
        .collect()
}

fn truth_attributes(e: &Entity, s: &Sample) -> BTreeSet<Attribute> {
    let mut out = BTreeSet::new();
    if s.first {
        out.insert(Attribute::Appearing);
    }
    if s.last {
        out.insert(Attribute::Disappearing);
    }
    out.insert(if s.speed > MOVING_SPEED {
        Attribute::SpeedMoving
    } else {
        Attribute::SpeedStationary
    });
    let (mw, mh) = median_size(e.class);
    let ratio = e.size.0 * e.size.1 / (mw * mh);
    if ratio > LARGE {
        out.insert(Attribute::SizeLarge);
    } else if ratio < 1.0 / LARGE {
        out.insert(Attribute::SizeSmall);
    }
    out
}

/// Samples every entity once per second and draws margins. Entity `i` gets
/// track id `i + 1`; observation ids follow `(time, track)` order from 1.
pub(crate) fn realize(
    entities: &[Entity],
    rng: &mut ChaCha8Rng,
) -> Result<(ArchiveStore, Labels, Vec<Vec<u64>>), SynthError> {
    let mut rows: Vec<(f64, usize, Sample)> = Vec::new();
    for (i, e) in entities.iter().enumerate() {
        rows.extend(samples(e).into_iter().map(|s| (s.t, i, s)));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut observations = Vec::with_capacity(rows.len());
    let mut labels = Labels::default();
    let mut by_entity = vec![Vec::new(); entities.len()];
    for (k, (_, i, s)) in rows.into_iter().enumerate() {
        let e = &entities[i];
        let obs_id = k as u64 + 1;
        let attrs = truth_attributes(e, &s);
        let mut draw = |truth: bool| {
            let mean = if truth { MARGIN_MEAN } else { -MARGIN_MEAN };
            round3(mean + normal.sample(rng))
        };
        let class_margins = NodeClass::ALL
            .iter()
            .map(|c| (c.as_str().to_string(), draw(*c == e.class)))
            .collect();
        let attr_margins = Attribute::ALL
            .iter()
            .map(|a| (a.as_str().to_string(), draw(attrs.contains(a))))
            .collect();
        let (w, h) = e.size;
        observations.push(Observation {
            obs_id,
            track_id: i as u64 + 1,
            time: s.t,
            bbox: BBox::new(round1(s.center.0 - w / 2.0), round1(s.center.1 - h / 2.0), w, h),
            class_margins,
            attr_margins,
        });
        labels.observations.insert(
            obs_id,
            ObsLabel {
                entity: i as u64 + 1,
                class: e.class,
                attributes: attrs,
            },
        );
        by_entity[i].push(obs_id);
    }
    Ok((ArchiveStore::from_observations(observations)?, labels, by_entity))
}

/// Generates an archive with planted activities and clutter, then applies
/// the configured noise.
///
/// The same configuration always yields byte-identical archives and truth.
/// Fails when a planted template cannot be placed in the scene.
pub fn generate_archive(config: &SynthConfig) -> Result<(ArchiveStore, GroundTruth), SynthError> {
    config.check()?;
    let mut entities = Vec::new();
    let mut planted: Vec<Planted> = Vec::new();
    let mut rng = rng_for(config.seed, STREAM_PLANT);
    for spec in &config.planted {
        for _ in 0..spec.count {
            let p = plant(spec.template, &mut rng, config, entities.len())?;
            entities.extend(p.entities.iter().cloned());
            planted.push(p);
        }
    }
    let mut rng = rng_for(config.seed, STREAM_CLUTTER);
    for _ in 0..config.n_clutter {
        entities.push(clutter_entity(&mut rng, config));
    }

    let (store, labels, by_entity) = realize(&entities, &mut rng_for(config.seed, STREAM_MARGINS))?;
    let mut instances = Vec::with_capacity(planted.len());
    for p in &planted {
        let mut mapping = BTreeMap::new();
        let mut key = BTreeMap::new();
        for role in &p.roles {
            let members: Vec<u64> = by_entity[role.entity]
                .iter()
                .copied()
                .filter(|&id| {
                    let t = store.get(id).unwrap().time;
                    t >= role.window.0 && t <= role.window.1
                })
                .collect();
            let key_obs = by_entity[role.entity]
                .iter()
                .copied()
                .find(|&id| store.get(id).unwrap().time == role.key_time)
                .expect("key time lies on the entity's track");
            mapping.insert(role.node.to_string(), members);
            key.insert(role.node.to_string(), key_obs);
        }
        let all: Vec<u64> = mapping.values().flatten().copied().collect();
        instances.push(GroundTruthInstance {
            template: p.template,
            volume: spatio_temporal_volume(&store, &all)?,
            mapping,
            key,
        });
    }

    let store = if config.noise.is_off() {
        store
    } else {
        inject_noise(&store, &config.noise, config.seed ^ (STREAM_NOISE << 56))?
    };
    Ok((
        store,
        GroundTruth {
            config: config.clone(),
            instances,
            labels,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlab::Template;

    #[test]
    fn path_interpolates_and_slices() {
        let p = Path::start(10.0, (0.0, 0.0)).go((100.0, 0.0), 10.0).hold(5.0);
        assert_eq!(p.t_end(), 25.0);
        assert_eq!(p.at(15.0), (50.0, 0.0));
        assert_eq!(p.at(22.0), (100.0, 0.0));
        let s = p.slice(15.0, 22.0, (0.0, 5.0));
        assert_eq!(s.t_start(), 15.0);
        assert_eq!(s.at(15.0), (50.0, 5.0));
        assert_eq!(s.at(20.0), (100.0, 5.0));
    }

    #[test]
    fn clutter_only_archive_is_labeled() {
        let cfg = SynthConfig {
            n_clutter: 30,
            seed: 3,
            ..SynthConfig::default()
        };
        let (store, truth) = generate_archive(&cfg).unwrap();
        assert_eq!(store.tracklets().len(), 30);
        assert!(truth.instances.is_empty());
        assert_eq!(truth.labels.observations.len(), store.len());
        for obs in store.observations() {
            let label = truth.labels.get(obs.obs_id).unwrap();
            assert_eq!(label.entity, obs.track_id);
            assert!(obs.time >= 0.0 && obs.time <= cfg.duration);
            assert_eq!(obs.class_margins.len(), 3);
            assert_eq!(obs.attr_margins.len(), Attribute::ALL.len());
        }
        for t in store.tracklets() {
            let first = truth.labels.get(t.observations[0]).unwrap();
            assert!(first.attributes.contains(&Attribute::Appearing));
            let last = truth.labels.get(*t.observations.last().unwrap()).unwrap();
            assert!(last.attributes.contains(&Attribute::Disappearing));
        }
    }

    #[test]
    fn margins_follow_truth() {
        let cfg = SynthConfig {
            n_clutter: 40,
            seed: 11,
            ..SynthConfig::default()
        };
        let (store, truth) = generate_archive(&cfg).unwrap();
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for o in store.observations() {
            let l = truth.labels.get(o.obs_id).unwrap();
            for (c, m) in &o.class_margins {
                if *c == l.class.as_str() {
                    pos.push(*m);
                } else {
                    neg.push(*m);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&pos) - 2.0).abs() < 0.1, "{}", mean(&pos));
        assert!((mean(&neg) + 2.0).abs() < 0.1, "{}", mean(&neg));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            n_clutter: 20,
            seed: 9,
            ..SynthConfig::default()
        }
        .with_planted(Template::ObjectDeposit, 2);
        let (a, ta) = generate_archive(&cfg).unwrap();
        let (b, tb) = generate_archive(&cfg).unwrap();
        assert_eq!(a.to_jsonl_string(), b.to_jsonl_string());
        assert_eq!(ta.to_json(), tb.to_json());
        let other = SynthConfig { seed: 10, ..cfg };
        let (c, _) = generate_archive(&other).unwrap();
        assert_ne!(a.to_jsonl_string(), c.to_jsonl_string());
    }
}
