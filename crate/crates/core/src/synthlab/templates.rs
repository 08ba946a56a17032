use std::f64::consts::{FRAC_PI_4, PI, TAU};

use rand_chacha::ChaCha8Rng;

use super::world::{dist, median_diagonal, random_point, uniform, Entity, Path, Point};
use super::{SynthConfig, SynthError, Template};
use crate::querymodel::{ActivityGraph, Attribute, NodeClass, QueryEdge, QueryNode, Relationship};

const ATTEMPTS: usize = 200;

/// Which observations of which entity realize a query node.
#[derive(Debug, Clone)]
pub(crate) struct Role {
    pub node: &'static str,
    /// Index into the generator's entity list.
    pub entity: usize,
    pub window: (f64, f64),
    pub key_time: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Planted {
    pub template: Template,
    pub entities: Vec<Entity>,
    pub roles: Vec<Role>,
}

pub(crate) fn query(template: Template) -> ActivityGraph {
    use Attribute::*;
    use NodeClass::*;
    use Relationship::*;
    let (nodes, edges) = match template {
        Template::PersonMount => (
            vec![
                QueryNode::new("p1", Person).with(Appearing),
                QueryNode::new("p2", Person).with(Disappearing),
                QueryNode::new("v", Vehicle).with(SpeedStationary),
            ],
            vec![
                QueryEdge::new("p1", "p2", [Later, SameEntity]),
                QueryEdge::new("p2", "v", [Near]),
                QueryEdge::new("p1", "v", [NotNear]),
            ],
        ),
        Template::ObjectDeposit => (
            vec![
                QueryNode::new("p", Person),
                QueryNode::new("o1", Object).with(Appearing),
                QueryNode::new("o2", Object).with(Disappearing),
                QueryNode::new("v", Vehicle).with(SpeedStationary),
            ],
            vec![
                QueryEdge::new("p", "o1", [Near]),
                QueryEdge::new("o1", "o2", [Later, SameEntity]),
                QueryEdge::new("o2", "v", [Near]),
                QueryEdge::new("p", "v", [Later]),
            ],
        ),
        Template::GroupMeeting => (
            vec![
                QueryNode::new("a", Person).with(Appearing),
                QueryNode::new("b", Person).with(Appearing),
                QueryNode::new("a2", Person).with(SpeedStationary),
                QueryNode::new("b2", Person).with(SpeedStationary),
            ],
            vec![
                QueryEdge::new("a", "b", [NotNear]),
                QueryEdge::new("a", "a2", [Later, SameEntity]),
                QueryEdge::new("b", "b2", [Later, SameEntity]),
                QueryEdge::new("a2", "b2", [Near]),
            ],
        ),
        Template::CarFollowing => (
            vec![
                QueryNode::new("a", Vehicle).with(Appearing),
                QueryNode::new("b", Vehicle).with(Appearing),
                QueryNode::new("a2", Vehicle).with(SpeedStationary),
                QueryNode::new("b2", Vehicle).with(SpeedStationary),
            ],
            vec![
                QueryEdge::new("a", "b", [Later]),
                QueryEdge::new("a", "a2", [Later, SameEntity]),
                QueryEdge::new("b", "b2", [Later, SameEntity]),
                QueryEdge::new("a2", "b2", [Near]),
            ],
        ),
    };
    ActivityGraph::new(nodes, edges)
}

fn in_scene(cfg: &SynthConfig, p: Point, margin: f64) -> bool {
    p.0 >= margin && p.1 >= margin && p.0 <= cfg.scene_width - margin && p.1 <= cfg.scene_height - margin
}

fn offset(p: Point, r: f64, angle: f64) -> Point {
    (p.0 + r * angle.cos(), p.1 + r * angle.sin())
}

fn toward(from: Point, to: Point, r: f64) -> Point {
    let d = dist(from, to);
    (from.0 + (to.0 - from.0) * r / d, from.1 + (to.1 - from.1) * r / d)
}

/// Uniform whole-second start time in `[lo, hi]`, or `None` when empty.
fn start_time(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Option<f64> {
    (hi >= lo).then(|| uniform(rng, lo, hi + 1.0).floor().min(hi))
}

fn secs(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    uniform(rng, lo, hi + 1.0).floor()
}

fn role(node: &'static str, entity: usize, window: (f64, f64), key_time: f64) -> Role {
    Role {
        node,
        entity,
        window,
        key_time,
    }
}

/// Realizes one instance of `template`; entity indices start at `base`.
pub(crate) fn plant(
    template: Template,
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    base: usize,
) -> Result<Planted, SynthError> {
    let mut last = "the scene is too small for its layout".to_string();
    for _ in 0..ATTEMPTS {
        let attempt = match template {
            Template::PersonMount => person_mount(rng, cfg, base),
            Template::ObjectDeposit => object_deposit(rng, cfg, base),
            Template::GroupMeeting => group_meeting(rng, cfg, base),
            Template::CarFollowing => car_following(rng, cfg, base),
        };
        match attempt {
            Ok(Some(p)) => return Ok(p),
            Ok(None) => {}
            Err(reason) => last = reason,
        }
    }
    Err(SynthError::Placement { template, reason: last })
}

/// `Ok(None)`: bad draw, retry. `Err`: the timeline cannot fit.
type Attempt = Result<Option<Planted>, String>;

fn too_long(needed: f64, cfg: &SynthConfig) -> String {
    format!("needs about {needed} s but the archive lasts {} s", cfg.duration)
}

fn person_mount(rng: &mut ChaCha8Rng, cfg: &SynthConfig, base: usize) -> Attempt {
    let lv = random_point(rng, cfg, 60.0);
    let entry = offset(lv, uniform(rng, 250.0, 400.0), uniform(rng, 0.0, TAU));
    if !in_scene(cfg, entry, 20.0) {
        return Ok(None);
    }
    let reach = uniform(rng, 0.2, 0.6) * 0.5 * (median_diagonal(NodeClass::Person) + median_diagonal(NodeClass::Vehicle));
    let stop = offset(lv, reach, uniform(rng, 0.0, TAU));
    let speed = uniform(rng, 6.0, 10.0);
    let walk = (dist(entry, stop) / speed).ceil().max(1.0);
    let (lead, tail) = (secs(rng, 20.0, 60.0), secs(rng, 20.0, 60.0));
    let Some(t0) = start_time(rng, lead, cfg.duration - walk - tail) else {
        return Err(too_long(lead + walk + tail, cfg));
    };
    let t1 = t0 + walk;
    let person = Entity::new(rng, NodeClass::Person, Path::start(t0, entry).go(stop, speed));
    let vehicle = Entity::new(rng, NodeClass::Vehicle, Path::start(t0 - lead, lv).hold(lead + walk + tail));
    Ok(Some(Planted {
        template: Template::PersonMount,
        entities: vec![person, vehicle],
        roles: vec![
            role("p1", base, (t0, t0), t0),
            role("p2", base, (t1, t1), t1),
            role("v", base + 1, (t1 - 2.0, t1 + 2.0), t1),
        ],
    }))
}

fn object_deposit(rng: &mut ChaCha8Rng, cfg: &SynthConfig, base: usize) -> Attempt {
    // object carried at this offset from the person's center
    let carry_offset = (18.0, 10.0);
    let lv = random_point(rng, cfg, 60.0);
    let pickup_obj = offset(lv, uniform(rng, 200.0, 350.0), uniform(rng, 0.0, TAU));
    if !in_scene(cfg, pickup_obj, 40.0) {
        return Ok(None);
    }
    let reach = uniform(rng, 0.2, 0.6) * 0.5 * (median_diagonal(NodeClass::Object) + median_diagonal(NodeClass::Vehicle));
    let drop_obj = offset(lv, reach, uniform(rng, 0.0, TAU));
    let pickup = (pickup_obj.0 - carry_offset.0, pickup_obj.1 - carry_offset.1);
    let drop = (drop_obj.0 - carry_offset.0, drop_obj.1 - carry_offset.1);
    let entry = offset(pickup, uniform(rng, 60.0, 150.0), uniform(rng, 0.0, TAU));
    let exit = offset(drop, uniform(rng, 60.0, 150.0), uniform(rng, 0.0, TAU));
    if !in_scene(cfg, entry, 10.0) || !in_scene(cfg, exit, 10.0) {
        return Ok(None);
    }
    let speed = uniform(rng, 6.0, 10.0);
    let approach = (dist(entry, pickup) / speed).ceil().max(1.0);
    let carry = (dist(pickup, drop) / speed).ceil().max(1.0);
    let leave = (dist(drop, exit) / speed).ceil().max(1.0) + 3.0;
    let (lead, tail) = (secs(rng, 20.0, 60.0), secs(rng, 20.0, 60.0));
    let before = approach.max(lead);
    let after = leave.max(tail);
    let Some(t0) = start_time(rng, before, cfg.duration - carry - after) else {
        return Err(too_long(before + carry + after, cfg));
    };
    let t1 = t0 + carry;
    let person_path = Path::start(t0 - approach, entry)
        .go(pickup, speed)
        .go(drop, speed)
        .hold(3.0)
        .go(exit, speed);
    let object_path = person_path.slice(t0, t1, carry_offset);
    let person = Entity::new(rng, NodeClass::Person, person_path);
    let object = Entity::new(rng, NodeClass::Object, object_path);
    let vehicle = Entity::new(rng, NodeClass::Vehicle, Path::start(t0 - lead, lv).hold(lead + carry + tail));
    Ok(Some(Planted {
        template: Template::ObjectDeposit,
        entities: vec![person, object, vehicle],
        roles: vec![
            role("p", base, (t0 - 2.0, t0 + 2.0), t0),
            role("o1", base + 1, (t0, t0), t0),
            role("o2", base + 1, (t1, t1), t1),
            role("v", base + 2, (t1 - 2.0, t1 + 2.0), t1),
        ],
    }))
}

fn group_meeting(rng: &mut ChaCha8Rng, cfg: &SynthConfig, base: usize) -> Attempt {
    let m = random_point(rng, cfg, 150.0);
    let angle_a = uniform(rng, 0.0, TAU);
    let angle_b = angle_a + PI + uniform(rng, -FRAC_PI_4, FRAC_PI_4);
    let a0 = offset(m, uniform(rng, 250.0, 400.0), angle_a);
    let b0 = offset(m, uniform(rng, 250.0, 400.0), angle_b);
    if !in_scene(cfg, a0, 20.0) || !in_scene(cfg, b0, 20.0) {
        return Ok(None);
    }
    let a_meet = (m.0 - 14.0, m.1);
    let b_meet = (m.0 + 14.0, m.1);
    let (sa, sb) = (uniform(rng, 6.0, 10.0), uniform(rng, 6.0, 10.0));
    let travel_a = (dist(a0, a_meet) / sa).ceil().max(1.0);
    let travel_b = (dist(b0, b_meet) / sb).ceil().max(1.0);
    let (wait_a, wait_b) = (secs(rng, 0.0, 5.0), secs(rng, 0.0, 5.0));
    let stay = secs(rng, 20.0, 40.0);
    let exit_a = toward(a_meet, a0, 100.0);
    let exit_b = toward(b_meet, b0, 100.0);
    let leave = (100.0 / sa.min(sb)).ceil();
    let before = (travel_a + wait_a).max(travel_b + wait_b);
    let Some(tm) = start_time(rng, before, cfg.duration - stay - leave) else {
        return Err(too_long(before + stay + leave, cfg));
    };
    let t_end = tm + stay;
    let walker = |rng: &mut ChaCha8Rng, start: Point, meet: Point, exit: Point, speed, travel, wait| {
        let path = Path::start(tm - travel - wait, start)
            .go(meet, speed)
            .hold(wait + stay)
            .go(exit, speed);
        Entity::new(rng, NodeClass::Person, path)
    };
    let a = walker(rng, a0, a_meet, exit_a, sa, travel_a, wait_a);
    let b = walker(rng, b0, b_meet, exit_b, sb, travel_b, wait_b);
    let (ta, tb) = (a.path.t_start(), b.path.t_start());
    Ok(Some(Planted {
        template: Template::GroupMeeting,
        entities: vec![a, b],
        roles: vec![
            role("a", base, (ta, ta), ta),
            role("b", base + 1, (tb, tb), tb),
            // the last still sample looks ahead to the walk away
            role("a2", base, (tm, t_end - 1.0), tm),
            role("b2", base + 1, (tm, t_end - 1.0), tm),
        ],
    }))
}

fn car_following(rng: &mut ChaCha8Rng, cfg: &SynthConfig, base: usize) -> Attempt {
    let s = random_point(rng, cfg, 60.0);
    let q = offset(s, uniform(rng, 300.0, 500.0), uniform(rng, 0.0, TAU));
    if !in_scene(cfg, q, 60.0) {
        return Ok(None);
    }
    let gap = uniform(rng, 0.4, 0.7) * median_diagonal(NodeClass::Vehicle);
    let qb = toward(q, s, gap);
    let speed = uniform(rng, 20.0, 35.0);
    let delay = secs(rng, 3.0, 8.0);
    let drive_a = (dist(s, q) / speed).ceil().max(1.0);
    let drive_b = (dist(s, qb) / speed).ceil().max(1.0);
    let stopped = drive_a.max(delay + drive_b);
    let stay = secs(rng, 20.0, 40.0);
    let Some(t0) = start_time(rng, 0.0, cfg.duration - stopped - stay) else {
        return Err(too_long(stopped + stay, cfg));
    };
    let (ts, t_end) = (t0 + stopped, t0 + stopped + stay);
    let a = Path::start(t0, s).go(q, speed);
    let a = a.clone().hold(t_end - a.t_end());
    let b = Path::start(t0 + delay, s).go(qb, speed);
    let b = b.clone().hold(t_end - b.t_end());
    let a = Entity::new(rng, NodeClass::Vehicle, a);
    let b = Entity::new(rng, NodeClass::Vehicle, b);
    Ok(Some(Planted {
        template: Template::CarFollowing,
        entities: vec![a, b],
        roles: vec![
            role("a", base, (t0, t0), t0),
            role("b", base + 1, (t0 + delay, t0 + delay), t0 + delay),
            role("a2", base, (ts, t_end), ts),
            role("b2", base + 1, (ts, t_end), ts),
        ],
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::ArchiveStore;
    use crate::querymodel::validate;
    use crate::synthlab::{generate_archive, truly_near, truly_not_near, GroundTruth, SynthConfig};

    fn single(template: Template, seed: u64) -> (ArchiveStore, GroundTruth) {
        let cfg = SynthConfig {
            n_clutter: 0,
            seed,
            ..SynthConfig::default()
        }
        .with_planted(template, 1);
        generate_archive(&cfg).unwrap()
    }

    #[test]
    fn queries_are_valid() {
        for t in Template::ALL {
            assert!(validate(&t.query()).is_empty(), "{t}");
        }
    }

    #[test]
    fn no_clutter_means_only_template_entities() {
        let expected = [
            (Template::PersonMount, 2),
            (Template::ObjectDeposit, 3),
            (Template::GroupMeeting, 2),
            (Template::CarFollowing, 2),
        ];
        for (t, n) in expected {
            let (store, truth) = single(t, 1);
            assert_eq!(store.tracklets().len(), n, "{t}");
            assert_eq!(truth.instances.len(), 1);
            assert_eq!(truth.instances[0].template, t);
        }
    }

    /// Every key grounding realizes its template's relationship script
    /// according to the generator's own definitions.
    #[test]
    fn key_groundings_satisfy_the_script() {
        for t in Template::ALL {
            for seed in 0..20 {
                let (store, truth) = single(t, seed);
                let inst = &truth.instances[0];
                let graph = t.query();
                let obs = |n: &str| store.get(inst.key[n]).unwrap();
                for node in &graph.nodes {
                    let label = truth.labels.get(inst.key[&node.id]).unwrap();
                    assert_eq!(label.class, node.class, "{t} seed {seed} node {}", node.id);
                    for a in &node.attributes {
                        assert!(label.attributes.contains(a), "{t} seed {seed} node {} lacks {a}", node.id);
                    }
                }
                for e in &graph.edges {
                    let (a, b) = (obs(&e.a), obs(&e.b));
                    for r in &e.relationships {
                        let ok = match r {
                            Relationship::Near => truly_near(a, b),
                            Relationship::NotNear => truly_not_near(a, b),
                            Relationship::Later => b.time > a.time && b.time - a.time <= 600.0,
                            Relationship::SameEntity => {
                                truth.labels.get(a.obs_id).unwrap().entity
                                    == truth.labels.get(b.obs_id).unwrap().entity
                            }
                        };
                        assert!(ok, "{t} seed {seed}: {}-{} fails {r}", e.a, e.b);
                    }
                }
                for (node, members) in &inst.mapping {
                    assert!(members.contains(&inst.key[node]));
                }
            }
        }
    }

    #[test]
    fn tiny_scene_is_rejected() {
        let cfg = SynthConfig {
            scene_width: 150.0,
            scene_height: 150.0,
            n_clutter: 0,
            ..SynthConfig::default()
        }
        .with_planted(Template::ObjectDeposit, 1);
        assert!(matches!(generate_archive(&cfg), Err(SynthError::Placement { .. })));
        let cfg = SynthConfig {
            duration: 30.0,
            n_clutter: 0,
            ..SynthConfig::default()
        }
        .with_planted(Template::GroupMeeting, 1);
        match generate_archive(&cfg) {
            Err(SynthError::Placement { reason, .. }) => assert!(reason.contains("30 s"), "{reason}"),
            other => panic!("{other:?}"),
        }
    }
}
