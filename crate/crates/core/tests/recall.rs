mod common;

use actgraph::synthlab::{generate_archive, passes_thresholds, SynthConfig, Template};
use actgraph::{select_thresholds, Scorer};
use common::models;

/// Fraction of planted key groundings that pass every selected threshold.
fn planted_recall(template: Template, seed: u64, eta: f64) -> (usize, usize) {
    let models = models();
    let cfg = SynthConfig {
        n_clutter: 200,
        seed,
        ..SynthConfig::default()
    }
    .with_planted(template, 20);
    let (store, truth) = generate_archive(&cfg).unwrap();
    let graph = template.query();
    let taus = select_thresholds(&graph, models.stats.as_ref().unwrap(), eta).unwrap();
    let scorer = Scorer::new(&store, models);
    let passed = truth
        .instances
        .iter()
        .filter(|inst| passes_thresholds(&graph, &inst.key, &scorer, &taus).unwrap())
        .count();
    (passed, truth.instances.len())
}

#[test]
fn planted_instances_pass_at_eta_09() {
    for template in Template::ALL {
        let (passed, total) = planted_recall(template, 31, 0.9);
        let recall = passed as f64 / total as f64;
        assert!(recall >= 0.85, "{template}: {passed}/{total}");
    }
}

#[test]
fn selected_thresholds_keep_recall_near_eta() {
    for eta in [0.8, 0.9] {
        for template in Template::ALL {
            let (mut passed, mut total) = (0, 0);
            for seed in 0..5 {
                let (p, t) = planted_recall(template, 500 + seed, eta);
                passed += p;
                total += t;
            }
            let recall = passed as f64 / total as f64;
            eprintln!("eta {eta} {template}: {recall:.3}");
            assert!(recall >= eta - 0.05, "eta {eta} {template}: {passed}/{total}");
        }
    }
}
