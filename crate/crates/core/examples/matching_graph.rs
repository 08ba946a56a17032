//! The stages behind `retrieve`, run by hand: matching graph, tree dynamic
//! program, full-graph rescoring. Also shows how relaxing the thresholds
//! grows the matching graph.

use std::error::Error;

use actgraph::archive::{estimate_relationship_frequencies, FreqOptions};
use actgraph::matcher::{build_matching_graph, deduplicate, optimize_groundings, rescore_full_graph, Grounding};
use actgraph::synthlab::{calibrate, generate_archive, CalibrateOptions, SynthConfig, Template};
use actgraph::{hpst, select_thresholds, Scorer};

fn main() {
    if let Err(e) = run() {
        eprintln!("matching_graph: {e}");
        std::process::exit(1);
    }
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let (train, labels) = generate_archive(&SynthConfig {
        n_clutter: 150,
        seed: 1000,
        ..SynthConfig::default()
    })?;
    let models = calibrate(&train, &labels.labels, &CalibrateOptions::default())?;
    let (store, truth) = generate_archive(
        &SynthConfig {
            n_clutter: 150,
            seed: 4,
            ..SynthConfig::default()
        }
        .with_planted(Template::PersonMount, 8),
    )?;

    let query = Template::PersonMount.query();
    let tree = hpst(&query, &estimate_relationship_frequencies(&store, &models, &FreqOptions::default())?)?;
    let mut taus = select_thresholds(&query, models.stats.as_ref().unwrap(), 0.9)?;
    let scorer = Scorer::new(&store, &models);

    for round in 0..3 {
        let h = build_matching_graph(&query, &tree, &scorer, &taus)?;
        let per_node: Vec<String> = tree
            .order
            .iter()
            .map(|n| format!("{n}:{}", h.node_assignments(n).len()))
            .collect();
        println!(
            "round {round}: {} assignments ({}), {} links",
            h.assignments.len(),
            per_node.join(" "),
            h.links.len()
        );
        taus = taus.relax(0.5);
    }

    let taus = select_thresholds(&query, models.stats.as_ref().unwrap(), 0.9)?;
    let h = build_matching_graph(&query, &tree, &scorer, &taus)?;
    let (roots, incomplete) = optimize_groundings(&tree, &h, &store, 1);
    println!("\n{} roots solved, {incomplete} dropped without a complete subtree", roots.len());

    let candidates: Vec<Grounding> = roots
        .iter()
        .flat_map(|r| r.groundings.iter())
        .map(|(score, mapping)| Grounding::new(&store, mapping.clone(), *score))
        .collect::<Result<_, _>>()?;
    let rescored = rescore_full_graph(candidates, &query, &tree, &taus, &scorer)?;
    let ranked = deduplicate(rescored.kept);
    println!(
        "{} failed a non-tree edge, {} distinct groundings remain, {} planted",
        rescored.filtered,
        ranked.len(),
        truth.instances.len()
    );
    for g in ranked.iter().take(5) {
        println!("  tree {:>8.3}  full {:>8.3}  {:?}", g.tree_log_score, g.full_log_score, g.mapping);
    }
    Ok(())
}
