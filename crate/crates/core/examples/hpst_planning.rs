//! Query planning on a real archive: relationship frequencies, the most
//! discriminative spanning tree, and the thresholds chosen for a few recall
//! targets.

use std::error::Error;

use actgraph::archive::{estimate_relationship_frequencies, FreqOptions};
use actgraph::planner::{edge_weight, enumerate_spanning_trees, PlanError};
use actgraph::synthlab::{calibrate, generate_archive, CalibrateOptions, SynthConfig, Template};
use actgraph::{hpst, select_thresholds};

fn main() {
    if let Err(e) = run() {
        eprintln!("hpst_planning: {e}");
        std::process::exit(1);
    }
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let (store, truth) = generate_archive(
        &SynthConfig {
            n_clutter: 120,
            seed: 11,
            ..SynthConfig::default()
        }
        .with_planted(Template::GroupMeeting, 5),
    )?;
    let models = calibrate(&store, &truth.labels, &CalibrateOptions::default())?;
    let freqs = estimate_relationship_frequencies(&store, &models, &FreqOptions::default())?;
    println!("relationship frequencies over {} sampled pairs:", freqs.sample_size);
    for (rel, f) in &freqs.freq {
        println!("  {rel:<12} {f:.4}");
    }

    let query = Template::GroupMeeting.query();
    println!("\nedges of the group-meeting query:");
    for (i, e) in query.edges.iter().enumerate() {
        let rels: Vec<&str> = e.relationships.iter().map(|r| r.as_str()).collect();
        println!("  [{i}] {} - {} {:<28} weight {:>8.3}", e.a, e.b, rels.join(","), edge_weight(e, &freqs));
    }

    let tree = hpst(&query, &freqs)?;
    let all = enumerate_spanning_trees(&query, &freqs)?;
    let beaten = all.iter().filter(|t| t.total_weight < tree.total_weight).count();
    println!(
        "\nhpst: root {}, edges {:?}, weight {:.3}; {} spanning trees exist, {beaten} lighter",
        tree.root,
        tree.tree_edges,
        tree.total_weight,
        all.len()
    );
    println!("visit order {:?}", tree.order);

    let stats = models.stats.as_ref().expect("calibration records score statistics");
    for eta in [0.5, 0.8, 0.9, 0.95] {
        match select_thresholds(&query, stats, eta) {
            Ok(t) => {
                let nodes: Vec<String> = t.node_tau.iter().map(|(n, tau)| format!("{n}:{tau:.3}")).collect();
                let edges: Vec<String> = t.edge_tau.iter().map(|e| format!("{:.3}", e.tau)).collect();
                println!("eta {eta:<4} nodes {}  edges [{}]", nodes.join(" "), edges.join(", "));
            }
            Err(PlanError::Infeasible { .. }) => println!("eta {eta:<4} infeasible with this calibration set"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}
