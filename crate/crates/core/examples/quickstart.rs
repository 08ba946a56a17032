//! Plant twenty object deposits in a synthetic archive, calibrate models on a
//! second archive, retrieve, and score the ranking against the planted truth.
//!
//! ```bash
//! cargo run --release -p actgraph --example quickstart
//! ```

use std::error::Error;

use actgraph::archive::{estimate_relationship_frequencies, FreqOptions};
use actgraph::synthlab::{calibrate, evaluate, generate_archive, CalibrateOptions, SynthConfig, Template};
use actgraph::{retrieve, RetrievalConfig};

fn main() {
    if let Err(e) = run() {
        eprintln!("quickstart: {e}");
        std::process::exit(1);
    }
}

pub fn run() -> Result<(), Box<dyn Error>> {
    // models are trained on generator labels from an archive the query never sees
    let (train, train_truth) = generate_archive(&SynthConfig {
        n_clutter: 200,
        seed: 1000,
        ..SynthConfig::default()
    })?;
    let models = calibrate(&train, &train_truth.labels, &CalibrateOptions::default())?;

    let config = SynthConfig {
        n_clutter: 200,
        seed: 7,
        ..SynthConfig::default()
    }
    .with_planted(Template::ObjectDeposit, 20);
    let (store, truth) = generate_archive(&config)?;
    println!(
        "archive: {} observations in {} tracklets, {} planted deposits",
        store.len(),
        store.tracklets().len(),
        truth.instances.len()
    );

    let freqs = estimate_relationship_frequencies(&store, &models, &FreqOptions::default())?;
    let query = Template::ObjectDeposit.query();
    let result = retrieve(
        &query,
        &store,
        &models,
        &freqs,
        &RetrievalConfig {
            k: 30,
            ..RetrievalConfig::default()
        },
    )?;

    println!("\nrank  log score  t_start..t_end      mapping");
    for (i, g) in result.ranked.iter().take(5).enumerate() {
        let mapping: Vec<String> = g.mapping.iter().map(|(n, o)| format!("{n}={o}")).collect();
        println!(
            "{:>4}  {:>9.3}  {:>7.1}..{:<7.1}  {}",
            i + 1,
            g.full_log_score,
            g.volume.t_start,
            g.volume.t_end,
            mapping.join(" ")
        );
    }

    let report = evaluate(&result, &truth.instances);
    println!("\n{}", report.table());
    Ok(())
}
