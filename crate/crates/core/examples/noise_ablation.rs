//! Retrieval quality as detections are dropped, tracks broken and margins
//! blurred, with and without re-identification across track breaks.
//!
//! ```bash
//! cargo run --release -p actgraph --example noise_ablation
//! ```

use std::error::Error;

use actgraph::archive::{estimate_relationship_frequencies, FreqOptions};
use actgraph::synthlab::{calibrate, evaluate, generate_archive, CalibrateOptions, NoiseParams, SynthConfig, Template};
use actgraph::{retrieve, CalibrationModel, RetrievalConfig};

fn main() {
    if let Err(e) = run() {
        eprintln!("noise_ablation: {e}");
        std::process::exit(1);
    }
}

fn auc(models: &CalibrationModel, seed: u64, noise: NoiseParams, reid: bool) -> Result<f64, Box<dyn Error>> {
    let config = SynthConfig {
        n_clutter: 200,
        noise,
        seed,
        ..SynthConfig::default()
    }
    .with_planted(Template::ObjectDeposit, 20);
    let (store, truth) = generate_archive(&config)?;
    let freqs = estimate_relationship_frequencies(
        &store,
        models,
        &FreqOptions {
            reid,
            ..FreqOptions::default()
        },
    )?;
    let retrieval = RetrievalConfig {
        k: 100,
        reid,
        ..RetrievalConfig::default()
    };
    let result = retrieve(&Template::ObjectDeposit.query(), &store, models, &freqs, &retrieval)?;
    Ok(evaluate(&result, &truth.instances).auc)
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let (train, truth) = generate_archive(&SynthConfig {
        n_clutter: 200,
        seed: 1000,
        ..SynthConfig::default()
    })?;
    let models = calibrate(&train, &truth.labels, &CalibrateOptions::default())?;

    let settings = [
        ("clean", NoiseParams::off()),
        (
            "misses",
            NoiseParams {
                miss_rate: 0.1,
                ..NoiseParams::off()
            },
        ),
        (
            "breaks",
            NoiseParams {
                track_break_rate: 0.1,
                ..NoiseParams::off()
            },
        ),
        (
            "all",
            NoiseParams {
                miss_rate: 0.1,
                track_break_rate: 0.1,
                margin_noise_sigma: 0.5,
            },
        ),
    ];
    println!("{:<8} {:>8} {:>8}", "noise", "re-id", "no re-id");
    for (name, noise) in settings {
        let (mut with, mut without) = (0.0, 0.0);
        let seeds = 0..3u64;
        for seed in seeds.clone() {
            with += auc(&models, seed, noise, true)?;
            without += auc(&models, seed, noise, false)?;
        }
        let n = seeds.count() as f64;
        println!("{name:<8} {:>8.3} {:>8.3}", with / n, without / n);
    }
    Ok(())
}
