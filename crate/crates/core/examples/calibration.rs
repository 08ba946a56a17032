//! Platt scaling on synthetic detector margins, and a look inside a model
//! bundle trained by `calibrate`.

use std::error::Error;

use actgraph::concepts::{clamp_probability, fit_platt, margin_to_probability};
use actgraph::synthlab::{calibrate, generate_archive, CalibrateOptions, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() {
    if let Err(e) = run() {
        eprintln!("calibration: {e}");
        std::process::exit(1);
    }
}

pub fn run() -> Result<(), Box<dyn Error>> {
    // positives centred at +1.5, negatives at -0.5: a biased, poorly scaled detector
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (pos, neg) = (Normal::new(1.5, 1.0)?, Normal::new(-0.5, 1.0)?);
    let mut margins = Vec::new();
    let mut labels = Vec::new();
    for i in 0..6000 {
        let label = i % 3 == 0;
        margins.push(if label { pos.sample(&mut rng) } else { neg.sample(&mut rng) });
        labels.push(label);
    }
    let platt = fit_platt(&margins, &labels)?;
    println!("fitted s = {:.4}, t = {:.4}", platt.s, platt.t);

    // reliability: mean prediction against observed positive rate per bin
    let mut bins = [(0.0f64, 0usize, 0usize); 10];
    for (&m, &l) in margins.iter().zip(&labels) {
        let p = clamp_probability(margin_to_probability(m, platt));
        let b = &mut bins[((p * 10.0) as usize).min(9)];
        b.0 += p;
        b.1 += 1;
        b.2 += l as usize;
    }
    println!("\nbin        n   predicted  observed");
    for (i, (sum, n, hits)) in bins.iter().enumerate() {
        if *n > 0 {
            println!(
                "{:.1}-{:.1} {:>6}   {:>8.3}  {:>8.3}",
                i as f64 / 10.0,
                (i + 1) as f64 / 10.0,
                n,
                sum / *n as f64,
                *hits as f64 / *n as f64
            );
        }
    }
    let brier: f64 = margins
        .iter()
        .zip(&labels)
        .map(|(&m, &l)| (margin_to_probability(m, platt) - l as u8 as f64).powi(2))
        .sum::<f64>()
        / margins.len() as f64;
    println!("Brier score {brier:.4}");

    let (store, truth) = generate_archive(&SynthConfig {
        n_clutter: 120,
        seed: 1000,
        ..SynthConfig::default()
    })?;
    let models = calibrate(&store, &truth.labels, &CalibrateOptions::default())?;
    println!("\nmodel bundle trained on {} observations:", store.len());
    for (class, m) in &models.class_models {
        println!("  class {class:<9} s {:>7.3}  t {:>7.3}", m.platt.s, m.platt.t);
    }
    for (attr, m) in &models.attr_models {
        println!("  attr  {attr:<17} s {:>7.3}  t {:>7.3}", m.platt.s, m.platt.t);
    }
    for (rel, m) in &models.rel_models {
        let w: Vec<String> = m.weights.iter().map(|w| format!("{w:.2}")).collect();
        println!("  rel   {rel:<9} weights [{}] bias {:.2}", w.join(" "), m.bias);
    }
    println!("  bundle is {} bytes of JSON", models.to_json().len());
    Ok(())
}
