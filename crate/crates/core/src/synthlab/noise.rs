use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{NoiseParams, SynthError};
use crate::archive::ArchiveStore;

/// Applies tracker and detector noise, in this order:
///
/// 1. each tracklet with at least two observations is split, with
///    probability `track_break_rate`, at a uniform interior point; the tail
///    gets a fresh track id;
/// 2. each observation is deleted with probability `miss_rate`;
/// 3. Gaussian noise with `margin_noise_sigma` is added to every margin.
///
/// Observation ids are preserved, so generator labels stay valid.
pub fn inject_noise(store: &ArchiveStore, noise: &NoiseParams, seed: u64) -> Result<ArchiveStore, SynthError> {
    noise.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut next_track = store.tracklets().iter().map(|t| t.track_id).max().unwrap_or(0) + 1;
    let mut retrack: BTreeMap<u64, u64> = BTreeMap::new();
    for t in store.tracklets() {
        if !rng.random_bool(noise.track_break_rate) || t.observations.len() < 2 {
            continue;
        }
        let cut = rng.random_range(1..t.observations.len());
        for &id in &t.observations[cut..] {
            retrack.insert(id, next_track);
        }
        next_track += 1;
    }

    let normal = Normal::new(0.0, noise.margin_noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut out = Vec::with_capacity(store.len());
    for obs in store.observations() {
        if rng.random::<f64>() < noise.miss_rate {
            continue;
        }
        let mut obs = obs.clone();
        if let Some(&t) = retrack.get(&obs.obs_id) {
            obs.track_id = t;
        }
        if noise.margin_noise_sigma > 0.0 {
            for m in obs.class_margins.values_mut().chain(obs.attr_margins.values_mut()) {
                *m += normal.sample(&mut rng);
            }
        }
        out.push(obs);
    }
    Ok(ArchiveStore::from_observations(out)?)
}
