use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;

/// Stratified, nested label subsample. Within each stratum the members are
/// shuffled once per `(seed, stratum)` and the first `round(f * n)` kept
/// (at least one), so smaller fractions select subsets of larger ones.
/// Returns sorted indices into `strata`.
pub fn subsample_indices<K: Ord + Clone + std::fmt::Debug>(
    strata: &[K],
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>, EvalError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvalError::Config(format!("label fraction must lie in (0, 1], got {fraction}")));
    }
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in strata.iter().enumerate() {
        groups.entry(k.clone()).or_default().push(i);
    }
    let mut keep = Vec::new();
    for (rank, (key, mut members)) in groups.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rank as u64 + 1);
        members.shuffle(&mut rng);
        let wanted = (fraction * members.len() as f64).round() as usize;
        if wanted == 0 {
            log::warn!("label fraction {fraction} keeps no sample of stratum {key:?}; keeping one");
        }
        keep.extend_from_slice(&members[..wanted.max(1)]);
    }
    keep.sort_unstable();
    Ok(keep)
}
