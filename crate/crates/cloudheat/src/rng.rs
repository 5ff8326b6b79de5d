//! Deterministic, counter-based random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] whose 256-bit
//! key is derived by hashing a root seed, a stage label, and integer indices
//! (replicate number, chain id, ...). Streams are therefore independent of
//! thread scheduling: parallel code asks for `stream(seed, "stage", &[i])`
//! per work item instead of sharing a generator.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive the stream keyed by `(seed, stage, indices)`.
pub fn stream(seed: u64, stage: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((stage.len() as u64).to_le_bytes());
    hasher.update(stage.as_bytes());
    for ix in indices {
        hasher.update(ix.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Draw `n` independent standard normals from the stream.
pub fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}
