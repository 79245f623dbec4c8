//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by `(seed, stream)`: a
//! ChaCha8 generator keyed by the seed, positioned on one of its 2^64
//! independent streams. Work is cut into fixed-size chunks and chunk `k`
//! always reads stream `k`, so outputs never depend on how many worker
//! threads happen to execute the chunks.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Points generated per stream when filling large clouds.
pub const CHUNK: usize = 4096;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a sequence of labels.
///
/// Order matters; the same labels in the same order always give the same seed.
pub fn mix_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw on the open interval (0, 1).
#[inline]
pub fn open01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard exponential draw.
#[inline]
pub fn exp1<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    -open01(rng).ln()
}

/// Fills a row-major `count × dim` buffer chunk by chunk.
///
/// `fill` receives the generator for the chunk and the rows it owns.
pub fn fill_rows<F>(count: usize, dim: usize, seed: u64, fill: F) -> Vec<f64>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    let mut data = vec![0.0; count * dim];
    if dim == 0 {
        return data;
    }
    data.par_chunks_mut(CHUNK * dim)
        .enumerate()
        .for_each(|(k, rows)| {
            let mut rng = stream(seed, k as u64);
            fill(&mut rng, rows);
        });
    data
}

/// Maps `count` indices to values using one stream per chunk, in index order.
pub fn map_indexed<T, F>(count: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let chunks: Vec<Vec<T>> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k as u64);
            let lo = k * CHUNK;
            let hi = ((k + 1) * CHUNK).min(count);
            (lo..hi).map(|i| f(&mut rng, i)).collect()
        })
        .collect();
    chunks.into_iter().flatten().collect()
}
