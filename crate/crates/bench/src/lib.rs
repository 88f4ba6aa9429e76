//! Inputs shared by the benchmarks.

use ndarray::{Array2, Array3, Array4, Array5};
use omnigait::dataset::Modality;
use omnigait::model::{Stream, TrainBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `[B, T, C, 64, 64]` clip with values in `[0, 1)`.
pub fn clip(rng: &mut ChaCha8Rng, m: Modality, b: usize, t: usize) -> Array5<f32> {
    let c = m.channels().expect("image modality");
    Array5::from_shape_fn((b, t, c, 64, 64), |_| rng.random_range(0.0..1.0))
}

pub fn feature_map(rng: &mut ChaCha8Rng, n: usize, c: usize, hw: usize) -> Array4<f32> {
    Array4::from_shape_fn((n, c, hw, hw), |_| rng.random_range(-1.0..1.0))
}

/// Part features `[B, C, P]` for `ids` identities, `B / ids` samples each.
pub fn features(rng: &mut ChaCha8Rng, b: usize, c: usize, p: usize, ids: usize) -> (Array3<f32>, Vec<usize>) {
    let labels = (0..b).map(|i| i % ids).collect();
    (Array3::from_shape_fn((b, c, p), |_| rng.random_range(-1.0..1.0)), labels)
}

pub fn distances(rng: &mut ChaCha8Rng, probes: usize, gallery: usize) -> Array2<f64> {
    Array2::from_shape_fn((probes, gallery), |_| rng.random_range(0.0..10.0))
}

/// Omni training batch: each modality alone, then the first one fused
/// with each of the others.
pub fn omni_batch(rng: &mut ChaCha8Rng, mods: &[Modality], b: usize, t: usize) -> TrainBatch<f32> {
    let mut streams: Vec<Stream> = mods.iter().map(|&m| Stream::Single(m)).collect();
    streams.extend(mods[1..].iter().map(|&m| Stream::Pair(mods[0], m)));
    TrainBatch {
        inputs: mods.iter().map(|&m| (m, clip(rng, m, b, t))).collect(),
        streams,
    }
}
