//! Seeded fixtures shared by the benchmarks.

use dart_core::data::{synth_dataset, SynthSpec};
use dart_core::model::{CodebookSizes, ModelConfig};
use dart_core::{Branch, Codebook, Dataset, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let values = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::new(&[rows, cols], values).expect("positive extents")
}

pub fn random_frames(frames: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..frames)
        .map(|_| (0..dim).map(|_| r.random_range(-3.0..3.0)).collect())
        .collect()
}

pub fn random_codebook(size: usize, dim: usize, seed: u64) -> Codebook {
    Codebook::init(Branch::Speaker, size, dim, &mut rng(seed)).expect("valid sizes")
}

/// The default synthetic benchmark set.
pub fn benchmark_data() -> Dataset {
    synth_dataset(&SynthSpec::default()).expect("default spec is valid")
}

/// Default model config shortened to `steps`.
pub fn benchmark_config(steps: usize) -> ModelConfig {
    ModelConfig::default().scaled_to(steps)
}

/// A config small enough for per-iteration timing of whole runs.
pub fn tiny_config(steps: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: 32,
        latent_dim: 3,
        codebook_sizes: CodebookSizes { speaker: 16, accent: 8 },
        ..ModelConfig::default()
    }
    .scaled_to(steps)
}
