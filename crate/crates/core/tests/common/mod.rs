#![allow(dead_code)]

pub mod naive;

use fedldr::datakit::WindowSample;
use fedldr::numkit::Tensor;
use fedldr::stgcn::Architecture;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn small_arch() -> Architecture {
    Architecture {
        history: 4,
        horizon: 2,
        hidden: 8,
        layers: 2,
        embed_dim: 4,
        pool_dim: 4,
        ..Architecture::default()
    }
}

pub fn random_sample(rng: &mut ChaCha8Rng, nodes: usize, arch: &Architecture) -> WindowSample {
    WindowSample {
        input: uniform(rng, &[nodes, arch.input_width()]),
        target: uniform(rng, &[nodes, arch.output_width()]),
        origin: 0,
    }
}

/// `|a − b| / max(|a|, |b|, 1e-6)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
