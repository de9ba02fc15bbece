//! Seeded stand-in for loop-detector flow data.
//!
//! Readings follow
//!
//! ```text
//! x[t+1, i] = c·Σ_j W*[i,j]·x[t, j] + a·sin(2π(t+1)/P + φ_i) + o_i + σ·ε
//! ```
//!
//! where `W*` is a row-normalized ring with random shortcuts, `φ_i` a
//! per-node phase and `o_i` a per-node offset. The first `burn_in` steps are
//! discarded; time indices in the seasonal term keep counting through them.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::numkit::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub steps: usize,
    pub seed: u64,
    /// Standard deviation `σ` of the additive Gaussian noise.
    pub noise: f64,
    /// Spread of the per-node offsets: `o_i = base_level + offset_scale·U(0,1)`.
    pub offset_scale: f64,
    pub base_level: f64,
    /// Seasonal amplitude `a`.
    pub amplitude: f64,
    pub period: f64,
    /// Phases are drawn from `U(0, phase_spread)`; zero gives one common phase.
    pub phase_spread: f64,
    /// Graph coupling `c`.
    pub coupling: f64,
    /// Random extra edges on top of the ring.
    pub shortcuts: usize,
    pub burn_in: usize,
    /// Seconds between timestamps.
    pub interval: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            nodes: 8,
            steps: 600,
            seed: 0,
            noise: 0.1,
            offset_scale: 10.0,
            base_level: 5.0,
            amplitude: 2.0,
            period: 24.0,
            phase_spread: TAU,
            coupling: 0.6,
            shortcuts: 2,
            burn_in: 48,
            interval: 300,
        }
    }
}

/// Generated readings plus the hidden structure behind them.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: TimeSeriesDataset,
    /// Row-stochastic hidden graph `W*`.
    pub adjacency: Tensor,
    pub offsets: Vec<f64>,
    pub phases: Vec<f64>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::Config("synthetic nodes must be at least 2".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("synthetic steps must be positive".into()));
        }
        if !(self.noise >= 0.0) || !(self.period > 0.0) || !self.coupling.is_finite() {
            return Err(Error::Config(
                "synthetic noise must be ≥ 0 and period > 0".into(),
            ));
        }
        Ok(())
    }

    /// Deterministic part of the recurrence: `x[t+1]` given `x[t]`, where
    /// `t` counts from the start of burn-in.
    pub fn step_mean(&self, data: &SyntheticData, t: usize, prev: &[f64]) -> Vec<f64> {
        let n = self.nodes;
        (0..n)
            .map(|i| {
                let mix: f64 = (0..n).map(|j| data.adjacency.get(i, j) * prev[j]).sum();
                self.coupling * mix
                    + self.amplitude * (TAU * (t + 1) as f64 / self.period + data.phases[i]).sin()
                    + data.offsets[i]
            })
            .collect()
    }
}

fn hidden_graph(n: usize, shortcuts: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut adj = vec![0.0; n * n];
    for i in 0..n {
        adj[i * n + (i + 1) % n] = 1.0;
        adj[i * n + (i + n - 1) % n] = 1.0;
    }
    for _ in 0..shortcuts {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j {
            adj[i * n + j] = 1.0;
        }
    }
    for row in adj.chunks_mut(n) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new(&[n, n], adj).expect("square graph")
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let n = spec.nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let adjacency = hidden_graph(n, spec.shortcuts, &mut rng);
    let offsets: Vec<f64> = (0..n)
        .map(|_| spec.base_level + spec.offset_scale * rng.random::<f64>())
        .collect();
    let phases: Vec<f64> = (0..n)
        .map(|_| {
            if spec.phase_spread > 0.0 {
                rng.random_range(0.0..spec.phase_spread)
            } else {
                0.0
            }
        })
        .collect();
    let mut data = SyntheticData {
        dataset: TimeSeriesDataset::new(1, 1, 1, vec![0.0], vec!["0".into()])?,
        adjacency,
        offsets,
        phases,
    };

    let total = spec.burn_in + spec.steps;
    let denom = (1.0 - spec.coupling).abs().max(1e-3);
    let mut x: Vec<f64> = data.offsets.iter().map(|o| o / denom).collect();
    let mut values = Vec::with_capacity(spec.steps * n);
    if spec.burn_in == 0 {
        values.extend_from_slice(&x);
    }
    for t in 0..total - 1 {
        let mut next = spec.step_mean(&data, t, &x);
        for v in next.iter_mut() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *v += spec.noise * eps;
        }
        x = next;
        if t + 1 >= spec.burn_in {
            values.extend_from_slice(&x);
        }
    }
    let timestamps = (0..spec.steps)
        .map(|t| (t as u64 * spec.interval).to_string())
        .collect();
    data.dataset = TimeSeriesDataset::new(spec.steps, n, 1, values, timestamps)?;
    Ok(data)
}
