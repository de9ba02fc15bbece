//! Traffic readings: loading, synthesis, temporal splitting, windowing,
//! normalization and node partitioning.

mod csv_io;
mod synthetic;

use std::ops::Range;

pub use csv_io::{load_csv, parse_csv, to_csv_string, write_csv};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

use crate::error::{Error, Result};
use crate::numkit::Tensor;

/// `steps × nodes × features` readings, stored flat in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    steps: usize,
    nodes: usize,
    features: usize,
    values: Vec<f64>,
    timestamps: Vec<String>,
    /// Spacing between consecutive timestamps when they are numeric and even.
    pub interval: Option<f64>,
}

impl TimeSeriesDataset {
    pub fn new(
        steps: usize,
        nodes: usize,
        features: usize,
        values: Vec<f64>,
        timestamps: Vec<String>,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("no timesteps".into()));
        }
        if nodes == 0 || features == 0 {
            return Err(Error::Config("dataset needs at least one node and feature".into()));
        }
        if values.len() != steps * nodes * features || timestamps.len() != steps {
            return Err(Error::dim(
                "dataset",
                &[steps, nodes, features],
                &[values.len(), timestamps.len()],
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "non-finite reading at timestep {}",
                pos / (nodes * features)
            )));
        }
        let interval = infer_interval(&timestamps);
        Ok(TimeSeriesDataset {
            steps,
            nodes,
            features,
            values,
            timestamps,
            interval,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn timestamps(&self) -> &[String] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, t: usize, node: usize, feature: usize) -> f64 {
        self.values[(t * self.nodes + node) * self.features + feature]
    }

    /// Readings of one timestep, node-major.
    pub fn step(&self, t: usize) -> &[f64] {
        let w = self.nodes * self.features;
        &self.values[t * w..(t + 1) * w]
    }

    /// Contiguous sub-range of timesteps.
    pub fn segment(&self, range: Range<usize>) -> Result<TimeSeriesDataset> {
        if range.start >= range.end || range.end > self.steps {
            return Err(Error::Config(format!(
                "segment {range:?} outside 0..{}",
                self.steps
            )));
        }
        let w = self.nodes * self.features;
        TimeSeriesDataset::new(
            range.len(),
            self.nodes,
            self.features,
            self.values[range.start * w..range.end * w].to_vec(),
            self.timestamps[range.clone()].to_vec(),
        )
    }

    fn map_values(&self, f: impl Fn(f64, usize) -> f64) -> TimeSeriesDataset {
        let feats = self.features;
        let mut out = self.clone();
        for (k, v) in out.values.iter_mut().enumerate() {
            *v = f(*v, k % feats);
        }
        out
    }
}

fn infer_interval(timestamps: &[String]) -> Option<f64> {
    let parsed: Option<Vec<f64>> = timestamps.iter().map(|s| s.trim().parse().ok()).collect();
    let parsed = parsed?;
    if parsed.len() < 2 {
        return None;
    }
    let d = parsed[1] - parsed[0];
    parsed
        .windows(2)
        .all(|w| ((w[1] - w[0]) - d).abs() <= 1e-9 * d.abs().max(1.0))
        .then_some(d)
}

/// One (history, horizon) training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `N×(T·F)`; column `t·F + f` holds feature `f` at history step `t`.
    pub input: Tensor,
    /// `N×(Δ·F)`; column `h·F + f` holds feature `f` at horizon step `h`.
    pub target: Tensor,
    /// Timestep (within the source segment) of the first input step.
    pub origin: usize,
}

impl WindowSample {
    /// The same window restricted to nodes `lo..hi`.
    pub fn slice_nodes(&self, lo: usize, hi: usize) -> Result<WindowSample> {
        Ok(WindowSample {
            input: self.input.slice_rows(lo, hi)?,
            target: self.target.slice_rows(lo, hi)?,
            origin: self.origin,
        })
    }
}

/// Every `(T, Δ)` window fully inside `segment`, in origin order.
pub fn make_windows(segment: &TimeSeriesDataset, history: usize, horizon: usize) -> Result<Vec<WindowSample>> {
    let need = history + horizon;
    if history == 0 || horizon == 0 {
        return Err(Error::Config("history and horizon must be positive".into()));
    }
    if segment.steps() < need {
        return Err(Error::Config(format!(
            "segment of {} steps is shorter than history+horizon = {need}",
            segment.steps()
        )));
    }
    let (n, f) = (segment.nodes(), segment.features());
    (0..=segment.steps() - need)
        .map(|s| {
            let mut input = vec![0.0; n * history * f];
            let mut target = vec![0.0; n * horizon * f];
            for i in 0..n {
                for t in 0..history {
                    for k in 0..f {
                        input[i * history * f + t * f + k] = segment.value(s + t, i, k);
                    }
                }
                for h in 0..horizon {
                    for k in 0..f {
                        target[i * horizon * f + h * f + k] = segment.value(s + history + h, i, k);
                    }
                }
            }
            Ok(WindowSample {
                input: Tensor::new(&[n, history * f], input)?,
                target: Tensor::new(&[n, horizon * f], target)?,
                origin: s,
            })
        })
        .collect()
}

/// Contiguous train / validation / test timestep ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl TemporalSplit {
    pub fn lengths(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

/// Splits `steps` into ordered segments of `floor(f_train·steps)`,
/// `floor(f_val·steps)` and the remainder. Every segment must hold at least
/// `min_len` steps.
pub fn split_temporal(steps: usize, fractions: [f64; 3], min_len: usize) -> Result<TemporalSplit> {
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    // the small nudge keeps products such as 0.7·10 from flooring to 6
    let floor = |f: f64| ((f * steps as f64) + 1e-9).floor() as usize;
    let n_train = floor(fractions[0]);
    let n_val = floor(fractions[1]);
    let split = TemporalSplit {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..steps,
    };
    for (name, len) in ["train", "val", "test"].iter().zip(split.lengths()) {
        if len < min_len {
            return Err(Error::Config(format!(
                "{name} segment has {len} steps, needs at least {min_len}"
            )));
        }
    }
    Ok(split)
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Mean and population standard deviation of each feature over every
    /// node and timestep of `train`.
    pub fn fit(train: &TimeSeriesDataset) -> Result<Self> {
        let f = train.features();
        let count = (train.steps() * train.nodes()) as f64;
        let mut mean = vec![0.0; f];
        for (k, v) in train.values().iter().enumerate() {
            mean[k % f] += v;
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; f];
        for (k, v) in train.values().iter().enumerate() {
            let d = v - mean[k % f];
            var[k % f] += d * d;
        }
        let std: Vec<f64> = var.iter().map(|v| (v / count).sqrt()).collect();
        let stats = NormStats { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    pub fn identity(features: usize) -> Self {
        NormStats {
            mean: vec![0.0; features],
            std: vec![1.0; features],
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(k) = self.std.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!(
                "feature {k} has zero standard deviation on the training segment"
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        self.validate()?;
        self.check_features(ds.features())?;
        Ok(ds.map_values(|v, k| (v - self.mean[k]) / self.std[k]))
    }

    pub fn denormalize(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        self.check_features(ds.features())?;
        Ok(ds.map_values(|v, k| v * self.std[k] + self.mean[k]))
    }

    /// Inverse transform of a single normalized value of `feature`.
    pub fn denormalize_value(&self, v: f64, feature: usize) -> f64 {
        v * self.std[feature] + self.mean[feature]
    }

    fn check_features(&self, f: usize) -> Result<()> {
        if self.mean.len() != f {
            return Err(Error::dim("norm_stats", &[self.mean.len()], &[f]));
        }
        Ok(())
    }
}

/// Contiguous node ranges, one per client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientPartition {
    nodes: usize,
    ranges: Vec<Range<usize>>,
}

impl ClientPartition {
    /// Checks that `ranges` are non-empty, ordered, disjoint and cover
    /// `0..nodes`.
    pub fn from_ranges(nodes: usize, ranges: Vec<Range<usize>>) -> Result<Self> {
        let mut next = 0;
        for r in &ranges {
            if r.start != next {
                return Err(Error::Contract(format!(
                    "partition {} at node {next}: range {r:?} leaves a gap or overlap",
                    if r.start > next { "gap" } else { "overlap" }
                )));
            }
            if r.is_empty() {
                return Err(Error::Contract(format!("empty node range {r:?}")));
            }
            next = r.end;
        }
        if next != nodes {
            return Err(Error::Contract(format!(
                "partition covers 0..{next}, expected 0..{nodes}"
            )));
        }
        Ok(ClientPartition { nodes, ranges })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn clients(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn range(&self, client: usize) -> Range<usize> {
        self.ranges[client].clone()
    }
}

/// Splits `0..nodes` into `clients` contiguous ranges; the first
/// `nodes mod clients` ranges get one extra node.
pub fn partition_nodes(nodes: usize, clients: usize) -> Result<ClientPartition> {
    if clients == 0 || clients > nodes {
        return Err(Error::Config(format!(
            "clients must be in 1..={nodes}, got {clients}"
        )));
    }
    let (base, extra) = (nodes / clients, nodes % clients);
    let mut ranges = Vec::with_capacity(clients);
    let mut lo = 0;
    for k in 0..clients {
        let size = base + usize::from(k < extra);
        ranges.push(lo..lo + size);
        lo += size;
    }
    ClientPartition::from_ranges(nodes, ranges)
}
