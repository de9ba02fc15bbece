//! Experiment runs, sweeps, strategy comparisons and report files.
//!
//! A run writes into its output directory:
//!
//! * `config.resolved`: the effective configuration with every default
//!   filled in; feeding it back reproduces the run.
//! * `metrics.csv`: one row per (round, split).
//! * `summary.csv`: test metrics of the best-validation round.
//! * `timing.csv`: wall-clock seconds per round.
//! * `best.ckpt` (or `best_client<k>.ckpt` for `LOCAL_ONLY`).

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub use config::{DataSource, ExperimentConfig, KEYS, OUTPUT_ROOT_ENV};

use crate::datakit::{
    generate_synthetic, load_csv, partition_nodes, write_csv, SyntheticSpec, TimeSeriesDataset,
    WindowSample,
};
use crate::error::{Error, Result};
use crate::federation::{
    rounds_csv, run_rounds, FederatedData, FederationConfig, FinalModel, RunOutcome, StrategyKind,
};
use crate::metrics::MetricReport;
use crate::numkit::Tensor;
use crate::seed::{self, stream};
use crate::stgcn::{codec, ModelParams};
use crate::trainer;

/// Finite-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Largest relative gradient error [`grad_check`] accepts.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<TimeSeriesDataset> {
    match &cfg.data {
        DataSource::Synthetic => Ok(generate_synthetic(&cfg.synthetic)?.dataset),
        DataSource::Csv(p) => load_csv(p),
    }
}

/// Builds the federated data and run settings a config describes.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(FederatedData, FederationConfig)> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let partition = partition_nodes(ds.nodes(), cfg.clients)?;
    let arch = crate::stgcn::Architecture {
        in_features: ds.features(),
        out_features: ds.features(),
        ..cfg.arch
    };
    let data = FederatedData::build(&ds, partition, arch.history, arch.horizon, cfg.fractions())?;
    let fed = FederationConfig {
        strategy: cfg.strategy,
        arch,
        train: cfg.train.clone(),
        rounds: cfg.rounds,
        patience: cfg.patience,
        min_delta: cfg.min_delta,
        rho: cfg.rho,
        server_lr: cfg.server_lr,
        seed: cfg.seed,
    };
    Ok((data, fed))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub run: RunOutcome,
    pub output_dir: PathBuf,
}

impl ExperimentOutcome {
    pub fn final_test(&self) -> Option<&MetricReport> {
        self.run.final_test.as_ref()
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn summary_csv(cfg: &ExperimentConfig, run: &RunOutcome) -> String {
    let mut out = String::from("strategy,seed,rounds_run,best_round,mae,rmse,mape,corr,bytes_up,bytes_down\n");
    let best = run.best_round.map_or_else(String::new, |r| r.to_string());
    let m = run.final_test.as_ref();
    let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{}\n",
        cfg.strategy,
        cfg.seed,
        run.reports.len(),
        best,
        f(m.map(|m| m.mae)),
        f(m.map(|m| m.rmse)),
        f(m.map(|m| m.mape)),
        f(m.map(|m| m.corr)),
        run.bytes_up,
        run.bytes_down
    ));
    out
}

fn timing_csv(run: &RunOutcome) -> String {
    let mut out = String::from("round,seconds\n");
    for r in &run.reports {
        out.push_str(&format!("{},{:.6}\n", r.round, r.seconds));
    }
    out
}

/// Runs one configured experiment and writes its artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write(&dir.join("config.resolved"), cfg.to_text())?;
    let (data, fed) = prepare(cfg)?;
    let run = run_rounds(&fed, &data)?;
    write(&dir.join("metrics.csv"), rounds_csv(&run.reports, cfg.record_seconds))?;
    write(&dir.join("summary.csv"), summary_csv(cfg, &run))?;
    write(&dir.join("timing.csv"), timing_csv(&run))?;
    match &run.best {
        Some(FinalModel::Global(p)) => codec::write_checkpoint(&dir.join("best.ckpt"), p)?,
        Some(FinalModel::PerClient(models)) => {
            for (k, p) in models.iter().enumerate() {
                codec::write_checkpoint(&dir.join(format!("best_client{k}.ckpt")), p)?;
            }
        }
        None => {}
    }
    Ok(ExperimentOutcome {
        run,
        output_dir: dir.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    LocalEpochs,
    Clients,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::LocalEpochs => "local_epochs",
            SweepParam::Clients => "clients",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, value: usize) {
        match self {
            SweepParam::LocalEpochs => cfg.train.epochs = value,
            SweepParam::Clients => cfg.clients = value,
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "local_epochs" | "epochs" => Ok(SweepParam::LocalEpochs),
            "clients" => Ok(SweepParam::Clients),
            other => Err(Error::Config(format!(
                "param: unknown value `{other}` (expected local_epochs or clients)"
            ))),
        }
    }
}

/// Result of one child run in a sweep or comparison.
#[derive(Debug, Clone)]
pub struct ChildResult {
    pub label: String,
    pub outcome: std::result::Result<(MetricReport, u64, u64), String>,
}

impl ChildResult {
    pub fn is_ok(&self) -> bool {
        self.outcome.is_ok()
    }
}

fn run_child(cfg: ExperimentConfig, label: String) -> ChildResult {
    let outcome = run_experiment(&cfg).and_then(|o| {
        let test = o
            .run
            .final_test
            .ok_or_else(|| Error::Training("no round completed".into()))?;
        Ok((test, o.run.bytes_up, o.run.bytes_down))
    });
    ChildResult {
        label,
        outcome: outcome.map_err(|e| e.to_string()),
    }
}

fn write_table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    write(path, bytes)
}

fn metric_cells(r: &ChildResult) -> Vec<String> {
    match &r.outcome {
        Ok((m, _, _)) => [m.mae, m.rmse, m.mape, m.corr].iter().map(|v| format!("{v:.6}")).collect(),
        Err(_) => vec![String::new(); 4],
    }
}

fn status_cells(r: &ChildResult) -> Vec<String> {
    match &r.outcome {
        Ok(_) => vec!["ok".into(), String::new()],
        Err(e) => vec!["failed".into(), e.clone()],
    }
}

/// One run per value with everything else (including the seed) fixed.
/// Children run in parallel in their own subdirectories; a failing child
/// only marks its own row. Writes `sweep_<param>.csv` in value order.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[usize]) -> Result<Vec<ChildResult>> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::Config("values: at least one value is required".into()));
    }
    let mut seen = values.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != values.len() {
        return Err(Error::Config("values: duplicates are not allowed".into()));
    }
    create_dir(&cfg.output_dir)?;
    let root = cfg.output_dir.join(format!("sweep_{}", param.name()));
    let results: Vec<ChildResult> = values
        .par_iter()
        .map(|&v| {
            let mut child = cfg.clone();
            param.apply(&mut child, v);
            child.output_dir = root.join(v.to_string());
            run_child(child, v.to_string())
        })
        .collect();
    let rows = results
        .iter()
        .map(|r| {
            let mut row = vec![r.label.clone()];
            row.extend(metric_cells(r));
            row.extend(status_cells(r));
            row
        })
        .collect();
    write_table(
        &cfg.output_dir.join(format!("sweep_{}.csv", param.name())),
        &["value", "mae", "rmse", "mape", "corr", "status", "error"],
        rows,
    )?;
    Ok(results)
}

/// Runs each strategy on identical data and seed and writes
/// `compare.csv`, one row per strategy in the order given.
pub fn compare_strategies(cfg: &ExperimentConfig, strategies: &[StrategyKind]) -> Result<Vec<ChildResult>> {
    cfg.validate()?;
    if strategies.is_empty() {
        return Err(Error::Config("strategies: at least one strategy is required".into()));
    }
    create_dir(&cfg.output_dir)?;
    let root = cfg.output_dir.join("compare");
    let results: Vec<ChildResult> = strategies
        .par_iter()
        .map(|&s| {
            let mut child = cfg.clone();
            child.strategy = s;
            child.output_dir = root.join(s.name());
            run_child(child, s.name().to_string())
        })
        .collect();
    let rows = results
        .iter()
        .map(|r| {
            let mut row = vec![r.label.clone(), cfg.seed.to_string()];
            row.extend(metric_cells(r));
            match &r.outcome {
                Ok((_, up, down)) => row.extend([up.to_string(), down.to_string()]),
                Err(_) => row.extend([String::new(), String::new()]),
            }
            row.extend(status_cells(r));
            row
        })
        .collect();
    write_table(
        &cfg.output_dir.join("compare.csv"),
        &[
            "strategy", "seed", "mae", "rmse", "mape", "corr", "bytes_up", "bytes_down", "status", "error",
        ],
        rows,
    )?;
    Ok(results)
}

/// Reads a generator spec given either as a file of `key = value` lines or
/// inline as `key=value,key=value`. Keys are the `synthetic_*` config keys
/// without the prefix.
pub fn parse_synthetic_spec(spec: &str) -> Result<SyntheticSpec> {
    let text = if Path::new(spec).is_file() {
        fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?
    } else if spec.contains('=') {
        spec.replace(',', "\n")
    } else {
        return Err(Error::Config(format!(
            "spec: `{spec}` is neither a file nor an inline key=value list"
        )));
    };
    let mut prefixed = String::new();
    for line in text.lines() {
        let body = line.split('#').next().unwrap_or("").trim();
        if !body.is_empty() {
            prefixed.push_str("synthetic_");
            prefixed.push_str(body);
            prefixed.push('\n');
        }
    }
    Ok(ExperimentConfig::parse(&prefixed)?.synthetic)
}

/// Path of the hidden-graph file written next to generated data.
pub fn adjacency_path(out: &Path) -> PathBuf {
    out.with_extension("adjacency.csv")
}

/// Writes synthetic readings to `out` and the hidden graph to
/// [`adjacency_path`].
pub fn gen_data(spec: &SyntheticSpec, out: &Path) -> Result<TimeSeriesDataset> {
    let data = generate_synthetic(spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_csv(out, &data.dataset)?;
    let n = data.adjacency.rows();
    let mut adj = String::new();
    for i in 0..n {
        let row: Vec<String> = data.adjacency.row(i).iter().map(|v| format!("{v:?}")).collect();
        adj.push_str(&row.join(","));
        adj.push('\n');
    }
    write(&adjacency_path(out), adj)?;
    Ok(data.dataset)
}

/// Compares analytic and central-difference gradients of the local
/// objective for a random model shaped by `cfg` (node count from
/// `synthetic_nodes`, one feature). Returns the largest relative error.
pub fn grad_check(cfg: &ExperimentConfig) -> Result<f64> {
    cfg.validate()?;
    let n = cfg.synthetic.nodes;
    let arch = cfg.arch;
    let kind = cfg.strategy.model_kind();
    let params = ModelParams::init(arch, kind, n, seed::derive(cfg.seed, &[stream::INIT]))?;
    let anchor = ModelParams::init(arch, kind, n, seed::derive(cfg.seed, &[stream::INIT, 1]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[stream::DATA]));
    let mut normal = |len: usize| -> Vec<f64> {
        (0..len)
            .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect()
    };
    let sample = WindowSample {
        input: Tensor::new(&[n, arch.input_width()], normal(n * arch.input_width()))?,
        target: Tensor::new(&[n, arch.output_width()], normal(n * arch.output_width()))?,
        origin: 0,
    };
    trainer::grad_check(&params, &anchor, cfg.train.mu, &sample, GRAD_CHECK_STEP)
}
