use std::fmt::Write as _;
use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;

use super::{aggregate, ClientUpdate, GlobalState, StrategyKind};
use crate::datakit::{
    make_windows, split_temporal, ClientPartition, NormStats, TimeSeriesDataset, WindowSample,
};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::seed::{self, stream};
use crate::stgcn::{codec, model_forward, Architecture, ModelParams};
use crate::trainer::{local_train, stack_batch, LocalStats, TrainConfig};

/// The slice of global state one client starts a round from.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientView {
    pub client: usize,
    pub range: Range<usize>,
    pub params: ModelParams,
    /// Payload bytes of this view.
    pub bytes_down: u64,
}

/// Client `k` receives embedding rows `lo_k..hi_k` and every pool.
pub fn broadcast(g: &GlobalState, partition: &ClientPartition) -> Result<Vec<ClientView>> {
    if partition.nodes() != g.params.nodes() {
        return Err(Error::Contract(format!(
            "partition covers {} nodes, model has {}",
            partition.nodes(),
            g.params.nodes()
        )));
    }
    partition
        .ranges()
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let params = g.params.slice_nodes(r.start, r.end)?;
            Ok(ClientView {
                client: k,
                range: r.clone(),
                bytes_down: codec::payload_bytes(&params),
                params,
            })
        })
        .collect()
}

/// Bytes a client downloads at the start of a round under `strategy`.
pub fn download_bytes(strategy: StrategyKind, view: &ClientView, global: &ModelParams) -> u64 {
    match strategy {
        StrategyKind::LocalOnly => 0,
        StrategyKind::FedLdr => view.bytes_down,
        _ => codec::payload_bytes(global),
    }
}

/// Exact upload size of `u` under `strategy`, from the serialization layout.
pub fn comm_bytes(u: &ClientUpdate, strategy: StrategyKind) -> u64 {
    match strategy {
        StrategyKind::LocalOnly => 0,
        StrategyKind::FedLdr => codec::payload_bytes(&u.params),
        _ => {
            let values: usize = ModelParams::block_shapes(u.params.arch(), u.params.kind(), u.total_nodes)
                .iter()
                .map(|s| s.iter().product::<usize>())
                .sum();
            values as u64 * codec::VALUE_BYTES
        }
    }
}

/// One client's windows for each split, restricted to its nodes.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub range: Range<usize>,
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl ClientData {
    pub fn split(&self, split: SplitName) -> &[WindowSample] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Normalized, windowed, partitioned data ready for a federated run.
#[derive(Debug, Clone)]
pub struct FederatedData {
    pub partition: ClientPartition,
    /// Training-segment statistics used to normalize everything.
    pub stats: NormStats,
    pub features: usize,
    pub clients: Vec<ClientData>,
}

impl FederatedData {
    /// Splits the raw timeline, fits normalization on the training segment,
    /// windows each segment separately and hands every client its rows.
    pub fn build(
        ds: &TimeSeriesDataset,
        partition: ClientPartition,
        history: usize,
        horizon: usize,
        fractions: [f64; 3],
    ) -> Result<Self> {
        if partition.nodes() != ds.nodes() {
            return Err(Error::Config(format!(
                "partition covers {} nodes, dataset has {}",
                partition.nodes(),
                ds.nodes()
            )));
        }
        let split = split_temporal(ds.steps(), fractions, history + horizon)?;
        let stats = NormStats::fit(&ds.segment(split.train.clone())?)?;
        let normalized = stats.normalize(ds)?;
        let windows = |r: Range<usize>| make_windows(&normalized.segment(r)?, history, horizon);
        let (train, val, test) = (windows(split.train)?, windows(split.val)?, windows(split.test)?);
        let slice = |ws: &[WindowSample], r: &Range<usize>| -> Result<Vec<WindowSample>> {
            ws.iter().map(|w| w.slice_nodes(r.start, r.end)).collect()
        };
        let clients = partition
            .ranges()
            .iter()
            .map(|r| {
                Ok(ClientData {
                    range: r.clone(),
                    train: slice(&train, r)?,
                    val: slice(&val, r)?,
                    test: slice(&test, r)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FederatedData {
            partition,
            stats,
            features: ds.features(),
            clients,
        })
    }

    pub fn nodes(&self) -> usize {
        self.partition.nodes()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub strategy: StrategyKind,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub rounds: usize,
    /// Rounds without a `min_delta` validation improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub rho: f64,
    pub server_lr: f64,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            strategy: StrategyKind::FedLdr,
            arch: Architecture::default(),
            train: TrainConfig::default(),
            rounds: 50,
            patience: 5,
            min_delta: 1e-4,
            rho: 0.5,
            server_lr: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    /// 1-based round index.
    pub round: usize,
    pub strategy: StrategyKind,
    pub train: MetricReport,
    pub val: MetricReport,
    pub test: MetricReport,
    /// Mean over clients of their last-epoch training MAE (normalized units).
    pub mean_train_loss: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub seconds: f64,
}

impl RoundReport {
    pub fn split(&self, split: SplitName) -> &MetricReport {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Parameters a run ends with.
#[derive(Debug, Clone, PartialEq)]
pub enum FinalModel {
    Global(ModelParams),
    /// One local model per client, for strategies that never merge.
    PerClient(Vec<ModelParams>),
}

impl FinalModel {
    fn per_client(&self, partition: &ClientPartition) -> Result<Vec<ModelParams>> {
        match self {
            FinalModel::Global(p) => partition
                .ranges()
                .iter()
                .map(|r| p.slice_nodes(r.start, r.end))
                .collect(),
            FinalModel::PerClient(v) => Ok(v.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<RoundReport>,
    pub best_round: Option<usize>,
    /// Test metrics of the best-validation parameters.
    pub final_test: Option<MetricReport>,
    pub best: Option<FinalModel>,
    pub global: GlobalState,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

/// Metrics of per-client `models` on `split`, after denormalization.
pub fn evaluate(models: &[ModelParams], data: &FederatedData, split: SplitName) -> Result<MetricReport> {
    let mut pred = Vec::new();
    let mut target = Vec::new();
    let f = data.features;
    for (model, client) in models.iter().zip(&data.clients) {
        for chunk in client.split(split).chunks(64) {
            let batch: Vec<&WindowSample> = chunk.iter().collect();
            let (x, y) = stack_batch(&batch)?;
            let out = model_forward(model, &x)?;
            let cols = y.cols();
            for (k, (p, t)) in out.data().iter().zip(y.data()).enumerate() {
                let feat = (k % cols) % f;
                pred.push(data.stats.denormalize_value(*p, feat));
                target.push(data.stats.denormalize_value(*t, feat));
            }
        }
    }
    MetricReport::compute(&pred, &target)
}

/// Runs up to `cfg.rounds` rounds of broadcast, local training, aggregation
/// and evaluation. Stops early after `cfg.patience` rounds without a
/// `cfg.min_delta` improvement in validation MAE.
pub fn run_rounds(cfg: &FederationConfig, data: &FederatedData) -> Result<RunOutcome> {
    cfg.train.validate()?;
    let n = data.nodes();
    let strategy = cfg.strategy;
    let init = ModelParams::init(
        cfg.arch,
        strategy.model_kind(),
        n,
        seed::derive(cfg.seed, &[stream::INIT]),
    )?;
    let mut global = GlobalState::new(init, cfg.server_lr, cfg.rho);
    let mut locals: Option<Vec<ModelParams>> = match strategy {
        StrategyKind::LocalOnly => Some(FinalModel::Global(global.params.clone()).per_client(&data.partition)?),
        _ => None,
    };

    let mut reports = Vec::new();
    let mut best: Option<(f64, usize, FinalModel)> = None;
    let mut stale = 0usize;
    let (mut total_up, mut total_down) = (0u64, 0u64);

    for round in 1..=cfg.rounds {
        let started = Instant::now();
        let views = broadcast(&global, &data.partition)?;
        let starts: Vec<ModelParams> = match &locals {
            Some(l) => l.clone(),
            None => views.iter().map(|v| v.params.clone()).collect(),
        };
        let trained: Vec<Result<(ModelParams, LocalStats)>> = (0..data.clients.len())
            .into_par_iter()
            .map(|k| {
                let tc = TrainConfig {
                    seed: seed::derive(cfg.seed, &[stream::CLIENT, round as u64, k as u64]),
                    ..cfg.train.clone()
                };
                local_train(&data.clients[k].train, &starts[k], &tc)
            })
            .collect();

        let mut updates = Vec::with_capacity(trained.len());
        let mut losses = Vec::with_capacity(trained.len());
        for (k, res) in trained.into_iter().enumerate() {
            let (params, stats) = res.map_err(|e| {
                Error::Training(format!("round {round}, client {k}: {e}"))
            })?;
            losses.push(stats.final_loss());
            updates.push(ClientUpdate {
                client: k,
                range: data.partition.range(k),
                total_nodes: n,
                params,
                samples: stats.samples,
            });
        }
        let bytes_up: u64 = updates.iter().map(|u| comm_bytes(u, strategy)).sum();
        let bytes_down: u64 = views
            .iter()
            .map(|v| download_bytes(strategy, v, &global.params))
            .sum();
        total_up += bytes_up;
        total_down += bytes_down;

        let current = match &mut locals {
            Some(l) => {
                *l = updates.iter().map(|u| u.params.clone()).collect();
                global.round += 1;
                FinalModel::PerClient(l.clone())
            }
            None => {
                global = aggregate(strategy, &global, &updates)?;
                FinalModel::Global(global.params.clone())
            }
        };
        let models = current.per_client(&data.partition)?;
        let train = evaluate(&models, data, SplitName::Train)?;
        let val = evaluate(&models, data, SplitName::Val)?;
        let test = evaluate(&models, data, SplitName::Test)?;
        let mean_train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        reports.push(RoundReport {
            round,
            strategy,
            train,
            val,
            test,
            mean_train_loss,
            bytes_up,
            bytes_down,
            seconds: started.elapsed().as_secs_f64(),
        });

        let improved = best
            .as_ref()
            .is_none_or(|(b, _, _)| val.mae < b - cfg.min_delta);
        if improved {
            best = Some((val.mae, round, current));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (best_round, final_test, best_model) = match best {
        Some((_, round, model)) => {
            let models = model.per_client(&data.partition)?;
            let test = evaluate(&models, data, SplitName::Test)?;
            (Some(round), Some(test), Some(model))
        }
        None => (None, None, None),
    };
    Ok(RunOutcome {
        reports,
        best_round,
        final_test,
        best: best_model,
        global,
        bytes_up: total_up,
        bytes_down: total_down,
    })
}

pub const ROUNDS_CSV_HEADER: &str =
    "round,strategy,split,mae,rmse,mape,corr,mean_train_loss,bytes_up,bytes_down,seconds";

/// Per-round metrics, one row per split. Wall-clock seconds are written as
/// `0` unless `record_seconds`, which keeps the file reproducible.
pub fn rounds_csv(reports: &[RoundReport], record_seconds: bool) -> String {
    let mut out = String::from(ROUNDS_CSV_HEADER);
    out.push('\n');
    for r in reports {
        for split in SplitName::ALL {
            let m = r.split(split);
            let secs = if record_seconds { r.seconds } else { 0.0 };
            writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:.3}",
                r.round,
                r.strategy,
                split.as_str(),
                m.mae,
                m.rmse,
                m.mape,
                m.corr,
                r.mean_train_loss,
                r.bytes_up,
                r.bytes_down,
                secs
            )
            .expect("string write");
        }
    }
    out
}
