//! Round protocol and aggregation strategies.
//!
//! A round broadcasts the global state, trains every client independently,
//! and aggregates what they send back. Clients own disjoint contiguous node
//! ranges; each one builds its adjacency over its own nodes only.
//!
//! Strategies differ in what travels and how it is merged:
//!
//! | strategy        | model            | upload                  | merge                         |
//! |-----------------|------------------|-------------------------|-------------------------------|
//! | `FED_LDR`       | adaptive         | own embedding rows + pools | blend rows by ρ, weighted mean of pools |
//! | `FEDAVG`        | shared ablation  | full model              | weighted mean                 |
//! | `FEDMEDIAN`     | shared ablation  | full model              | coordinate-wise median        |
//! | `FEDOPT`        | shared ablation  | full model              | server Adam on pseudo-gradient |
//! | `*_LDR` hybrids | adaptive         | full model              | as the plain rule             |
//! | `LOCAL_ONLY`    | adaptive         | nothing                 | none                          |
//!
//! A full adaptive model carries all `N` embedding rows; a client only
//! changes its own rows, the rest are the values it received.

mod aggregate;
mod protocol;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

pub use aggregate::{aggregate_fedavg, aggregate_fedldr, aggregate_fedmedian, aggregate_fedopt, median};
pub use protocol::{
    broadcast, comm_bytes, download_bytes, evaluate, rounds_csv, run_rounds, ClientData, ClientView,
    FederatedData, FederationConfig, FinalModel, RoundReport, RunOutcome, SplitName,
};

use crate::error::{Error, Result};
use crate::stgcn::{ModelKind, ModelParams};
use crate::trainer::{AdamConfig, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    FedLdr,
    FedAvg,
    FedMedian,
    FedOpt,
    FedAvgLdr,
    FedMedianLdr,
    FedOptLdr,
    LocalOnly,
}

/// How uploaded models are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeRule {
    Blend,
    Mean,
    Median,
    ServerAdam,
    None,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::FedLdr,
        StrategyKind::FedAvg,
        StrategyKind::FedMedian,
        StrategyKind::FedOpt,
        StrategyKind::FedAvgLdr,
        StrategyKind::FedMedianLdr,
        StrategyKind::FedOptLdr,
        StrategyKind::LocalOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::FedLdr => "FED_LDR",
            StrategyKind::FedAvg => "FEDAVG",
            StrategyKind::FedMedian => "FEDMEDIAN",
            StrategyKind::FedOpt => "FEDOPT",
            StrategyKind::FedAvgLdr => "FEDAVG_LDR",
            StrategyKind::FedMedianLdr => "FEDMEDIAN_LDR",
            StrategyKind::FedOptLdr => "FEDOPT_LDR",
            StrategyKind::LocalOnly => "LOCAL_ONLY",
        }
    }

    pub fn model_kind(self) -> ModelKind {
        match self {
            StrategyKind::FedAvg | StrategyKind::FedMedian | StrategyKind::FedOpt => {
                ModelKind::Shared
            }
            _ => ModelKind::Adaptive,
        }
    }

    pub fn merge_rule(self) -> MergeRule {
        match self {
            StrategyKind::FedLdr => MergeRule::Blend,
            StrategyKind::FedAvg | StrategyKind::FedAvgLdr => MergeRule::Mean,
            StrategyKind::FedMedian | StrategyKind::FedMedianLdr => MergeRule::Median,
            StrategyKind::FedOpt | StrategyKind::FedOptLdr => MergeRule::ServerAdam,
            StrategyKind::LocalOnly => MergeRule::None,
        }
    }

    /// Whether clients exchange whole models with the server.
    pub fn exchanges_full_model(self) -> bool {
        !matches!(self, StrategyKind::FedLdr | StrategyKind::LocalOnly)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == up)
            .ok_or_else(|| {
                Error::Config(format!(
                    "strategy: unknown value `{s}` (expected one of {})",
                    StrategyKind::ALL.map(|k| k.name()).join(", ")
                ))
            })
    }
}

/// Server-side state carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub params: ModelParams,
    pub round: usize,
    /// Moment accumulators for FedOpt.
    pub server_opt: OptimizerState,
    pub server_adam: AdamConfig,
    /// Blend weight given to client embeddings in Fed-LDR aggregation.
    pub rho: f64,
}

impl GlobalState {
    pub fn new(params: ModelParams, server_lr: f64, rho: f64) -> Self {
        GlobalState {
            server_opt: OptimizerState::new(params.blocks()),
            params,
            round: 0,
            server_adam: AdamConfig {
                lr: server_lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            rho,
        }
    }
}

/// What one client sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client: usize,
    /// Nodes owned by the client.
    pub range: Range<usize>,
    /// Node count of the whole graph.
    pub total_nodes: usize,
    /// Either the client's local model (embedding rows for `range` only) or
    /// a full model, depending on the strategy.
    pub params: ModelParams,
    /// Training windows `n_k`.
    pub samples: usize,
}

impl ClientUpdate {
    /// Full-graph model: `globals` with this client's rows and pools
    /// written in.
    pub fn expand(&self, globals: &ModelParams) -> Result<ClientUpdate> {
        let params = if self.params.nodes() == globals.nodes() {
            self.params.clone()
        } else {
            globals.splice(self.range.start, &self.params)?
        };
        Ok(ClientUpdate {
            params,
            ..self.clone()
        })
    }
}

/// Applies the strategy's merge rule. Full-model strategies expand local
/// updates against the current globals first.
pub fn aggregate(strategy: StrategyKind, g: &GlobalState, updates: &[ClientUpdate]) -> Result<GlobalState> {
    let expand = || -> Result<Vec<ClientUpdate>> {
        updates.iter().map(|u| u.expand(&g.params)).collect()
    };
    match strategy.merge_rule() {
        MergeRule::Blend => aggregate_fedldr(g, updates),
        MergeRule::Mean => Ok(GlobalState {
            params: aggregate_fedavg(&expand()?)?,
            round: g.round + 1,
            ..g.clone()
        }),
        MergeRule::Median => Ok(GlobalState {
            params: aggregate_fedmedian(&expand()?)?,
            round: g.round + 1,
            ..g.clone()
        }),
        MergeRule::ServerAdam => aggregate_fedopt(g, &expand()?),
        MergeRule::None => Ok(GlobalState {
            round: g.round + 1,
            ..g.clone()
        }),
    }
}
