//! Federated training of graph-convolutional traffic forecasters.
//!
//! Clients own disjoint groups of sensors. Each trains a forecaster whose
//! adjacency is learned from node embeddings and whose per-node weights are
//! generated from a shared pool; a server merges the results round by round.
//! Plain FedAvg, FedMedian and FedOpt baselines run through the same
//! simulator for comparison.
//!
//! Module map:
//!
//! * [`numkit`]: dense tensors and a reverse-mode gradient tape.
//! * [`stgcn`]: the forecaster and its parameter layout.
//! * [`trainer`]: local optimization on one client.
//! * [`federation`]: round protocol and aggregation strategies.
//! * [`datakit`]: CSV ingestion, synthetic data, windows, splits.
//! * [`metrics`]: MAE, RMSE, MAPE and Pearson correlation.
//! * [`harness`]: configuration files, experiment runs, sweeps, reports.

pub mod datakit;
pub mod error;
pub mod federation;
pub mod harness;
pub mod metrics;
pub mod numkit;
pub mod seed;
pub mod stgcn;
pub mod trainer;

pub use error::{Error, Result};
