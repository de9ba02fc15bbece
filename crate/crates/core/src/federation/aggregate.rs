//! Server-side aggregation rules.
//!
//! Every rule first sorts updates by client id, so results do not depend
//! on the order in which client tasks finished.

use super::{ClientUpdate, GlobalState};
use crate::error::{Error, Result};
use crate::stgcn::ModelParams;
use crate::trainer::adam_step;

fn sorted(updates: &[ClientUpdate]) -> Vec<&ClientUpdate> {
    let mut v: Vec<&ClientUpdate> = updates.iter().collect();
    v.sort_by_key(|u| u.client);
    v
}

fn sample_weights(updates: &[&ClientUpdate]) -> Result<Vec<f64>> {
    if updates.iter().any(|u| u.samples == 0) {
        return Err(Error::Contract("client update with zero samples".into()));
    }
    let total: f64 = updates.iter().map(|u| u.samples as f64).sum();
    Ok(updates.iter().map(|u| u.samples as f64 / total).collect())
}

/// `reference + Σ_k w_k·(x_k − reference)`: the weighted mean written
/// relative to a reference point, so identical inputs reproduce it exactly.
fn weighted_mean_about(reference: &[f64], values: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let mut out = reference.to_vec();
    for (j, o) in out.iter_mut().enumerate() {
        let r = reference[j];
        let shift: f64 = values.iter().zip(weights).map(|(x, w)| w * (x[j] - r)).sum();
        *o = r + shift;
    }
    out
}

fn full_models<'a>(updates: &[&'a ClientUpdate]) -> Result<Vec<&'a ModelParams>> {
    let first = &updates
        .first()
        .ok_or_else(|| Error::Contract("aggregation needs at least one update".into()))?
        .params;
    for u in updates {
        if !u.params.same_layout(first) {
            return Err(Error::Contract(format!(
                "client {} sent a model whose layout differs from client {}",
                u.client, updates[0].client
            )));
        }
    }
    Ok(updates.iter().map(|u| &u.params).collect())
}

/// Checks that the updates' node ranges tile `0..nodes` and returns them
/// sorted by range start.
fn tiling<'a>(updates: &[&'a ClientUpdate], nodes: usize) -> Result<Vec<&'a ClientUpdate>> {
    let mut by_start = updates.to_vec();
    by_start.sort_by_key(|u| u.range.start);
    let mut next = 0;
    for u in &by_start {
        if u.range.start > next {
            return Err(Error::Contract(format!(
                "no client update covers nodes {next}..{}",
                u.range.start
            )));
        }
        if u.range.start < next {
            return Err(Error::Contract(format!(
                "client {} overlaps nodes {}..{next}",
                u.client, u.range.start
            )));
        }
        next = u.range.end;
    }
    if next != nodes {
        return Err(Error::Contract(format!(
            "no client update covers nodes {next}..{nodes}"
        )));
    }
    Ok(by_start)
}

/// Fed-LDR aggregation.
///
/// Embedding rows owned by client `k` become `old + ρ·(local − old)`; the
/// weight and bias pools become the sample-weighted mean of the clients'
/// pools.
pub fn aggregate_fedldr(g: &GlobalState, updates: &[ClientUpdate]) -> Result<GlobalState> {
    let updates = sorted(updates);
    let old = &g.params;
    let tiles = tiling(&updates, old.nodes())?;
    let mut next = old.clone();
    let e = old.embedding_blocks();
    for u in &tiles {
        if u.params.arch() != old.arch()
            || u.params.kind() != old.kind()
            || u.params.nodes() != u.range.len()
        {
            return Err(Error::Contract(format!(
                "client {} update does not match the global layout",
                u.client
            )));
        }
        for b in 0..e {
            let cols = old.blocks()[b].cols();
            let base = u.range.start * cols;
            let dst = next.blocks_mut()[b].data_mut();
            for (k, &local) in u.params.blocks()[b].data().iter().enumerate() {
                let o = dst[base + k];
                dst[base + k] = o + g.rho * (local - o);
            }
        }
    }
    let weights = sample_weights(&updates)?;
    for b in e..old.blocks().len() {
        let values: Vec<Vec<f64>> = updates
            .iter()
            .map(|u| u.params.blocks()[b].data().to_vec())
            .collect();
        let mean = weighted_mean_about(old.blocks()[b].data(), &values, &weights);
        next.blocks_mut()[b].data_mut().copy_from_slice(&mean);
    }
    Ok(GlobalState {
        params: next,
        round: g.round + 1,
        ..g.clone()
    })
}

/// Sample-weighted mean of full models.
pub fn aggregate_fedavg(updates: &[ClientUpdate]) -> Result<ModelParams> {
    let updates = sorted(updates);
    let models = full_models(&updates)?;
    let weights = sample_weights(&updates)?;
    let flats: Vec<Vec<f64>> = models.iter().map(|m| m.flatten()).collect();
    let mean = weighted_mean_about(&flats[0], &flats, &weights);
    models[0].with_flat(&mean)
}

/// Median of a slice; the mean of the two middle values for even counts.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        let (a, b) = (values[n / 2 - 1], values[n / 2]);
        a + (b - a) / 2.0
    }
}

/// Coordinate-wise median of full models (unweighted).
pub fn aggregate_fedmedian(updates: &[ClientUpdate]) -> Result<ModelParams> {
    let updates = sorted(updates);
    let models = full_models(&updates)?;
    let flats: Vec<Vec<f64>> = models.iter().map(|m| m.flatten()).collect();
    let mut column = vec![0.0; flats.len()];
    let out: Vec<f64> = (0..flats[0].len())
        .map(|j| {
            for (c, f) in column.iter_mut().zip(&flats) {
                *c = f[j];
            }
            median(&mut column)
        })
        .collect();
    models[0].with_flat(&out)
}

/// Server-side Adam step on the pseudo-gradient `globals − weighted mean`.
pub fn aggregate_fedopt(g: &GlobalState, updates: &[ClientUpdate]) -> Result<GlobalState> {
    let updates = sorted(updates);
    let models = full_models(&updates)?;
    if !models[0].same_layout(&g.params) {
        return Err(Error::Contract("FedOpt updates do not match the global layout".into()));
    }
    let weights = sample_weights(&updates)?;
    let reference = g.params.flatten();
    let flats: Vec<Vec<f64>> = models.iter().map(|m| m.flatten()).collect();
    let mean = weighted_mean_about(&reference, &flats, &weights);
    let delta: Vec<f64> = reference.iter().zip(&mean).map(|(r, m)| r - m).collect();
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(Error::Aggregation("non-finite FedOpt pseudo-gradient".into()));
    }
    let pseudo = g.params.with_flat(&delta)?;
    let mut next = g.clone();
    adam_step(
        next.params.blocks_mut(),
        pseudo.blocks(),
        &mut next.server_opt,
        &g.server_adam,
    )
    .map_err(|e| Error::Aggregation(e.to_string()))?;
    next.round += 1;
    Ok(next)
}
