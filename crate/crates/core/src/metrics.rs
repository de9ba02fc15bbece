//! Forecast error metrics over flattened (node, horizon, sample) entries.
//! Callers pass denormalized values.

use crate::error::{Error, Result};

/// Default threshold below which targets are excluded from MAPE.
pub const MAPE_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub corr: f64,
    /// Entries dropped from MAPE because `|target| < ε`.
    pub mape_masked: usize,
}

impl MetricReport {
    /// All four metrics with the default MAPE threshold.
    pub fn compute(pred: &[f64], target: &[f64]) -> Result<Self> {
        let (mape, mape_masked) = mape_masked(pred, target, MAPE_EPSILON)?;
        Ok(MetricReport {
            mae: mae(pred, target)?,
            rmse: rmse(pred, target)?,
            mape,
            corr: pearson_corr(pred, target)?,
            mape_masked,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.mae.is_finite() && self.rmse.is_finite() && self.mape.is_finite() && self.corr.is_finite()
    }
}

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::dim("metric", &[pred.len()], &[target.len()]));
    }
    if pred.is_empty() {
        return Err(Error::Contract("metric over empty input".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    let total: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / pred.len() as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    let total: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((total / pred.len() as f64).sqrt())
}

pub fn mape(pred: &[f64], target: &[f64], eps: f64) -> Result<f64> {
    mape_masked(pred, target, eps).map(|(v, _)| v)
}

/// MAPE together with the number of masked entries.
pub fn mape_masked(pred: &[f64], target: &[f64], eps: f64) -> Result<(f64, usize)> {
    check(pred, target)?;
    let mut total = 0.0;
    let mut kept = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if t.abs() >= eps {
            total += (p - t).abs() / t.abs();
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::Metric(format!(
            "every target is below the MAPE threshold {eps}"
        )));
    }
    Ok((total / kept as f64, pred.len() - kept))
}

pub fn pearson_corr(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let (dp, dt) = (p - mp, t - mt);
        cov += dp * dt;
        vp += dp * dp;
        vt += dt * dt;
    }
    if vp == 0.0 || vt == 0.0 {
        return Err(Error::Metric("correlation undefined for zero variance".into()));
    }
    Ok((cov / (vp.sqrt() * vt.sqrt())).clamp(-1.0, 1.0))
}
