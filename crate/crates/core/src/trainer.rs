//! Client-side optimization.
//!
//! The local objective is the mean absolute error of the forecasts plus a
//! proximal term `(μ/2)·(‖E^A − E^A₀‖² + ‖E^G − E^G₀‖²)` that keeps the
//! embeddings near the ones the server broadcast. Pools are not penalized.
//! Updates use Adam after clipping the global gradient norm.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datakit::WindowSample;
use crate::error::{Error, Result};
use crate::numkit::{Tape, Tensor, Var};
use crate::seed::{self, stream};
use crate::stgcn::{forward_on_tape, ModelParams, ParamVars};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Proximal coefficient `μ`.
    pub mu: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip threshold applied before every step.
    pub clip_norm: f64,
    pub seed: u64,
    /// Optional cap on optimizer steps per call; `Some(0)` trains nothing.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.003,
            mu: 0.01,
            epochs: 2,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("eps", self.eps),
            ("clip_norm", self.clip_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be ≥ 0, got {}", self.mu)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("local_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam moment accumulators, one pair per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(blocks: &[Tensor]) -> Self {
        OptimizerState {
            m: blocks.iter().map(|b| Tensor::zeros(b.shape())).collect(),
            v: blocks.iter().map(|b| Tensor::zeros(b.shape())).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(
            "adam_step",
            &[params.len(), state.m.len()],
            &[grads.len()],
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient in parameter block {i}"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((pv, &gv), (mv, vv)) in it {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

pub fn mae_loss_on_tape(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let a = tape.abs(diff);
    Ok(tape.mean(a))
}

/// Proximal penalty on the embedding blocks; `None` for models without
/// embeddings.
pub fn proximal_on_tape(
    tape: &mut Tape,
    vars: &ParamVars,
    anchor: &ModelParams,
    mu: f64,
) -> Result<Option<Var>> {
    let e = anchor.embedding_blocks();
    if e == 0 {
        return Ok(None);
    }
    let mut total: Option<Var> = None;
    for (k, block) in anchor.blocks().iter().take(e).enumerate() {
        let a = tape.constant(block.clone());
        let d = tape.sub(vars.blocks[k], a)?;
        let sq = tape.sum_squares(d);
        total = Some(match total {
            Some(t) => tape.add(t, sq)?,
            None => sq,
        });
    }
    Ok(total.map(|t| tape.scale(t, mu / 2.0)))
}

pub fn mae_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let (p, t) = (tape.constant(pred.clone()), tape.constant(target.clone()));
    let l = mae_loss_on_tape(&mut tape, p, t)?;
    Ok(tape.value(l).data()[0])
}

pub fn proximal_penalty(local: &ModelParams, global: &ModelParams, mu: f64) -> Result<f64> {
    if !local.same_layout(global) {
        return Err(Error::Contract(
            "proximal penalty needs identical architectures".into(),
        ));
    }
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, local, false);
    Ok(proximal_on_tape(&mut tape, &vars, global, mu)?
        .map_or(0.0, |v| tape.value(v).data()[0]))
}

/// Places a batch of windows side by side: `N×(B·T·F)` inputs and
/// `N×(B·Δ·F)` targets.
pub fn stack_batch(windows: &[&WindowSample]) -> Result<(Tensor, Tensor)> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Contract("empty batch".into()))?;
    let n = first.input.rows();
    let (ci, ct) = (first.input.cols(), first.target.cols());
    let b = windows.len();
    let mut x = Vec::with_capacity(n * b * ci);
    let mut y = Vec::with_capacity(n * b * ct);
    for i in 0..n {
        for w in windows {
            if w.input.shape() != first.input.shape() || w.target.shape() != first.target.shape() {
                return Err(Error::dim("stack_batch", w.input.shape(), first.input.shape()));
            }
            x.extend_from_slice(w.input.row(i));
            y.extend_from_slice(w.target.row(i));
        }
    }
    Ok((Tensor::new(&[n, b * ci], x)?, Tensor::new(&[n, b * ct], y)?))
}

/// Records the local objective for one batch. Returns `(total, data_loss)`.
fn objective_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &ParamVars,
    anchor: &ModelParams,
    mu: f64,
    x: &Tensor,
    y: &Tensor,
) -> Result<(Var, Var)> {
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let pred = forward_on_tape(tape, params, vars, xv)?;
    let data = mae_loss_on_tape(tape, pred, yv)?;
    let total = match proximal_on_tape(tape, vars, anchor, mu)? {
        Some(p) if mu > 0.0 => tape.add(data, p)?,
        _ => data,
    };
    Ok((total, data))
}

/// Value of the local objective (forecast MAE plus proximal term).
pub fn objective(
    params: &ModelParams,
    anchor: &ModelParams,
    mu: f64,
    sample: &WindowSample,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params, false);
    let (total, _) = objective_on_tape(&mut tape, params, &vars, anchor, mu, &sample.input, &sample.target)?;
    Ok(tape.value(total).data()[0])
}

/// Analytic gradient of [`objective`], one tensor per parameter block.
pub fn objective_gradient(
    params: &ModelParams,
    anchor: &ModelParams,
    mu: f64,
    x: &Tensor,
    y: &Tensor,
) -> Result<(f64, f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params, true);
    let (total, data) = objective_on_tape(&mut tape, params, &vars, anchor, mu, x, y)?;
    let mut grads = tape.backward(total)?;
    let g = vars.blocks.iter().map(|&v| grads.take(v)).collect();
    Ok((tape.value(total).data()[0], tape.value(data).data()[0], g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalStats {
    /// Mean forecast MAE over each epoch's batches, in normalized units.
    pub epoch_losses: Vec<f64>,
    /// Training windows `n_k`.
    pub samples: usize,
    pub steps: usize,
    pub duration: Duration,
}

impl LocalStats {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Runs `cfg.epochs` epochs of shuffled mini-batch Adam starting from
/// `globals`, penalizing embedding drift away from `globals`.
pub fn local_train(
    windows: &[WindowSample],
    globals: &ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, LocalStats)> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Contract("local training needs at least one window".into()));
    }
    let started = Instant::now();
    let mut params = globals.clone();
    let mut state = OptimizerState::new(params.blocks());
    let adam = cfg.adam();
    let budget = cfg.max_steps.unwrap_or(usize::MAX);
    let mut steps = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..windows.len()).collect();

    'epochs: for epoch in 0..cfg.epochs {
        if steps >= budget {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[stream::EPOCH, epoch as u64]));
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if steps >= budget {
                break;
            }
            let batch: Vec<&WindowSample> = chunk.iter().map(|&k| &windows[k]).collect();
            let (x, y) = stack_batch(&batch)?;
            let (total, data, mut grads) = objective_gradient(&params, globals, cfg.mu, &x, &y)?;
            if !total.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss in epoch {epoch}"
                )));
            }
            if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient for {} in epoch {epoch}",
                    params.block_label(i)
                )));
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam_step(params.blocks_mut(), &grads, &mut state, &adam)?;
            steps += 1;
            weighted += data * batch.len() as f64;
            seen += batch.len();
            if !params.is_finite() {
                return Err(Error::Training(format!(
                    "parameters diverged in epoch {epoch}"
                )));
            }
        }
        if seen == 0 {
            break 'epochs;
        }
        epoch_losses.push(weighted / seen as f64);
    }

    Ok((
        params,
        LocalStats {
            epoch_losses,
            samples: windows.len(),
            steps,
            duration: started.elapsed(),
        },
    ))
}

/// Forecast MAE of `params` over `windows`, in the windows' units.
pub fn dataset_mae(params: &ModelParams, windows: &[WindowSample]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Contract("no windows to score".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(64) {
        let batch: Vec<&WindowSample> = chunk.iter().collect();
        let (x, y) = stack_batch(&batch)?;
        let pred = crate::stgcn::model_forward(params, &x)?;
        total += pred
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>();
        count += y.numel();
    }
    Ok(total / count as f64)
}

/// Largest relative disagreement between the analytic gradient of the local
/// objective and central differences with step `h`, over every scalar
/// parameter. Relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(
    params: &ModelParams,
    anchor: &ModelParams,
    mu: f64,
    sample: &WindowSample,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step must be positive, got {h}")));
    }
    let (_, _, analytic) = objective_gradient(params, anchor, mu, &sample.input, &sample.target)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for b in 0..params.blocks().len() {
        for k in 0..params.blocks()[b].numel() {
            let orig = params.blocks()[b].data()[k];
            probe.blocks_mut()[b].data_mut()[k] = orig + h;
            let up = objective(&probe, anchor, mu, sample)?;
            probe.blocks_mut()[b].data_mut()[k] = orig - h;
            let down = objective(&probe, anchor, mu, sample)?;
            probe.blocks_mut()[b].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[b].data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stgcn::{Architecture, ModelKind};

    fn scalar_adam(x0: f64, lr: f64, steps: usize, grad: impl Fn(f64) -> f64) -> f64 {
        let mut p = vec![Tensor::scalar(x0)];
        let mut st = OptimizerState::new(&p);
        let cfg = AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        for _ in 0..steps {
            let g = vec![Tensor::scalar(grad(p[0].data()[0]))];
            adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        }
        p[0].data()[0]
    }

    #[test]
    fn mae_loss_examples() {
        let a = Tensor::from_rows(&[vec![1.0, 3.0]]).unwrap();
        assert_eq!(mae_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(mae_loss(&Tensor::scalar(0.0), &Tensor::scalar(2.0)).unwrap(), 2.0);
        let t = Tensor::from_rows(&[vec![2.0, 1.0]]).unwrap();
        assert_eq!(mae_loss(&a, &t).unwrap(), 1.5);
        assert!(matches!(
            mae_loss(&a, &Tensor::scalar(1.0)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn adam_first_step_and_fixed_point() {
        let x = scalar_adam(0.0, 0.1, 1, |_| 1.0);
        assert!((x + 0.1).abs() < 1e-8, "{x}");

        let mut p = vec![Tensor::filled(&[2, 2], 0.7)];
        let before = p.clone();
        let mut st = OptimizerState::new(&p);
        let cfg = TrainConfig::default().adam();
        adam_step(&mut p, &[Tensor::zeros(&[2, 2])], &mut st, &cfg).unwrap();
        assert_eq!(p, before);
        assert!(st.m[0].data().iter().all(|&v| v == 0.0));
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_200_steps_on_quadratic() {
        // lr 0.1: Adam's per-step move is about lr, so 200 steps reach x = 3
        let x = scalar_adam(0.0, 0.1, 200, |x| 2.0 * (x - 3.0));
        assert!((x - 3.0).abs() < 0.1, "{x}");
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = vec![Tensor::scalar(0.0), Tensor::scalar(1.0)];
        let mut st = OptimizerState::new(&p);
        let g = vec![Tensor::scalar(0.0), Tensor::scalar(f64::NAN)];
        let err = adam_step(&mut p, &g, &mut st, &TrainConfig::default().adam()).unwrap_err();
        assert!(err.to_string().contains("block 1"), "{err}");
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::scalar(3.0), Tensor::scalar(4.0)];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        let mut small = vec![Tensor::scalar(0.3)];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data()[0], 0.3);
    }

    fn small_arch() -> Architecture {
        Architecture {
            history: 3,
            horizon: 2,
            hidden: 4,
            embed_dim: 2,
            pool_dim: 2,
            ..Architecture::default()
        }
    }

    #[test]
    fn proximal_examples() {
        let g = ModelParams::init(small_arch(), ModelKind::Adaptive, 3, 1).unwrap();
        assert_eq!(proximal_penalty(&g, &g, 5.0).unwrap(), 0.0);
        let mut l = g.clone();
        l.blocks_mut()[1].data_mut()[4] += 3.0;
        assert_eq!(proximal_penalty(&l, &g, 0.0).unwrap(), 0.0);
        assert!((proximal_penalty(&l, &g, 2.0).unwrap() - 9.0).abs() < 1e-12);
        // pools do not count
        let mut pools = g.clone();
        pools.blocks_mut()[2].data_mut()[0] += 1.0;
        assert_eq!(proximal_penalty(&pools, &g, 2.0).unwrap(), 0.0);
        let other = ModelParams::init(small_arch(), ModelKind::Adaptive, 4, 1).unwrap();
        assert!(matches!(proximal_penalty(&other, &g, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn stacking_places_windows_side_by_side() {
        let w = |v: f64| WindowSample {
            input: Tensor::filled(&[2, 3], v),
            target: Tensor::filled(&[2, 1], -v),
            origin: 0,
        };
        let (a, b) = (w(1.0), w(2.0));
        let (x, y) = stack_batch(&[&a, &b]).unwrap();
        assert_eq!(x.shape(), &[2, 6]);
        assert_eq!(x.row(1), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(y.row(0), &[-1.0, -2.0]);
    }

    #[test]
    fn empty_dataset_is_a_contract_error() {
        let g = ModelParams::init(small_arch(), ModelKind::Adaptive, 3, 1).unwrap();
        assert!(matches!(
            local_train(&[], &g, &TrainConfig::default()),
            Err(Error::Contract(_))
        ));
    }
}
