use super::params::{ModelKind, ModelParams};
use crate::error::{Error, Result};
use crate::numkit::{Tape, Tensor, Var};

/// Row-stochastic `N×N` matrix produced by `softmax(relu(E·Eᵀ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveAdjacency(Tensor);

impl AdaptiveAdjacency {
    /// The fixed uniform adjacency `(1/N)·ones` used by the shared-weight model.
    pub fn uniform(nodes: usize) -> Self {
        AdaptiveAdjacency(Tensor::filled(&[nodes, nodes], 1.0 / nodes as f64))
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Tape handles for every parameter block of a model, in block order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub blocks: Vec<Var>,
}

impl ParamVars {
    /// Records `params` on `tape`, as leaves when `trainable`.
    pub fn register(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Self {
        let blocks = params
            .blocks()
            .iter()
            .map(|b| {
                if trainable {
                    tape.leaf(b.clone())
                } else {
                    tape.constant(b.clone())
                }
            })
            .collect();
        ParamVars { blocks }
    }
}

pub fn ldigc_adjacency_on_tape(tape: &mut Tape, emb: Var) -> Result<Var> {
    let et = tape.transpose(emb)?;
    let logits = tape.matmul(emb, et)?;
    let pos = tape.relu(logits);
    tape.row_softmax(pos)
}

/// `Θ[i,c,f] = Σ_k E[i,k]·W[k,c,f]` as one matmul over the flattened pool.
pub fn nomor_theta_on_tape(tape: &mut Tape, emb: Var, pool: Var) -> Result<Var> {
    let ws = tape.value(pool).shape().to_vec();
    let es = tape.value(emb).shape().to_vec();
    if ws.len() != 3 || es.len() != 2 || es[1] != ws[0] {
        return Err(Error::dim("nomor_theta", &es, &ws));
    }
    let flat = tape.reshape(pool, &[ws[0], ws[1] * ws[2]])?;
    let prod = tape.matmul(emb, flat)?;
    tape.reshape(prod, &[es[0], ws[1], ws[2]])
}

pub fn nomor_bias_on_tape(tape: &mut Tape, emb: Var, pool: Var) -> Result<Var> {
    let (es, bs) = (tape.value(emb).shape(), tape.value(pool).shape());
    if bs.len() != 2 || es[1] != bs[0] {
        return Err(Error::dim("nomor_bias", es, bs));
    }
    tape.matmul(emb, pool)
}

/// `Z = node_affine((I + Â)·X, Θ, b)`; `X` may hold a batch side by side.
pub fn gcn_layer_on_tape(tape: &mut Tape, x: Var, adj: Var, theta: Var, bias: Var) -> Result<Var> {
    let mixed = tape.matmul(adj, x)?;
    let h = tape.add(x, mixed)?;
    tape.node_affine(h, theta, bias)
}

/// Full forward pass on a tape.
///
/// `x` is `N×(B·T·F_in)` holding `B` windows side by side; the result is
/// `N×(B·Δ·F_out)`. The adjacency is built once and shared by every layer.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &ParamVars,
    x: Var,
) -> Result<Var> {
    let n = params.nodes();
    let xs = tape.value(x).shape().to_vec();
    let width = params.arch().input_width();
    if xs.len() != 2 || xs[0] != n || xs[1] % width != 0 {
        return Err(Error::dim("model_forward", &xs, &[n, width]));
    }
    let (adj, emb_g) = match params.kind() {
        ModelKind::Adaptive => (
            ldigc_adjacency_on_tape(tape, vars.blocks[0])?,
            vars.blocks[1],
        ),
        ModelKind::Shared => (
            tape.constant(AdaptiveAdjacency::uniform(n).into_tensor()),
            tape.constant(Tensor::filled(&[n, 1], 1.0)),
        ),
    };
    let e = params.embedding_blocks();
    let layers = params.arch().layers;
    let mut h = x;
    for l in 0..layers {
        let theta = nomor_theta_on_tape(tape, emb_g, vars.blocks[e + 2 * l])?;
        let bias = nomor_bias_on_tape(tape, emb_g, vars.blocks[e + 2 * l + 1])?;
        h = gcn_layer_on_tape(tape, h, adj, theta, bias)?;
        if l + 1 < layers {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

pub fn ldigc_adjacency(emb: &Tensor) -> Result<AdaptiveAdjacency> {
    let mut tape = Tape::new();
    let e = tape.constant(emb.clone());
    let a = ldigc_adjacency_on_tape(&mut tape, e)?;
    Ok(AdaptiveAdjacency(tape.value(a).clone()))
}

pub fn nomor_theta(emb: &Tensor, pool: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (e, w) = (tape.constant(emb.clone()), tape.constant(pool.clone()));
    let t = nomor_theta_on_tape(&mut tape, e, w)?;
    Ok(tape.value(t).clone())
}

pub fn nomor_bias(emb: &Tensor, pool: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (e, b) = (tape.constant(emb.clone()), tape.constant(pool.clone()));
    let t = nomor_bias_on_tape(&mut tape, e, b)?;
    Ok(tape.value(t).clone())
}

pub fn gcn_layer(x: &Tensor, adj: &AdaptiveAdjacency, theta: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let av = tape.constant(adj.as_tensor().clone());
    let tv = tape.constant(theta.clone());
    let bv = tape.constant(bias.clone());
    let z = gcn_layer_on_tape(&mut tape, xv, av, tv, bv)?;
    Ok(tape.value(z).clone())
}

/// Inference-only forward pass.
pub fn model_forward(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params, false);
    let xv = tape.constant(x.clone());
    let out = forward_on_tape(&mut tape, params, &vars, xv)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::super::params::Architecture;
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zero_embedding_gives_uniform_rows() {
        let a = ldigc_adjacency(&Tensor::zeros(&[3, 2])).unwrap();
        for v in a.as_tensor().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_node_adjacency_is_one() {
        let a = ldigc_adjacency(&m(&[&[0.3, -4.0]])).unwrap();
        assert_eq!(a.as_tensor().data(), &[1.0]);
    }

    #[test]
    fn identity_embedding_adjacency() {
        let a = ldigc_adjacency(&Tensor::identity(2)).unwrap();
        let t = a.as_tensor();
        let (hi, lo) = (0.731_058_578_630_004_9, 0.268_941_421_369_995_1);
        for (v, want) in t.data().iter().zip([hi, lo, lo, hi]) {
            assert!((v - want).abs() < 1e-5);
        }
    }

    #[test]
    fn theta_examples() {
        let w = Tensor::new(&[2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        let t = nomor_theta(&Tensor::identity(2), &w).unwrap();
        assert_eq!(t, w);
        let z = nomor_theta(&Tensor::zeros(&[3, 2]), &w).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let w1 = Tensor::new(&[2, 1, 1], vec![2.0, 3.0]).unwrap();
        let t1 = nomor_theta(&m(&[&[1.0, 1.0]]), &w1).unwrap();
        assert_eq!(t1.shape(), &[1, 1, 1]);
        assert_eq!(t1.data(), &[5.0]);
        assert!(matches!(
            nomor_theta(&Tensor::zeros(&[2, 3]), &w),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn bias_examples() {
        let b = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(nomor_bias(&Tensor::identity(2), &b).unwrap(), b);
        let z = nomor_bias(&m(&[&[1.0, 2.0]]), &Tensor::zeros(&[2, 2])).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0]);
        assert!(nomor_bias(&Tensor::zeros(&[2, 3]), &b).is_err());
    }

    #[test]
    fn scalar_layer_expansion() {
        let z = gcn_layer(
            &m(&[&[1.0]]),
            &AdaptiveAdjacency(m(&[&[1.0]])),
            &Tensor::new(&[1, 1, 1], vec![0.5]).unwrap(),
            &m(&[&[1.0]]),
        )
        .unwrap();
        assert_eq!(z.data(), &[2.0]);
    }

    #[test]
    fn zero_input_gives_bias() {
        let bias = m(&[&[0.25, -1.0], &[3.0, 0.5]]);
        let theta = Tensor::filled(&[2, 3, 2], 0.7);
        let z = gcn_layer(&Tensor::zeros(&[2, 3]), &AdaptiveAdjacency::uniform(2), &theta, &bias)
            .unwrap();
        assert_eq!(z, bias);
    }

    #[test]
    fn zero_pools_give_zero_output() {
        let arch = Architecture {
            history: 3,
            horizon: 2,
            hidden: 4,
            embed_dim: 2,
            pool_dim: 2,
            ..Architecture::default()
        };
        let p = ModelParams::init(arch, ModelKind::Adaptive, 4, 9).unwrap();
        let e = p.embedding_blocks();
        let mut blocks = p.blocks().to_vec();
        for b in blocks.iter_mut().skip(e) {
            *b = Tensor::zeros(b.shape());
        }
        let p = ModelParams::from_blocks(arch, ModelKind::Adaptive, 4, blocks).unwrap();
        let x = Tensor::filled(&[4, 3], 1.5);
        let out = model_forward(&p, &x).unwrap();
        assert_eq!(out.shape(), &[4, 2]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let p = ModelParams::init(Architecture::default(), ModelKind::Shared, 3, 1).unwrap();
        assert!(matches!(
            model_forward(&p, &Tensor::zeros(&[3, 5])),
            Err(Error::Dimension { .. })
        ));
    }
}
