//! Kernels and aggregators against naive scalar loops.

mod common;

use common::naive::{self, max_diff};
use common::{rng, uniform};
use fedldr::federation::{aggregate_fedavg, aggregate_fedldr, aggregate_fedmedian, ClientUpdate, GlobalState};
use fedldr::numkit::matmul;
use fedldr::stgcn::{gcn_layer, ldigc_adjacency, nomor_theta, Architecture, ModelKind, ModelParams};
use rand::Rng;

const TOL: f64 = 1e-12;
const INSTANCES: u64 = 50;

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(1);
    for _ in 0..INSTANCES {
        let (n, k, m) = (r.random_range(1..9), r.random_range(1..9), r.random_range(1..9));
        let (a, b) = (uniform(&mut r, &[n, k]), uniform(&mut r, &[k, m]));
        assert!(max_diff(matmul(&a, &b).unwrap().data(), &naive::matmul(&a, &b)) < TOL);
    }
}

#[test]
fn nomor_theta_matches_loop() {
    let mut r = rng(2);
    for _ in 0..INSTANCES {
        let (n, d, c, f) = (r.random_range(1..7), r.random_range(1..5), r.random_range(1..6), r.random_range(1..6));
        let e = uniform(&mut r, &[n, d]);
        let w = uniform(&mut r, &[d, c, f]);
        let theta = nomor_theta(&e, &w).unwrap();
        assert_eq!(theta.shape(), &[n, c, f]);
        assert!(max_diff(theta.data(), &naive::nomor_theta(&e, &w)) < TOL);
    }
}

#[test]
fn gcn_layer_matches_loop() {
    let mut r = rng(3);
    for _ in 0..INSTANCES {
        let (n, c, f, b) = (r.random_range(1..7), r.random_range(1..6), r.random_range(1..6), r.random_range(1..4));
        let emb = uniform(&mut r, &[n, 3]);
        let adj = ldigc_adjacency(&emb).unwrap();
        let x = uniform(&mut r, &[n, b * c]);
        let theta = uniform(&mut r, &[n, c, f]);
        let bias = uniform(&mut r, &[n, f]);
        let z = gcn_layer(&x, &adj, &theta, &bias).unwrap();
        assert!(max_diff(z.data(), &naive::gcn_layer(&x, adj.as_tensor(), &theta, &bias)) < TOL);
    }
}

fn tiny_arch(r: &mut impl Rng) -> Architecture {
    Architecture {
        history: r.random_range(1..4),
        horizon: r.random_range(1..3),
        hidden: r.random_range(1..5),
        layers: r.random_range(1..3),
        embed_dim: r.random_range(1..4),
        pool_dim: r.random_range(1..4),
        ..Architecture::default()
    }
}

fn random_updates(r: &mut rand_chacha::ChaCha8Rng, k: usize, kind: ModelKind) -> Vec<ClientUpdate> {
    let arch = tiny_arch(r);
    let n = r.random_range(1..5);
    (0..k)
        .map(|c| ClientUpdate {
            client: c,
            range: 0..n,
            total_nodes: n,
            params: ModelParams::init(arch, kind, n, r.random()).unwrap(),
            samples: r.random_range(1..50),
        })
        .collect()
}

#[test]
fn fedavg_matches_weighted_loop() {
    let mut r = rng(4);
    for _ in 0..INSTANCES {
        let k = r.random_range(1..6);
        let ups = random_updates(&mut r, k, ModelKind::Adaptive);
        let got = aggregate_fedavg(&ups).unwrap().flatten();
        assert!(max_diff(&got, &naive::fedavg(&ups)) < TOL);
    }
}

#[test]
fn fedmedian_matches_sorting_loop() {
    let mut r = rng(5);
    for _ in 0..INSTANCES {
        let k = r.random_range(1..7);
        let ups = random_updates(&mut r, k, ModelKind::Shared);
        let got = aggregate_fedmedian(&ups).unwrap().flatten();
        assert!(max_diff(&got, &naive::fedmedian(&ups)) < TOL);
    }
}

#[test]
fn fedldr_pools_match_weighted_loop() {
    let mut r = rng(6);
    for _ in 0..INSTANCES {
        let arch = tiny_arch(&mut r);
        let k = r.random_range(1..4);
        let sizes: Vec<usize> = (0..k).map(|_| r.random_range(1..4)).collect();
        let n: usize = sizes.iter().sum();
        let g = GlobalState::new(ModelParams::init(arch, ModelKind::Adaptive, n, r.random()).unwrap(), 0.01, 0.5);
        let mut lo = 0;
        let ups: Vec<ClientUpdate> = sizes
            .iter()
            .enumerate()
            .map(|(c, &s)| {
                let u = ClientUpdate {
                    client: c,
                    range: lo..lo + s,
                    total_nodes: n,
                    params: ModelParams::init(arch, ModelKind::Adaptive, s, r.random()).unwrap(),
                    samples: r.random_range(1..20),
                };
                lo += s;
                u
            })
            .collect();
        let out = aggregate_fedldr(&g, &ups).unwrap();
        let total: f64 = ups.iter().map(|u| u.samples as f64).sum();
        for b in 2..out.params.blocks().len() {
            let got = out.params.blocks()[b].data();
            for j in 0..got.len() {
                let mut want = 0.0;
                for u in &ups {
                    want += u.samples as f64 / total * u.params.blocks()[b].data()[j];
                }
                assert!((got[j] - want).abs() < TOL);
            }
        }
    }
}
