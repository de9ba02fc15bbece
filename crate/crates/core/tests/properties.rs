//! Randomized invariants.

mod common;

use common::{rng, uniform};
use fedldr::datakit::{
    generate_synthetic, make_windows, parse_csv, partition_nodes, split_temporal, to_csv_string, NormStats,
    SyntheticSpec, TimeSeriesDataset,
};
use fedldr::federation::{
    aggregate, aggregate_fedavg, aggregate_fedldr, aggregate_fedmedian, aggregate_fedopt, ClientUpdate, GlobalState,
    StrategyKind,
};
use fedldr::metrics::{mae, rmse, MetricReport};
use fedldr::numkit::{matmul, row_softmax, Tensor};
use fedldr::stgcn::{ldigc_adjacency, model_forward, nomor_theta, Architecture, ModelKind, ModelParams};
use fedldr::trainer::proximal_penalty;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn arch(r: &mut impl Rng) -> Architecture {
    Architecture {
        history: r.random_range(1..4),
        horizon: r.random_range(1..3),
        hidden: r.random_range(1..6),
        layers: r.random_range(1..4),
        embed_dim: r.random_range(1..5),
        pool_dim: r.random_range(1..5),
        ..Architecture::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), n in 1usize..9, m in 1usize..9, scale in 0.1f64..50.0) {
        let mut r = rng(seed);
        let x = fedldr::numkit::scale(&uniform(&mut r, &[n, m]), scale);
        let s = row_softmax(&x).unwrap();
        for i in 0..n {
            let row = s.row(i);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn kernels_are_pure(seed in any::<u64>(), n in 1usize..6, m in 1usize..6) {
        let mut r = rng(seed);
        let (a, b) = (uniform(&mut r, &[n, m]), uniform(&mut r, &[m, n]));
        prop_assert_eq!(matmul(&a, &b).unwrap(), matmul(&a, &b).unwrap());
        prop_assert_eq!(row_softmax(&a).unwrap(), row_softmax(&a).unwrap());
        let p = ModelParams::init(arch(&mut r), ModelKind::Adaptive, n, seed).unwrap();
        let x = uniform(&mut r, &[n, p.arch().input_width() * 2]);
        prop_assert_eq!(model_forward(&p, &x).unwrap(), model_forward(&p, &x).unwrap());
    }

    #[test]
    fn adjacency_is_row_stochastic(seed in any::<u64>(), n in 1usize..33, d in 1usize..8, spread in 0.01f64..10.0) {
        let mut r = rng(seed);
        let e = fedldr::numkit::scale(&uniform(&mut r, &[n, d]), spread);
        let a = ldigc_adjacency(&e).unwrap();
        let a = a.as_tensor();
        for i in 0..n {
            prop_assert!(a.row(i).iter().all(|&v| v >= 0.0));
            prop_assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn forward_is_permutation_equivariant(seed in any::<u64>(), n in 1usize..10, batch in 1usize..3) {
        let mut r = rng(seed);
        let p = ModelParams::init(arch(&mut r), ModelKind::Adaptive, n, seed).unwrap();
        let x = uniform(&mut r, &[n, p.arch().input_width() * batch]);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let px = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let out = model_forward(&p, &x).unwrap();
        let pout = model_forward(&p.permute_nodes(&perm).unwrap(), &px).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for (a, b) in pout.row(i).iter().zip(out.row(src)) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn identical_pool_embeddings_share_weights(seed in any::<u64>(), n in 2usize..8, d in 1usize..5) {
        let mut r = rng(seed);
        let row = uniform(&mut r, &[1, d]);
        let e = Tensor::from_rows(&vec![row.row(0).to_vec(); n]).unwrap();
        let w = uniform(&mut r, &[d, 3, 2]);
        let theta = nomor_theta(&e, &w).unwrap();
        let first = &theta.data()[..6];
        for i in 1..n {
            let other = &theta.data()[i * 6..(i + 1) * 6];
            prop_assert!(first.iter().zip(other).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn proximal_is_nonnegative_and_zero_only_at_anchor(seed in any::<u64>(), n in 1usize..6, mu in 0.001f64..10.0) {
        let mut r = rng(seed);
        let a = arch(&mut r);
        let g = ModelParams::init(a, ModelKind::Adaptive, n, seed).unwrap();
        let l = ModelParams::init(a, ModelKind::Adaptive, n, seed ^ 1).unwrap();
        prop_assert!(proximal_penalty(&l, &g, mu).unwrap() > 0.0);
        prop_assert!(proximal_penalty(&g, &g, mu).unwrap().abs() <= 1e-15);
        let mut pools_only = g.clone();
        let last = pools_only.blocks().len() - 1;
        pools_only.blocks_mut()[last].data_mut()[0] += 1.0;
        prop_assert!(proximal_penalty(&pools_only, &g, mu).unwrap().abs() <= 1e-15);
    }

    #[test]
    fn rmse_dominates_mae_and_metrics_ignore_order(seed in any::<u64>(), len in 1usize..60) {
        let mut r = rng(seed);
        let p: Vec<f64> = (0..len).map(|_| r.random_range(-5.0..5.0)).collect();
        let t: Vec<f64> = (0..len).map(|_| r.random_range(1.0..10.0)).collect();
        prop_assert!(rmse(&p, &t).unwrap() >= mae(&p, &t).unwrap());
        let mut idx: Vec<usize> = (0..len).collect();
        idx.shuffle(&mut r);
        let (sp, st): (Vec<f64>, Vec<f64>) = idx.iter().map(|&i| (p[i], t[i])).unzip();
        let a = (mae(&p, &t).unwrap(), rmse(&p, &t).unwrap());
        let b = (mae(&sp, &st).unwrap(), rmse(&sp, &st).unwrap());
        prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        if len > 1 {
            let ra = MetricReport::compute(&p, &t);
            let rb = MetricReport::compute(&sp, &st);
            if let (Ok(ra), Ok(rb)) = (ra, rb) {
                prop_assert!((ra.mape - rb.mape).abs() < 1e-12);
                prop_assert!((ra.corr - rb.corr).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_stats_leave_metrics_unchanged(seed in any::<u64>(), len in 2usize..40) {
        let mut r = rng(seed);
        let p: Vec<f64> = (0..len).map(|_| r.random_range(-5.0..5.0)).collect();
        let t: Vec<f64> = (0..len).map(|_| r.random_range(1.0..10.0)).collect();
        let id = NormStats::identity(1);
        let dp: Vec<f64> = p.iter().map(|&v| id.denormalize_value(v, 0)).collect();
        let dt: Vec<f64> = t.iter().map(|&v| id.denormalize_value(v, 0)).collect();
        let (a, b) = (MetricReport::compute(&p, &t).unwrap(), MetricReport::compute(&dp, &dt).unwrap());
        prop_assert!((a.mae - b.mae).abs() < 1e-12 && (a.rmse - b.rmse).abs() < 1e-12);
        prop_assert!((a.mape - b.mape).abs() < 1e-12 && (a.corr - b.corr).abs() < 1e-12);
    }

    #[test]
    fn partitions_tile_and_balance(n in 1usize..200, k in 1usize..200) {
        prop_assume!(k <= n);
        let p = partition_nodes(n, k).unwrap();
        let mut next = 0;
        let sizes: Vec<usize> = p.ranges().iter().map(|r| r.len()).collect();
        for r in p.ranges() {
            prop_assert_eq!(r.start, next);
            prop_assert!(!r.is_empty());
            next = r.end;
        }
        prop_assert_eq!(next, n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn csv_round_trip_is_exact(seed in any::<u64>(), steps in 1usize..20, nodes in 1usize..6, features in 1usize..3) {
        let mut r = rng(seed);
        let values: Vec<f64> = (0..steps * nodes * features).map(|_| r.random_range(-1e6..1e6) * r.random::<f64>()).collect();
        let ts: Vec<String> = (0..steps).map(|t| (t * 300).to_string()).collect();
        let ds = TimeSeriesDataset::new(steps, nodes, features, values, ts).unwrap();
        let back = parse_csv(&to_csv_string(&ds)).unwrap();
        prop_assert_eq!(back.values(), ds.values());
        prop_assert_eq!(back.features(), features);
        prop_assert_eq!(back.nodes(), nodes);
    }

    #[test]
    fn windows_stay_inside_their_segment(steps in 12usize..80, history in 1usize..4, horizon in 1usize..3) {
        let need = history + horizon;
        let Ok(split) = split_temporal(steps, [0.7, 0.15, 0.15], need) else { return Ok(()); };
        // every reading is its own timestep index
        let values: Vec<f64> = (0..steps).map(|t| t as f64).collect();
        let ds = TimeSeriesDataset::new(steps, 1, 1, values, (0..steps).map(|t| t.to_string()).collect()).unwrap();
        for seg in [split.train, split.val, split.test] {
            let ws = make_windows(&ds.segment(seg.clone()).unwrap(), history, horizon).unwrap();
            prop_assert_eq!(ws.len(), seg.len() - need + 1);
            for w in &ws {
                for &v in w.input.data().iter().chain(w.target.data()) {
                    prop_assert!(seg.contains(&(v as usize)));
                }
            }
        }
    }

    #[test]
    fn noiseless_synthetic_follows_recurrence(seed in any::<u64>(), nodes in 2usize..10, steps in 2usize..60, burn in 0usize..20) {
        let spec = SyntheticSpec { nodes, steps, seed, noise: 0.0, burn_in: burn, ..SyntheticSpec::default() };
        let data = generate_synthetic(&spec).unwrap();
        for t in 0..steps - 1 {
            let want = spec.step_mean(&data, t + burn, data.dataset.step(t));
            for (a, b) in want.iter().zip(data.dataset.step(t + 1)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn aggregators_ignore_client_order(seed in any::<u64>(), k in 1usize..6) {
        let mut r = rng(seed);
        let a = arch(&mut r);
        let n = k * 2;
        let global = GlobalState::new(ModelParams::init(a, ModelKind::Adaptive, n, seed).unwrap(), 0.01, 0.5);
        let full: Vec<ClientUpdate> = (0..k)
            .map(|c| ClientUpdate {
                client: c,
                range: 2 * c..2 * c + 2,
                total_nodes: n,
                params: ModelParams::init(a, ModelKind::Adaptive, n, r.random()).unwrap(),
                samples: r.random_range(1..30),
            })
            .collect();
        let local: Vec<ClientUpdate> = full
            .iter()
            .map(|u| ClientUpdate { params: u.params.slice_nodes(u.range.start, u.range.end).unwrap(), ..u.clone() })
            .collect();
        let mut shuffled_full = full.clone();
        shuffled_full.shuffle(&mut r);
        let mut shuffled_local = local.clone();
        shuffled_local.shuffle(&mut r);
        prop_assert_eq!(aggregate_fedavg(&full).unwrap(), aggregate_fedavg(&shuffled_full).unwrap());
        prop_assert_eq!(aggregate_fedmedian(&full).unwrap(), aggregate_fedmedian(&shuffled_full).unwrap());
        prop_assert_eq!(aggregate_fedopt(&global, &full).unwrap(), aggregate_fedopt(&global, &shuffled_full).unwrap());
        prop_assert_eq!(aggregate_fedldr(&global, &local).unwrap(), aggregate_fedldr(&global, &shuffled_local).unwrap());
    }

    #[test]
    fn median_stays_within_client_span(seed in any::<u64>(), k in 1usize..8) {
        let mut r = rng(seed);
        let a = arch(&mut r);
        let ups: Vec<ClientUpdate> = (0..k)
            .map(|c| ClientUpdate {
                client: c,
                range: 0..3,
                total_nodes: 3,
                params: ModelParams::init(a, ModelKind::Shared, 3, r.random()).unwrap(),
                samples: 1,
            })
            .collect();
        let m = aggregate_fedmedian(&ups).unwrap().flatten();
        let flats: Vec<Vec<f64>> = ups.iter().map(|u| u.params.flatten()).collect();
        for (j, v) in m.iter().enumerate() {
            let lo = flats.iter().map(|f| f[j]).fold(f64::INFINITY, f64::min);
            let hi = flats.iter().map(|f| f[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= *v && *v <= hi);
        }
    }

    #[test]
    fn unchanged_clients_are_a_fixed_point(seed in any::<u64>(), k in 1usize..5) {
        let mut r = rng(seed);
        let a = arch(&mut r);
        let n = k + r.random_range(0..3);
        let part = partition_nodes(n, k).unwrap();
        for s in StrategyKind::ALL {
            let g = GlobalState::new(ModelParams::init(a, s.model_kind(), n, seed).unwrap(), 0.01, 0.5);
            let views = fedldr::federation::broadcast(&g, &part).unwrap();
            let ups: Vec<ClientUpdate> = views
                .into_iter()
                .map(|v| ClientUpdate { client: v.client, range: v.range, total_nodes: n, params: v.params, samples: r.random_range(1..9) })
                .collect();
            let next = aggregate(s, &g, &ups).unwrap();
            prop_assert_eq!(&next.params, &g.params, "{}", s);
            prop_assert_eq!(next.round, g.round + 1);
        }
    }

    #[test]
    fn fedldr_rows_come_from_their_owner(seed in any::<u64>(), k in 1usize..5) {
        let mut r = rng(seed);
        let a = arch(&mut r);
        let n = k + r.random_range(0..4);
        let part = partition_nodes(n, k).unwrap();
        let g = GlobalState::new(ModelParams::init(a, ModelKind::Adaptive, n, seed).unwrap(), 0.01, 0.5);
        let ups: Vec<ClientUpdate> = part
            .ranges()
            .iter()
            .enumerate()
            .map(|(c, range)| ClientUpdate {
                client: c,
                range: range.clone(),
                total_nodes: n,
                params: ModelParams::init(a, ModelKind::Adaptive, range.len(), r.random()).unwrap(),
                samples: 1,
            })
            .collect();
        let next = aggregate_fedldr(&g, &ups).unwrap();
        for u in &ups {
            for b in 0..2 {
                for (row_local, i) in u.range.clone().enumerate() {
                    let old = g.params.blocks()[b].row(i);
                    let loc = u.params.blocks()[b].row(row_local);
                    for ((nv, o), l) in next.params.blocks()[b].row(i).iter().zip(old).zip(loc) {
                        prop_assert!((nv - (0.5 * o + 0.5 * l)).abs() <= 1e-15);
                    }
                }
            }
        }
    }
}

