mod common;

use proptest::prelude::*;
use tpinn::autodiff::JetComp;
use tpinn::linalg::{gram, ridge_solve, Cholesky, DenseMatrix, DenseVector};
use tpinn::network::{embed_batch, NetConfig, NetParams};
use tpinn::pinv::{AdaptConfig, Adapter, FeatureMap, InstanceData, Layout, RowTag, Trunk};
use tpinn::problems::{rel_l2, PdeInstance, ProblemKind};

use common::PoissonBasis;

fn system(max_cols: usize) -> impl Strategy<Value = (DenseMatrix, DenseVector)> {
    (1..=max_cols, 5usize..20).prop_flat_map(|(n, extra)| {
        let m = n + extra;
        (
            prop::collection::vec(-1.0f64..1.0, m * n),
            prop::collection::vec(-1.0f64..1.0, m),
        )
            .prop_map(move |(x, y)| (DenseMatrix::from_vec(m, n, x).unwrap(), DenseVector(y)))
    })
}

fn residual(x: &DenseMatrix, y: &DenseVector, w: &[f64]) -> f64 {
    let r = x.matvec(w).unwrap();
    r.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Householder QR least squares on the tall system.
fn qr_least_squares(x: &DenseMatrix, y: &[f64]) -> Vec<f64> {
    let (m, n) = x.shape();
    let mut a: Vec<Vec<f64>> = (0..m).map(|r| x.row(r).to_vec()).collect();
    let mut b = y.to_vec();
    for k in 0..n {
        let norm = (k..m).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|t| t * t).sum();
        if vv == 0.0 {
            continue;
        }
        for j in k..n {
            let s: f64 = (k..m).map(|i| v[i - k] * a[i][j]).sum::<f64>() * 2.0 / vv;
            for i in k..m {
                a[i][j] -= s * v[i - k];
            }
        }
        let s: f64 = (k..m).map(|i| v[i - k] * b[i]).sum::<f64>() * 2.0 / vv;
        for i in k..m {
            b[i] -= s * v[i - k];
        }
    }
    let mut w = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|j| a[i][j] * w[j]).sum();
        w[i] = (b[i] - s) / a[i][i];
    }
    w
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|t| t * t).sum::<f64>().sqrt()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    norm(&d) / norm(b).max(1e-300)
}

fn poisson_instance(a: f64, b: f64) -> PdeInstance {
    PdeInstance::new(0, ProblemKind::Poisson, vec![a, b]).unwrap()
}

fn small_trunk(seed: u64) -> (NetConfig, NetParams) {
    let spec = ProblemKind::Poisson.spec();
    let cfg = NetConfig::concat_skip(spec.bounds, 2, 3, 1.0, seed);
    let params = NetParams::init(&cfg).unwrap();
    (cfg, params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unregularized_ridge_minimizes_the_residual((x, y) in system(8)) {
        let w = ridge_solve(&x, &y, 0.0).unwrap();
        let r0 = residual(&x, &y, &w);
        for j in 0..w.len() {
            for h in [1e-4, -1e-4] {
                let mut p = w.0.clone();
                p[j] += h;
                prop_assert!(residual(&x, &y, &p) >= r0);
            }
        }
    }

    #[test]
    fn unregularized_ridge_is_scale_invariant((x, y) in system(8), c in 1e-3f64..1e3) {
        let w = ridge_solve(&x, &y, 0.0).unwrap();
        let ws = ridge_solve(&x.map(|v| c * v), &DenseVector(y.iter().map(|v| c * v).collect()), 0.0).unwrap();
        prop_assert!(rel_diff(&ws, &w) <= 1e-10, "{}", rel_diff(&ws, &w));
    }

    #[test]
    fn ridge_shrinks_with_lambda((x, y) in system(8), l1 in 0.0f64..10.0, dl in 1e-6f64..10.0) {
        let w1 = ridge_solve(&x, &y, l1).unwrap();
        let w2 = ridge_solve(&x, &y, l1 + dl).unwrap();
        prop_assert!(w1.norm() >= w2.norm() * (1.0 - 1e-12));
    }

    #[test]
    fn ridge_pivots_stay_above_lambda((x, _) in system(8), lambda in 1e-8f64..10.0, wide in any::<bool>()) {
        let x = if wide { x.transpose() } else { x };
        let mut a = gram(&x);
        for i in 0..a.rows() {
            a[(i, i)] += lambda;
        }
        for p in Cholesky::factor(&a).unwrap().pivots() {
            prop_assert!(p >= lambda * (1.0 - 1e-12));
        }
    }

    #[test]
    fn linear_adaptation_matches_tall_least_squares(seed in 0u64..1000, a in 0.05f64..1.0, b in 0.05f64..2.0, lambda_pde in 0.1f64..10.0) {
        let (cfg, params) = small_trunk(seed);
        let trunk = Trunk::new(&cfg, &params);
        let inst = poisson_instance(a, b);
        let spec = inst.spec();
        let layout = Layout::full(&spec);
        let adapter = Adapter::new(&trunk, &layout, &spec.jet_spec(), &[]).unwrap();
        let data = InstanceData::new(&inst, &layout);
        let acfg = AdaptConfig::new(lambda_pde, 0.0);
        let sys = adapter.assemble(&data, &acfg, None).unwrap();
        let oracle = qr_least_squares(&sys.x, &sys.y);
        let head = adapter.adapt_linear(&data, &acfg);
        // Nearly collinear features make the normal equations lose accuracy;
        // the property concerns well-posed systems.
        prop_assume!(head.as_ref().map(|h| h.pivot_ratio > 1e-6).unwrap_or(false));
        let head = head.unwrap();
        prop_assert!(rel_diff(&head.weights, &oracle) <= 1e-8, "{}", rel_diff(&head.weights, &oracle));
    }

    #[test]
    fn ridge_never_improves_the_data_fit(seed in 0u64..1000, a in 0.05f64..1.0, b in 0.05f64..2.0, lambda_pi in 1e-8f64..1.0) {
        let (cfg, params) = small_trunk(seed);
        let inst = poisson_instance(a, b);
        let spec = inst.spec();
        let layout = Layout::full(&spec);
        let adapter = Adapter::new(&Trunk::new(&cfg, &params), &layout, &spec.jet_spec(), &[]).unwrap();
        let data = InstanceData::new(&inst, &layout);
        let sys = adapter.assemble(&data, &AdaptConfig::new(1.0, 0.0), None).unwrap();
        let exact = adapter.adapt_linear(&data, &AdaptConfig::new(1.0, 0.0));
        prop_assume!(exact.as_ref().map(|h| h.pivot_ratio > 1e-6).unwrap_or(false));
        let ridge = adapter.adapt_linear(&data, &AdaptConfig::new(1.0, lambda_pi)).unwrap();
        prop_assert!(sys.residual(&exact.unwrap().weights) <= sys.residual(&ridge.weights) * (1.0 + 1e-9));
    }

    #[test]
    fn adaptation_leaves_the_trunk_untouched(seed in 0u64..1000, gamma in 0.001f64..0.05) {
        let spec = ProblemKind::BurgersSine.spec();
        let cfg = NetConfig::concat_skip(spec.bounds.clone(), 2, 4, 1.0, seed);
        let params = NetParams::init(&cfg).unwrap();
        let before: Vec<u64> = params.flatten().iter().map(|v| v.to_bits()).collect();
        let inst = PdeInstance::new(0, ProblemKind::BurgersSine, vec![gamma]).unwrap();
        let layout = Layout::strided(&spec, 8);
        let adapter = Adapter::new(&Trunk::new(&cfg, &params), &layout, &spec.jet_spec(), &[]).unwrap();
        let _ = adapter.adapt(&InstanceData::new(&inst, &layout), &AdaptConfig::for_problem(&spec, 1.0, 1e-6));
        let after: Vec<u64> = params.flatten().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn assembled_rows_match_the_collocation_sets(stride in 1usize..12, burgers in any::<bool>()) {
        let (kind, theta) = if burgers { (ProblemKind::BurgersSine, vec![0.01]) } else { (ProblemKind::Poisson, vec![0.5, 1.0]) };
        let inst = PdeInstance::new(0, kind, theta).unwrap();
        let spec = inst.spec();
        let layout = Layout::strided(&spec, stride);
        let basis = PoissonBasis { w1: 0.5, w2: 1.0 };
        let adapter = Adapter::new(&basis, &layout, &spec.jet_spec(), &[]).unwrap();
        let data = InstanceData::new(&inst, &layout);
        let current = vec![0.0; layout.colloc.pde.len()];
        let sys = adapter.assemble(&data, &AdaptConfig::new(1.0, 0.0), burgers.then_some(&current[..])).unwrap();
        let c = &layout.colloc;
        prop_assert_eq!(sys.x.rows(), c.pde.len() + c.bc.len() + c.ic.len());
        prop_assert_eq!(sys.rows_tagged(RowTag::Pde).len(), c.pde.len());
        prop_assert_eq!(sys.rows_tagged(RowTag::Bc).len(), c.bc.len());
        prop_assert_eq!(sys.rows_tagged(RowTag::Ic).len(), c.ic.len());
    }

    #[test]
    fn prediction_is_linear_in_the_head(seed in 0u64..1000, h in prop::collection::vec(-2.0f64..2.0, 8), g in prop::collection::vec(-2.0f64..2.0, 8), s in -3.0f64..3.0) {
        let spec = ProblemKind::BurgersSine.spec();
        let cfg = NetConfig::concat_skip(spec.bounds.clone(), 2, 4, 1.0, seed);
        let params = NetParams::init(&cfg).unwrap();
        prop_assert_eq!(cfg.embedding_width(), 8);
        let points = spec.grid().select(&[0, 100, 2000, 6000]);
        let phi = embed_batch(&params, &cfg, &points).unwrap();
        let combo: Vec<f64> = h.iter().zip(&g).map(|(a, b)| a + s * b).collect();
        let lhs = phi.matvec(&combo).unwrap();
        let (ph, pg) = (phi.matvec(&h).unwrap(), phi.matvec(&g).unwrap());
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (ph[i] + s * pg[i])).abs() <= 1e-12 * (1.0 + lhs[i].abs()));
        }
    }

    #[test]
    fn jets_of_a_feature_combination_combine(seed in 0u64..1000, c in prop::collection::vec(-2.0f64..2.0, 8)) {
        let spec = ProblemKind::BurgersSine.spec();
        let cfg = NetConfig::concat_skip(spec.bounds.clone(), 2, 4, 1.0, seed);
        let params = NetParams::init(&cfg).unwrap();
        let trunk = Trunk::new(&cfg, &params);
        let points = spec.grid().select(&[7, 500, 3000]);
        let table = trunk.jets(&points, &spec.jet_spec(), &[]).unwrap();
        // Derivative components of Σ cₖφₖ by central differences of the values.
        let h = 1e-5;
        let value = |p: &DenseMatrix| embed_batch(&params, &cfg, p).unwrap().matvec(&c).unwrap();
        for axis in 0..2 {
            let shift = |d: f64| DenseMatrix::from_fn(3, 2, |r, k| points[(r, k)] + if k == axis { d } else { 0.0 });
            let fd: Vec<f64> = value(&shift(h)).iter().zip(value(&shift(-h)).iter()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let jet = table.get(JetComp::D(axis)).unwrap().matvec(&c).unwrap();
            for r in 0..3 {
                prop_assert!((jet[r] - fd[r]).abs() <= 1e-7 * (1.0 + fd[r].abs()), "{} {}", jet[r], fd[r]);
            }
        }
    }

    #[test]
    fn rel_l2_is_scale_free(r in prop::collection::vec(-5.0f64..5.0, 1..50), c in 0.1f64..10.0) {
        prop_assume!(norm(&r) > 1e-6);
        prop_assert_eq!(rel_l2(&vec![0.0; r.len()], &r).unwrap(), 1.0);
        let doubled: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        prop_assert!((rel_l2(&doubled, &r).unwrap() - 1.0).abs() <= 1e-12);
        let scaled: Vec<f64> = r.iter().map(|v| c * v).collect();
        prop_assert!((rel_l2(&scaled, &r).unwrap() - (c - 1.0).abs()).abs() <= 1e-12);
    }

    #[test]
    fn splits_are_disjoint_and_covering(k in 0usize..10, seed in any::<u64>()) {
        let mut ds = tpinn::problems::poisson_make(10, 1).unwrap();
        ds.split(k, seed).unwrap();
        prop_assert_eq!(ds.seen.len(), k);
        prop_assert!(ds.check_split().is_ok());
        prop_assert!(ds.seen.iter().all(|i| !ds.unseen.contains(i)));
    }
}
