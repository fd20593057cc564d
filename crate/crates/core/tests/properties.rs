use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use trdre::baselines::enumerate_weight_vertices;
use trdre::*;

fn features(rows: usize, cols: usize, vals: &[f64]) -> FeatureMatrix64 {
    FeatureMatrix::from_array(Array2::from_shape_vec((rows, cols), vals.to_vec()).unwrap()).unwrap()
}

prop_compose! {
    fn instance(max_n: usize, max_m: usize)
        (n_p in 1..=max_n, n_q in 1..=max_n, m in 1..=max_m)
        (p in prop::collection::vec(-2.0..2.0f64, n_p * m),
         q in prop::collection::vec(-2.0..2.0f64, n_q * m),
         delta in prop::collection::vec(-1.5..1.5f64, m),
         n_p in Just(n_p), n_q in Just(n_q), m in Just(m))
        -> (FeatureMatrix64, FeatureMatrix64, Array1<f64>)
    {
        (features(n_p, m, &p), features(n_q, m, &q), Array1::from(delta))
    }
}

fn with_nu(n_p: usize, k: usize) -> f64 {
    k.clamp(1, n_p) as f64 / n_p as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ratios_average_to_one_over_denominator((_, q, delta) in instance(30, 6)) {
        let model = RatioModel::new(delta, FeatureMap::Linear, &q).unwrap();
        let mean = model.log_ratios(&q).unwrap().mapv(f64::exp).mean().unwrap();
        prop_assert!((mean - 1.0).abs() < 1e-10);
    }

    #[test]
    fn constant_feature_shift_leaves_ratio_unchanged(
        (p, q, delta) in instance(20, 5), c in prop::collection::vec(-3.0..3.0f64, 5)
    ) {
        let c = Array1::from(c[..p.ncols()].to_vec());
        let shift = |fm: &FeatureMatrix64| FeatureMatrix::from_array(&fm.values() + &c).unwrap();
        let (ps, qs) = (shift(&p), shift(&q));
        let a = RatioModel::new(delta.clone(), FeatureMap::Linear, &q).unwrap().log_ratios(&p).unwrap();
        let b = RatioModel::new(delta, FeatureMap::Linear, &qs).unwrap().log_ratios(&ps).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn log_normalizer_is_convex(
        (_, q, a) in instance(20, 4), b in prop::collection::vec(-1.5..1.5f64, 4), t in 0.0..1.0f64
    ) {
        let b = Array1::from(b[..a.len()].to_vec());
        let mid = &a * t + &b * (1.0 - t);
        let lhs = log_normalizer(mid.view(), &q).unwrap();
        let rhs = t * log_normalizer(a.view(), &q).unwrap() + (1.0 - t) * log_normalizer(b.view(), &q).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn featurize_commutes_with_row_permutation(
        rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 2..12), seed in any::<u64>()
    ) {
        let x = SampleMatrix::from_rows(&rows).unwrap();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let px = x.select_rows(&order);
        for map in [FeatureMap::Linear, FeatureMap::PairwiseQuadratic] {
            let f = featurize(&x, &map).unwrap();
            let g = featurize(&px, &map).unwrap();
            prop_assert_eq!(g.values().to_owned(), f.values().select(Axis(0), &order));
        }
    }

    #[test]
    fn inner_solver_matches_vertex_enumeration((p, q, delta) in instance(8, 3), k in 1usize..=8) {
        let nu = with_nu(p.nrows(), k);
        let cfg = TrimConfig::default().with_nu(nu);
        let lr = RatioModel::new(delta.clone(), FeatureMap::Linear, &q).unwrap().log_ratios(&p).unwrap();
        let w = assign_weights(lr.view(), nu).unwrap();
        let best = objective(delta.view(), &w, &p, &q, &cfg).unwrap();
        let vertex_min = enumerate_weight_vertices::<f64>(p.nrows(), nu)
            .unwrap()
            .iter()
            .map(|v| objective(delta.view(), v, &p, &q, &cfg).unwrap())
            .fold(f64::INFINITY, f64::min);
        prop_assert!(best <= vertex_min + 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences((p, q, delta) in instance(15, 5), k in 1usize..=15) {
        let nu = with_nu(p.nrows(), k);
        let cfg = TrimConfig::default().with_nu(nu);
        let lr = RatioModel::new(delta.clone(), FeatureMap::Linear, &q).unwrap().log_ratios(&p).unwrap();
        let w = assign_weights(lr.view(), nu).unwrap();
        let g = gradient(delta.view(), &w, &p, &q).unwrap();
        let h = 1e-6;
        for j in 0..delta.len() {
            let mut up = delta.clone();
            up[j] += h;
            let mut dn = delta.clone();
            dn[j] -= h;
            let fd = (objective(up.view(), &w, &p, &q, &cfg).unwrap()
                - objective(dn.view(), &w, &p, &q, &cfg).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[j]).abs() <= 1e-6 * (1.0 + g[j].abs()));
        }
    }

    #[test]
    fn objective_is_concave_in_delta(
        (p, q, a) in instance(12, 4), b in prop::collection::vec(-1.5..1.5f64, 4),
        t in 0.0..1.0f64, lambda in 0.0..0.5f64
    ) {
        let b = Array1::from(b[..a.len()].to_vec());
        let w = WeightVector::from_kept(p.nrows(), (0..p.nrows()).step_by(2).collect()).unwrap();
        for reg in [Regularizer::None, Regularizer::L1, Regularizer::L2Sq] {
            let cfg = TrimConfig::default().with_regularizer(reg, lambda);
            let mid = &a * t + &b * (1.0 - t);
            let lhs = objective(mid.view(), &w, &p, &q, &cfg).unwrap();
            let rhs = t * objective(a.view(), &w, &p, &q, &cfg).unwrap()
                + (1.0 - t) * objective(b.view(), &w, &p, &q, &cfg).unwrap();
            prop_assert!(lhs >= rhs - 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn best_objective_is_running_maximum_of_trace(
        (p, q, _) in instance(20, 3), k in 1usize..=20, lambda in 0.0..0.3f64
    ) {
        let nu = with_nu(p.nrows(), k);
        let cfg = TrimConfig::default()
            .with_nu(nu)
            .with_regularizer(Regularizer::L1, lambda)
            .with_max_iter(300);
        let res = fit_features(&p, &q, &cfg, None).unwrap();
        let best = res.best_trace();
        prop_assert!(best.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(*best.last().unwrap(), res.objective_best);
        let again = objective(res.delta_best.view(), &res.w_best, &p, &q, &cfg).unwrap();
        prop_assert!((again - res.objective_best).abs() < 1e-10);
        prop_assert_eq!(res.w_best.kept_indices().len(), k.clamp(1, p.nrows()));
    }

    #[test]
    fn full_weight_fit_is_kliep(
        xp in prop::collection::vec(-2.0..2.0f64, 3..25), xq in prop::collection::vec(-2.0..2.0f64, 3..25)
    ) {
        let xp = SampleMatrix::from_column(&xp).unwrap();
        let xq = SampleMatrix::from_column(&xq).unwrap();
        let cfg = TrimConfig::default().with_nu(1.0).with_max_iter(200);
        let a = fit(&xp, &xq, &FeatureMap::Linear, &cfg).unwrap();
        let b = fit_kliep(&xp, &xq, &FeatureMap::Linear, &cfg.clone().with_nu(0.5)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fit_is_deterministic_and_order_insensitive(
        rows in prop::collection::vec(-2.0..2.0f64, 6..30), shift in -1.0..0.0f64, rot in 1usize..5
    ) {
        let xp = SampleMatrix::from_column(&rows).unwrap();
        let q: Vec<f64> = rows.iter().map(|v| v * 1.2 + shift).collect();
        let xq = SampleMatrix::from_column(&q).unwrap();
        let cfg = TrimConfig::default().with_nu(0.8).with_max_iter(400);
        let a = fit(&xp, &xq, &FeatureMap::Linear, &cfg).unwrap();
        let b = fit(&xp, &xq, &FeatureMap::Linear, &cfg).unwrap();
        prop_assert_eq!(&a, &b);

        let n = rows.len();
        let order: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let c = fit(&xp.select_rows(&order), &xq.select_rows(&order), &FeatureMap::Linear, &cfg).unwrap();
        prop_assert!((a.objective_best - c.objective_best).abs() < 1e-9);
    }
}
