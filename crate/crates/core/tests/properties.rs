use std::sync::Arc;

use iteravg_core::averaging::{self, RunningAverage};
use iteravg_core::data_io;
use iteravg_core::linalg;
use iteravg_core::optimizers::{
    nsgd_run, psgd_run, sgd_run, LrSchedule, PathRecord, RateKind, RunConfig,
};
use iteravg_core::oracles;
use iteravg_core::problems::{
    self, make_synthetic_quadratic, Preconditioner, Problem, QuadraticProblem, Regularizer,
    Rotation,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn quad(d: usize, lo: f64, hi: f64, seed: u64) -> QuadraticProblem {
    let w = DVector::from_fn(d, |i, _| 1.0 - 0.3 * i as f64);
    make_synthetic_quadratic(d, lo, hi, Rotation::Seeded(seed), &w).unwrap()
}

fn monotone_in_unit(c: impl Fn(usize) -> f64, n: usize) -> bool {
    (0..=n).all(|k| (0.0..=1.0).contains(&c(k)) && (k == 0 || c(k) >= c(k - 1)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cumulative_weights_rise_within_unit_interval(eta in 0.01f64..1.0, lambda in 0.0f64..5.0, p in 0.01f64..0.99) {
        let n = 80;
        let s = averaging::weights_sgd_adaptive(&LrSchedule::constant(eta), lambda, n).unwrap();
        prop_assert!(monotone_in_unit(|k| s.cumulative(k), n));
        let g = averaging::weights_general(eta, eta / (1.0 + lambda.max(0.01) * eta), n).unwrap();
        prop_assert!(monotone_in_unit(|k| g.cumulative(k), n));
        let geo = averaging::weights_geometric(p, n).unwrap();
        prop_assert!(monotone_in_unit(|k| geo.cumulative(k), n));
        prop_assert_eq!(geo.cumulative(n), 1.0);
    }

    #[test]
    fn sgd_identity_on_random_quadratics(d in 1usize..6, lo in 0.05f64..1.0, spread in 1.0f64..10.0, frac in 0.05f64..0.95,
                                         lambda in 0.01f64..3.0, seed in 0u64..1000) {
        let q = quad(d, lo, lo * spread, seed);
        let p: Problem = q.into();
        let beta = lo * spread;
        let sched = LrSchedule::new(RateKind::Constant(frac / beta), lambda, beta).unwrap();
        let cfg = RunConfig::deterministic(120);
        let plain = sgd_run(&p, &Regularizer::None, &sched, &cfg).unwrap();
        let reg = sgd_run(&p, &Regularizer::l2(lambda).unwrap(), &sched, &cfg).unwrap();
        let scheme = averaging::weights_sgd_adaptive(&sched, lambda, 120).unwrap();
        prop_assert!(oracles::identity_check(&plain, &reg, &scheme).unwrap().max <= 1e-10);
    }

    #[test]
    fn psgd_and_nsgd_identities(seed in 0u64..1000, lambda in 0.05f64..2.0, frac in 0.1f64..0.9) {
        let q = quad(3, 0.2, 1.5, seed);
        let metric = Arc::new(Preconditioner::new(q.sigma() + DMatrix::identity(3, 3) * 0.1).unwrap());
        let p: Problem = q.into();
        let reg_q = Regularizer::generalized(metric.clone(), lambda).unwrap();
        let beta = problems::smoothness(&p, &reg_q).unwrap();
        let sched = LrSchedule::new(RateKind::Constant(frac / beta), lambda, beta).unwrap();
        let cfg = RunConfig::deterministic(100).with_preconditioner(metric);
        let plain = psgd_run(&p, &Regularizer::None, &sched, &cfg).unwrap();
        let reg = psgd_run(&p, &reg_q, &sched, &cfg).unwrap();
        let scheme = averaging::weights_sgd_adaptive(&sched, lambda, 100).unwrap();
        prop_assert!(oracles::identity_check(&plain, &reg, &scheme).unwrap().max <= 1e-10);

        let eta = frac / 1.5;
        let alpha = 0.1;
        let sched = LrSchedule::constant(eta);
        let cfg = RunConfig::deterministic(100).with_alpha(alpha);
        let plain = nsgd_run(&p, &Regularizer::None, &sched, &cfg).unwrap();
        let reg = nsgd_run(&p, &Regularizer::l2(lambda).unwrap(), &sched, &cfg).unwrap();
        let scheme = averaging::weights_nsgd(eta, lambda, alpha, 100).unwrap();
        prop_assert!(oracles::identity_check(&plain, &reg, &scheme).unwrap().max <= 1e-10);
    }

    #[test]
    fn ridge_solution_solves_normal_equations(d in 1usize..6, lambda in 0.0f64..5.0, seed in 0u64..1000) {
        let q = quad(d, 0.1, 2.0, seed);
        let w = oracles::ridge_solution(&q, &Regularizer::l2(lambda).unwrap()).unwrap().w_hat;
        let resid = (q.sigma() + DMatrix::identity(d, d) * lambda) * &w - q.a().column(0);
        prop_assert!(resid.amax() <= 1e-10);
    }

    #[test]
    fn curvature_bounds_bracket_random_pairs(d in 1usize..6, seed in 0u64..1000,
                                             u in prop::collection::vec(-2.0f64..2.0, 5), v in prop::collection::vec(-2.0f64..2.0, 5)) {
        let p: Problem = quad(d, 0.3, 3.0, seed).into();
        let b = problems::convexity_bounds(&p, &Regularizer::None).unwrap();
        let (x, y) = (DVector::from_column_slice(&u[..d]), DVector::from_column_slice(&v[..d]));
        let (_, gx) = problems::eval_loss_grad(&p, &Regularizer::None, &x).unwrap();
        let (_, gy) = problems::eval_loss_grad(&p, &Regularizer::None, &y).unwrap();
        let diff = &x - &y;
        let inner = (gx - gy).dot(&diff);
        let n2 = diff.norm_squared();
        prop_assert!(b.alpha * n2 <= inner + 1e-10 && inner <= b.beta * n2 + 1e-10);
    }

    #[test]
    fn streaming_average_matches_batch(n in 1usize..120, seed in 0u64..1000, p in 0.01f64..0.5) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let iterates: Vec<DVector<f64>> = (0..=n).map(|_| DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0))).collect();
        let scheme = averaging::weights_geometric(p, n).unwrap();
        let batch = averaging::averaged_path(&scheme, &iterates).unwrap();
        let mut acc = RunningAverage::new(3);
        for (k, w) in iterates.iter().enumerate() {
            acc.update(k, w, scheme.increment(k)).unwrap();
            prop_assert!((acc.finalize().unwrap() - &batch[k]).amax() <= 1e-12);
        }
    }

    #[test]
    fn lambda_pair_is_ordered_and_positive(alpha in 0.1f64..1.0, ratio in 1.01f64..5.0, t in 0.01f64..0.99, s in 0.01f64..0.99) {
        let beta = alpha * ratio;
        let b = problems::ConvexityBounds::new(alpha, beta).unwrap();
        let (lo, hi) = (1.0 / (2.0 * beta - alpha), 1.0 / beta);
        let eta = lo + t * (hi - lo);
        let gamma = s * eta / (eta * (beta - alpha) + 1.0);
        let (l1, l2) = oracles::lambda_pair(eta, gamma, &b).unwrap();
        prop_assert!(l1 >= l2 && l2 > 0.0);
        prop_assert!(((l1 - l2) - 2.0 * (beta - alpha)).abs() <= 1e-9 * l1.max(1.0));
    }

    #[test]
    fn hull_contains_its_own_points_and_centroid(pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40)) {
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        for p in &pts {
            prop_assert!(oracles::hull_contains(&pts, *p));
        }
        let n = pts.len() as f64;
        let c = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
        prop_assert!(oracles::hull_contains(&pts, c));
        prop_assert!(!oracles::hull_contains(&pts, [100.0, 100.0]));
    }
}

#[test]
fn path_record_survives_disk() {
    let p: Problem = quad(3, 0.2, 1.0, 7).into();
    let path = sgd_run(
        &p,
        &Regularizer::None,
        &LrSchedule::constant(0.5),
        &RunConfig::deterministic(50),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.jsonl");
    path.save(&file).unwrap();
    assert_eq!(PathRecord::load(&file).unwrap(), path);
}

#[test]
fn idx_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<u8> = (0..2 * 3 * 4).map(|i| (i * 37 % 256) as u8).collect();
    for name in ["x.idx", "x.idx.gz"] {
        let f = dir.path().join(name);
        data_io::write_idx(&f, &[2, 3, 4], &data).unwrap();
        let back = data_io::read_idx(&f, data_io::IMAGES_MAGIC).unwrap();
        assert_eq!(back.dims, vec![2, 3, 4]);
        assert_eq!(back.data, data);
    }
}

#[test]
fn l1_solution_is_sparse_where_ridge_is_not() {
    let q = quad(2, 0.1, 1.0, 3);
    let lasso = oracles::l1_prox_solution(&q, 1.0, 1e-12).unwrap();
    let ridge = oracles::ridge_solution(&q, &Regularizer::l2(1.0).unwrap())
        .unwrap()
        .w_hat;
    assert!(lasso.iter().any(|&x| x == 0.0));
    assert!(ridge.iter().all(|&x| x != 0.0));
    assert!(linalg::l1_norm(&lasso) < linalg::l1_norm(&ridge));
}
