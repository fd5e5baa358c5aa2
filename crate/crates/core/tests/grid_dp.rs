use discounted_mpc::dp::*;
use discounted_mpc::grid::UniformGrid;
use discounted_mpc::model::ScalarGridProblem;
use discounted_mpc::sim::simulate_grid;
use discounted_mpc::steady_state::{solve_optimal_steady_state, SteadyStateOptions};
use proptest::prelude::*;

fn bench(gamma: f64, n: usize) -> ScalarGridProblem {
    ScalarGridProblem::benchmark(gamma, n, n).unwrap()
}

#[test]
fn dynamics_stay_in_the_unit_interval() {
    let p = bench(0.9, 401);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in p.x_grid().nodes() {
        for &u in p.u_grid().nodes() {
            let next = p.f(x, u);
            lo = lo.min(next);
            hi = hi.max(next);
        }
    }
    assert_eq!(lo, 0.0);
    assert!((hi - 0.96).abs() < 1e-15);
}

#[test]
fn coarse_table_agrees_with_fine_grid() {
    let (coarse, _) = value_iteration(&bench(0.9, 401), DpOptions::default()).unwrap();
    let (fine, _) = value_iteration(&bench(0.9, 1601), DpOptions::default()).unwrap();
    for k in 0..=20 {
        let x = k as f64 / 20.0;
        let (c, f) = (coarse.value_at(x).unwrap(), fine.value_at(x).unwrap());
        assert!((c - f).abs() <= 5e-3 * (1.0 + f.abs()), "x = {x}: {c} vs {f}");
    }
}

#[test]
fn gradient_agrees_with_richardson_extrapolation() {
    let p = bench(0.9, 401);
    let (v, _) = value_iteration(&p, DpOptions::default()).unwrap();
    let xs = solve_optimal_steady_state(&p, &v, SteadyStateOptions::default()).unwrap().x_s;
    let d = v.grid.spacing();
    let g4 = numeric_gradient(&v, xs, 4.0 * d).unwrap();
    let g8 = numeric_gradient(&v, xs, 8.0 * d).unwrap();
    let g16 = numeric_gradient(&v, xs, 16.0 * d).unwrap();
    // Central differences have an h² leading error term.
    let r1 = (4.0 * g4 - g8) / 3.0;
    let r2 = (4.0 * g8 - g16) / 3.0;
    assert!((r1 - r2).abs() <= 1e-3 * r1.abs(), "{r1} vs {r2}");
    assert!((g8 - r1).abs() <= 1e-2 * r1.abs(), "{g8} vs {r1}");
}

#[test]
fn dense_quadratic_gradient() {
    let grid = UniformGrid::new(0.0, 1.0, 1001);
    let v = GridValueFunction::from_values(grid.clone(), grid.nodes().iter().map(|x| x * x).collect(), 0.9);
    assert!((numeric_gradient(&v, 0.5, 1e-2).unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn interpolation_rules() {
    let (v, _) = value_iteration(&bench(0.9, 401), DpOptions::default()).unwrap();
    let d = v.grid.spacing();
    for i in [0, 17, 200, 399] {
        let x = v.grid.nodes()[i];
        assert_eq!(v.value_at(x).unwrap(), v.values[i]);
        let mid = v.value_at(x + 0.5 * d).unwrap();
        assert!((mid - 0.5 * (v.values[i] + v.values[i + 1])).abs() <= 1e-12 * (1.0 + mid.abs()));
    }
    let grid = UniformGrid::new(-1.0, 2.0, 31);
    let line = GridValueFunction::from_values(grid.clone(), grid.nodes().iter().map(|x| 3.0 * x - 1.0).collect(), 0.5);
    for k in 0..100 {
        let x = -1.0 + 3.0 * k as f64 / 99.0;
        assert!((line.value_at(x).unwrap() - (3.0 * x - 1.0)).abs() < 1e-12);
    }
}

#[test]
fn contraction_ratio_bounded_by_discount() {
    for gamma in [0.5, 0.9] {
        let (v, _) = value_iteration(&bench(gamma, 201), DpOptions::with_tol(1e-10)).unwrap();
        for (k, r) in v.contraction_ratios().iter().enumerate().skip(4) {
            assert!(*r <= gamma + 0.01, "gamma {gamma}, sweep {k}: ratio {r}");
        }
    }
}

#[test]
fn converged_residual_is_below_tolerance() {
    let p = bench(0.9, 401);
    let op = BellmanOperator::new(&p).unwrap();
    let (v, _) = op.solve(DpOptions::default()).unwrap();
    let tol = 1e-8 * op.cost_sup().max(1.0) / 0.1;
    assert!(v.residual <= tol);
    let next = op.apply(&v.values);
    let change = next.iter().zip(&v.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(change <= tol);
}

#[test]
fn shifted_cost_shifts_values_and_keeps_policy() {
    let p = bench(0.9, 201);
    let c = 3.0;
    let base = BellmanOperator::new(&p).unwrap();
    let shifted = BellmanOperator::new(&p.shifted(c)).unwrap();
    let opts = DpOptions::with_tol(1e-9);
    let (v, pol) = base.solve(opts).unwrap();
    let offset = -c / (1.0 - 0.9);
    let (w, pol_w) = shifted.solve_from(vec![offset; 201], opts).unwrap();
    for (a, b) in v.values.iter().zip(&w.values) {
        assert!((b - a - offset).abs() <= 1e-9 * c / (1.0 - 0.9));
    }
    assert_eq!(pol.indices, pol_w.indices);
}

#[test]
fn value_tables_are_bit_identical_across_runs() {
    let p = bench(0.9, 201);
    let (a, pa) = value_iteration(&p, DpOptions::default()).unwrap();
    let (b, pb) = value_iteration(&p, DpOptions::default()).unwrap();
    let bits = |v: &GridValueFunction| v.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(pa, pb);
}

#[test]
fn greedy_closed_loop_settles_near_steady_state() {
    let p = bench(0.9, 401);
    let (v, policy) = value_iteration(&p, DpOptions::default()).unwrap();
    let xs = solve_optimal_steady_state(&p, &v, SteadyStateOptions::default()).unwrap().x_s;
    let traj = simulate_grid(&p, &policy, 0.3, 1000, xs).unwrap();
    let last = *traj.states.last().unwrap();
    // The limit is a fixed point of the closed loop.
    let node = p.x_grid().nearest(last).unwrap();
    assert!((p.f(last, policy.input(node)) - last).abs() < 1e-12);
    assert!((last - xs).abs() <= 2.0 * p.x_grid().spacing());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bellman_sweep_is_monotone(
        base in proptest::collection::vec(-10.0f64..10.0, 41),
        bump in proptest::collection::vec(0.0f64..5.0, 41),
        gamma in 0.1f64..0.99,
    ) {
        let p = bench(gamma, 41);
        let op = BellmanOperator::new(&p).unwrap();
        let upper: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let lo = op.apply(&base);
        let hi = op.apply(&upper);
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn bellman_sweep_contracts(
        a in proptest::collection::vec(-10.0f64..10.0, 41),
        b in proptest::collection::vec(-10.0f64..10.0, 41),
        gamma in 0.1f64..0.99,
    ) {
        let p = bench(gamma, 41);
        let op = BellmanOperator::new(&p).unwrap();
        let sup = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let before = sup(&a, &b);
        let after = sup(&op.apply(&a), &op.apply(&b));
        prop_assert!(after <= gamma * before * (1.0 + 1e-12) + 1e-12);
    }
}
