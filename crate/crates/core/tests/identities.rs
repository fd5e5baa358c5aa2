use discounted_mpc::certificate::QuadraticStorage;
use discounted_mpc::dissipativity::*;
use discounted_mpc::dp::{BellmanOperator, DpOptions, GridValueFunction};
use discounted_mpc::lqr::{has_comparison_constant, solve_dare};
use discounted_mpc::model::{parse_expression, Dynamics, Interval, LinearQuadraticProblem, ScalarGridProblem, StageCost};
use discounted_mpc::sim::simulate_grid;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn analysis() -> &'static Analysis {
    static CELL: OnceLock<Analysis> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = ScalarGridProblem::benchmark(0.9, 401, 401).unwrap();
        analyze(&p, AnalysisOptions::default()).unwrap()
    })
}

#[test]
fn rotated_condition_reformulation() {
    let a = analysis();
    let (p, s, v) = (&a.problem, &a.storage, &a.value);
    let (xs, us) = (p.x_grid(), p.u_grid());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let x = xs.nodes()[rng.random_range(0..xs.len())];
        let u = us.nodes()[rng.random_range(0..us.len())];
        let next = p.f(x, u);
        let v_next = v.value_at(next).unwrap();
        let lhs = p.cost(x, u) + s.eval(x) - s.eval(next) + (0.9 - 1.0) * v_next;
        let rhs = modified_cost_hat(p, s, x, u) - (1.0 - 0.9) * (v_next + s.eval(next));
        assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs().max(rhs.abs())));
    }
}

#[test]
fn modified_value_is_shifted_by_storage() {
    let a = analysis();
    let tight = DpOptions::with_tol(1e-11);
    let (v, _) = BellmanOperator::new(&a.problem).unwrap().solve(tight).unwrap();
    let (vh, _) = hat_value_iteration(&a.problem, &a.storage, tight).unwrap();
    let shift = check_value_shift(&a.storage, &v, &vh).unwrap();
    assert!(shift <= 10.0 * v.interpolation_slack(), "{shift:e}");
}

#[test]
fn modified_and_normalized_problems_share_the_policy() {
    let a = analysis();
    let tight = DpOptions::with_tol(1e-11);
    let (_, bar) = BellmanOperator::new(&a.problem).unwrap().solve(tight).unwrap();
    let (_, hat) = hat_value_iteration(&a.problem, &a.storage, tight).unwrap();
    assert_eq!(bar.indices, hat.indices);
}

#[test]
fn rotated_horizon_problem_reproduces_the_policy() {
    let a = analysis();
    let tight = DpOptions::with_tol(1e-11);
    let (v, bar) = BellmanOperator::new(&a.problem).unwrap().solve(tight).unwrap();
    for horizon in [1, 5, 50] {
        let tilde = rotated_horizon_policy(&a.problem, &v, horizon).unwrap();
        assert_eq!(tilde.indices, bar.indices, "horizon {horizon}");
    }
}

#[test]
fn telescopic_sum_recovers_the_value() {
    let a = analysis();
    let r = telescopic_check(&a.problem, &a.value, &a.policy, 0.1, 500).unwrap();
    let v0 = a.value.value_at(0.1).unwrap();
    assert!(r.residual <= 1e-3 * (1.0 + v0.abs()), "{r:?}");
    assert!(r.residual <= r.bound, "{r:?}");
}

#[test]
fn linear_telescopic_sum_recovers_the_value() {
    let p = LinearQuadraticProblem::benchmark(0.334).unwrap();
    let sol = solve_dare(&p, 1e-13).unwrap();
    for x0 in [[1.0, 1.0], [0.5, -2.0]] {
        let r = telescopic_check_linear(&p, &sol.P, &sol.K, &DVector::from_row_slice(&x0), 2000).unwrap();
        assert!(r.residual <= 1e-8, "{r:?}");
    }
}

#[test]
fn modified_value_decreases_along_rollouts() {
    let a = analysis();
    let slack = a.value.interpolation_slack();
    for x0 in [0.1, 0.5, 0.9] {
        let r = lyapunov_decrease_check(&a.problem, &a.storage, &a.value, &a.policy, x0, 500, 0.0).unwrap();
        assert!(r.holds(10.0 * slack), "x0 = {x0}: {:e}", r.worst_violation);
    }
}

#[test]
fn decrease_fails_for_the_unstable_linear_loop() {
    let p = LinearQuadraticProblem::benchmark(0.29).unwrap();
    let sol = solve_dare(&p, 1e-13).unwrap();
    let theta = &sol.P + &QuadraticStorage::benchmark().Lambda;
    let r = lyapunov_decrease_check_linear(&p, &theta, &sol.K, &DVector::from_vec(vec![1.0, 1.0]), 200, 1e-6).unwrap();
    assert!(!r.holds(0.0));
    let r = lyapunov_decrease_check_linear(&p, &sol.P, &sol.K, &DVector::from_vec(vec![1.0, 1.0]), 200, 1e-6).unwrap();
    assert!(!r.holds(0.0));
}

#[test]
fn normalized_value_vanishes_at_the_end_of_rollouts() {
    let a = analysis();
    for x0 in [0.1, 0.5, 0.9] {
        let traj = simulate_grid(&a.problem, &a.policy, x0, 500, a.steady.x_s).unwrap();
        let end = a.value.value_at(*traj.states.last().unwrap()).unwrap();
        assert!(end.abs() <= 1e-3, "x0 = {x0}: V̄(x_N) = {end:e}");
    }
}

#[test]
fn gaitsgory_bound_holds_by_construction() {
    // f ≡ 0 and L = x² + u² give V(x) = x², so V ≤ L(x, π(x)) with C = 1.
    let p = ScalarGridProblem::new(
        Dynamics::Expr(parse_expression("0*x").unwrap()),
        StageCost::Expr(parse_expression("x^2 + u^2").unwrap()),
        Interval::new(-1.0, 1.0).unwrap(),
        Interval::new(-1.0, 1.0).unwrap(),
        41,
        41,
        0.95,
    )
    .unwrap();
    let (v, policy) = BellmanOperator::new(&p).unwrap().solve(DpOptions::with_tol(1e-12)).unwrap();
    let r = check_gaitsgory_pointwise(&p, &StorageFunction::zero(0.0), &v, &policy, 1.0, 0.1, 1.0).unwrap();
    assert!(r.nodes > 0);
    assert!(r.holds_policy(), "{r:?}");
    assert!(r.holds_inf(), "{r:?}");
}

#[test]
fn quadratic_comparison_constant_exists_only_for_large_discounts() {
    let below = LinearQuadraticProblem::benchmark(0.84).unwrap();
    let above = LinearQuadraticProblem::benchmark(0.85).unwrap();
    assert!(!has_comparison_constant(&below).unwrap());
    assert!(has_comparison_constant(&above).unwrap());
}

#[test]
fn grid_margins_at_a_zero_value_table_reduce_to_the_cost() {
    // With γ = 1 and λ = 0 both conditions are L ≥ ε (x - x_s)².
    let p = ScalarGridProblem::new(
        Dynamics::Expr(parse_expression("0.3*x + 0.2*u").unwrap()),
        StageCost::Expr(parse_expression("(x - 0.25)^2 + (u - 0.5)^2").unwrap()),
        Interval::new(0.0, 1.0).unwrap(),
        Interval::new(0.0, 1.0).unwrap(),
        21,
        21,
        1.0,
    )
    .unwrap();
    let v = GridValueFunction::from_values(p.x_grid(), vec![0.0; 21], 1.0);
    let zero = StorageFunction::zero(0.25);
    for eps in [0.0, 0.5, 1.0] {
        assert!(check_sdsd_on_grid(&p, &zero, &v, eps).unwrap().feasible());
    }
    let r = check_sdsd_on_grid(&p, &zero, &v, 0.0).unwrap();
    assert_eq!(r.margin_i, 0.0);
}
