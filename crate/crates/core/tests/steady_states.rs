use discounted_mpc::dp::{value_iteration, DpOptions};
use discounted_mpc::model::ScalarGridProblem;
use discounted_mpc::steady_state::*;

fn bench(gamma: f64) -> ScalarGridProblem {
    ScalarGridProblem::benchmark(gamma, 401, 401).unwrap()
}

#[test]
fn steady_input_boundary_cases() {
    let p = bench(0.9);
    match steady_input(&p, 5.0 / 6.0) {
        SteadyInput::Input(u) => assert!((u - 20.0).abs() < 1e-9),
        other => panic!("{other:?}"),
    }
    assert!(matches!(steady_input(&p, 5.0 / 6.0 + 1e-6), SteadyInput::OutOfRange(_)));
    for x in [0.0, 0.1, 0.3, 0.5, 0.8] {
        let SteadyInput::Input(u) = steady_input(&p, x) else { panic!() };
        assert!((p.f(x, u) - x).abs() <= 1e-12);
    }
}

#[test]
fn optimum_matches_brute_force_scan() {
    let p = bench(0.9);
    let (v, _) = value_iteration(&p, DpOptions::default()).unwrap();
    let ss = solve_optimal_steady_state(&p, &v, SteadyStateOptions::default()).unwrap();
    let (mut best_x, mut best) = (0.0, f64::INFINITY);
    let mut k = 0;
    loop {
        let x = k as f64 * 1e-5;
        if x > 5.0 / 6.0 {
            break;
        }
        let u = 0.04 * x / (0.01 * (1.0 - x));
        let l = -1.5 * u + 2.0 * u * x + 0.1 * (u - 4.0) * (u - 4.0);
        let j = l - 0.1 * v.value_at(x).unwrap();
        if j < best {
            best = j;
            best_x = x;
        }
        k += 1;
    }
    assert!((ss.x_s - best_x).abs() <= 1e-4, "{} vs {best_x}", ss.x_s);
    assert!(ss.residual <= 1e-10);
    assert!(!ss.multiple);
    assert!((ss.cost_tilde - best).abs() <= 1e-6);
}

#[test]
fn minimizer_is_invariant_under_cost_shift() {
    let p = bench(0.9);
    let (v, _) = value_iteration(&p, DpOptions::default()).unwrap();
    let c = -7.25;
    let a = solve_optimal_steady_state(&p, &v, SteadyStateOptions::default()).unwrap();
    let b = solve_optimal_steady_state(&p.shifted(c), &v.shifted(-c / 0.1), SteadyStateOptions::default()).unwrap();
    // Within one scan step.
    let step = 1.0 / (SteadyStateOptions::default().scan_points - 1) as f64;
    assert!((a.x_s - b.x_s).abs() <= step, "{} vs {}", a.x_s, b.x_s);
    assert!((a.cost_tilde - b.cost_tilde).abs() <= 1e-9);
}

#[test]
fn approaches_undiscounted_optimum_as_discount_tends_to_one() {
    let gammas = [0.99, 0.995, 0.999];
    let rows = sweep_gamma(&bench(0.5), &gammas, SweepOptions::default()).unwrap();
    for pair in rows.windows(2) {
        assert!((pair[0].steady.x_s - pair[1].steady.x_s).abs() <= 5e-3, "{pair:?}");
    }
    // Undiscounted steady-state optimum of L(x, u_s(x)).
    let p = bench(0.99);
    let mut best = (0.0, f64::INFINITY);
    for k in 0..=83_333 {
        let x = k as f64 * 1e-5;
        let SteadyInput::Input(u) = steady_input(&p, x) else { continue };
        let l = p.cost(x, u);
        if l < best.1 {
            best = (x, l);
        }
    }
    let gaps: Vec<f64> = rows.iter().map(|r| (r.steady.x_s - best.0).abs()).collect();
    assert!(gaps[2] <= gaps[0], "{gaps:?}");
}

#[test]
fn sweep_rows_are_consistent() {
    let gammas = [0.2, 0.5, 0.9];
    let rows = sweep_gamma(&bench(0.5), &gammas, SweepOptions::default()).unwrap();
    assert_eq!(rows.iter().map(|r| r.gamma).collect::<Vec<_>>(), gammas);
    for row in &rows {
        assert!(row.steady.residual <= 1e-10);
        assert!(row.sim_gap_cells <= 2.0, "{row:?}");
    }
    assert!(rows[0].steady.x_s != rows[2].steady.x_s);

    let p = bench(0.9);
    let (v, _) = value_iteration(&p, DpOptions::default()).unwrap();
    let single = solve_optimal_steady_state(&p, &v, SteadyStateOptions::default()).unwrap();
    assert_eq!(single, rows[2].steady);
}
