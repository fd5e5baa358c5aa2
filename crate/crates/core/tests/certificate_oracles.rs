use discounted_mpc::certificate::*;
use discounted_mpc::linalg::min_eigenvalue;
use discounted_mpc::lqr::solve_dare;
use discounted_mpc::model::LinearQuadraticProblem;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quad(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

#[test]
fn quadratic_forms_match_direct_evaluation() {
    let p = LinearQuadraticProblem::benchmark(0.334).unwrap();
    let storage = QuadraticStorage::benchmark();
    let sol = solve_dare(&p, 1e-13).unwrap();
    let h_i = assemble_condition_i(&p, &storage);
    let h_ii = assemble_condition_ii(&p, &storage, &sol.P);
    let g = p.gamma();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-10.0..10.0));
        let u = DVector::from_fn(2, |_, _| rng.random_range(-10.0..10.0));
        let next = p.next_state(&x, &u);
        let z = DVector::from_iterator(4, x.iter().chain(u.iter()).copied());
        let lam = |v: &DVector<f64>| quad(&storage.Lambda, v);
        let direct_i = p.stage_cost(&x, &u) + lam(&x) - g * lam(&next);
        let direct_ii =
            p.stage_cost(&x, &u) + lam(&x) - lam(&next) + (g - 1.0) * quad(&sol.P, &next);
        assert!((quad(&h_i, &z) - direct_i).abs() <= 1e-9 * (1.0 + direct_i.abs()));
        assert!((quad(&h_ii, &z) - direct_ii).abs() <= 1e-9 * (1.0 + direct_ii.abs()));
    }
}

#[test]
fn conditions_collapse_at_gamma_one() {
    let p = LinearQuadraticProblem::benchmark(1.0).unwrap();
    let storage = QuadraticStorage::benchmark();
    // Any P: its weight (1 - γ) vanishes.
    let arbitrary = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 5.0]);
    let diff = assemble_condition_i(&p, &storage) - assemble_condition_ii(&p, &storage, &arbitrary);
    assert!(diff.amax() <= 1e-9);
}

#[test]
fn reported_margins_are_minimum_eigenvalues() {
    let p = LinearQuadraticProblem::benchmark(0.334).unwrap();
    let report = verify_certificate(&p, &QuadraticStorage::benchmark(), 1e-6).unwrap();
    let sol = solve_dare(&p, 1e-13).unwrap();
    let h_i = assemble_condition_i(&p, &QuadraticStorage::benchmark());
    // The witness attains the margin and nothing lies below it.
    let w = DVector::from_vec(report.witness_i.clone());
    assert!((quad(&h_i, &w) - report.margin_i).abs() < 1e-12);
    let shifted = &h_i - DMatrix::identity(4, 4) * (report.margin_i - 1e-9);
    assert!(shifted.cholesky().is_some());
    let phat = &sol.P + &QuadraticStorage::benchmark().Lambda;
    assert!((min_eigenvalue(&phat) - report.margin_phat).abs() < 1e-12);
}

#[test]
fn synthesized_storage_passes_verification() {
    let p = LinearQuadraticProblem::benchmark(0.334).unwrap();
    let opts = SynthesisOptions::default();
    let found = synthesize_certificate(&p, opts).unwrap();
    let again = verify_certificate(&p, &found.storage, opts.epsilon).unwrap();
    assert!(again.feasible);
    assert!((again.margin_i.min(again.margin_ii) - found.margin).abs() < 1e-12);
}

#[test]
fn synthesis_is_deterministic_for_a_seed() {
    let p = LinearQuadraticProblem::benchmark(0.4).unwrap();
    let opts = SynthesisOptions {
        seed: 9,
        ..SynthesisOptions::default()
    };
    let a = synthesize_certificate(&p, opts).unwrap();
    let b = synthesize_certificate(&p, opts).unwrap();
    assert_eq!(a.storage, b.storage);
    assert_eq!(a.margin.to_bits(), b.margin.to_bits());
}

#[test]
fn single_conditions_feasible_where_joint_fails() {
    let p = LinearQuadraticProblem::benchmark(0.29).unwrap();
    let near = SynthesisOptions {
        epsilon: 1e-9,
        ..SynthesisOptions::default()
    };
    assert!(matches!(
        synthesize_certificate(&p, near),
        Err(CertificateError::Infeasible { .. })
    ));
    for conditions in [Conditions::DiscountedOnly, Conditions::RotatedOnly] {
        let found = synthesize_certificate(&p, SynthesisOptions { conditions, ..near }).unwrap();
        assert!(found.margin > near.epsilon);
    }
}
