//! Quadratic dissipativity certificates for linear-quadratic problems.
//!
//! With storage `λ(x) = xᵀΛx` both dissipativity conditions become quadratic
//! forms in `z = [x; u]`:
//!
//! ```text
//! (i)   L + λ(x) - γ λ(f)               = zᵀ H_i z,   H_i  = diag(Q, R) + JᵀΛJ - Mᵀ(γΛ)M
//! (ii)  L + λ(x) - λ(f) + (γ-1) V*(f)   = zᵀ H_ii z,  H_ii = diag(Q, R) + JᵀΛJ - Mᵀ(Λ + (1-γ)P)M
//! ```
//!
//! where `M = [A B]`, `J = [I 0]`, and `V*(x) = xᵀPx`. With `ρ(s) = εs²` the
//! conditions hold when the minimum eigenvalues exceed `ε`.
//!
//! Synthesis replaces a semidefinite program by maximizing
//! `min(eig_min H_i, eig_min H_ii)` over the free entries of `Λ` with a
//! multi-start simplex search. The objective is concave in `Λ`, so every
//! start heads for the same optimum; the starts only guard against the
//! simplex stalling on a kink.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg;
use crate::lqr::{self, bisect_threshold, BisectionOptions, Criterion, LqrError, ThresholdResult};
use crate::model::LinearQuadraticProblem;
use crate::optimize::{nelder_mead, NelderMeadOptions};

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error("no certificate found: best margin {best_margin:e} <= epsilon {epsilon:e}")]
    Infeasible {
        best_margin: f64,
        epsilon: f64,
        storage: QuadraticStorage,
    },
    #[error("storage matrix must be {expected}x{expected} and symmetric")]
    BadStorage { expected: usize },
    #[error(transparent)]
    Lqr(#[from] LqrError),
}

/// `λ(x) = xᵀΛx`; `λ(0) = 0` holds by construction.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticStorage {
    pub Lambda: DMatrix<f64>,
}

impl QuadraticStorage {
    #[allow(non_snake_case)]
    pub fn new(Lambda: DMatrix<f64>) -> Result<Self, CertificateError> {
        let n = Lambda.nrows();
        if Lambda.ncols() != n || !linalg::is_symmetric(&Lambda, 1e-12) {
            return Err(CertificateError::BadStorage { expected: n });
        }
        Ok(Self {
            Lambda: linalg::symmetrize(&Lambda),
        })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            Lambda: DMatrix::zeros(n, n),
        }
    }

    /// Reference storage for the two-state benchmark at γ = 0.334.
    pub fn benchmark() -> Self {
        Self {
            Lambda: -DMatrix::from_row_slice(2, 2, &[3.9511, 1.2702, 1.2702, 2.7738]),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.Lambda * x))
    }

    /// Upper-triangular entries, row by row.
    pub fn to_params(&self) -> Vec<f64> {
        let n = self.Lambda.nrows();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push(self.Lambda[(i, j)]);
            }
        }
        out
    }

    pub fn from_params(n: usize, params: &[f64]) -> Self {
        assert_eq!(params.len(), n * (n + 1) / 2);
        let mut m = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                m[(i, j)] = params[k];
                m[(j, i)] = params[k];
                k += 1;
            }
        }
        Self { Lambda: m }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.Lambda
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

fn assemble(problem: &LinearQuadraticProblem, lambda: &DMatrix<f64>, weight: &DMatrix<f64>) -> DMatrix<f64> {
    let n = problem.state_dim();
    let m = problem.input_dim();
    let mut h = DMatrix::zeros(n + m, n + m);
    h.view_mut((0, 0), (n, n)).copy_from(&(&problem.Q + lambda));
    h.view_mut((n, n), (m, m)).copy_from(&problem.R);
    let mut map = DMatrix::zeros(n, n + m);
    map.view_mut((0, 0), (n, n)).copy_from(&problem.A);
    map.view_mut((0, n), (n, m)).copy_from(&problem.B);
    h -= map.transpose() * weight * &map;
    linalg::symmetrize(&h)
}

/// Quadratic form of `L(x,u) + λ(x) - γ λ(f(x,u))`.
pub fn assemble_condition_i(problem: &LinearQuadraticProblem, storage: &QuadraticStorage) -> DMatrix<f64> {
    assemble(problem, &storage.Lambda, &(&storage.Lambda * problem.gamma()))
}

/// Quadratic form of `L(x,u) + λ(x) - λ(f(x,u)) + (γ-1) xᵀPx|_{f(x,u)}`.
#[allow(non_snake_case)]
pub fn assemble_condition_ii(
    problem: &LinearQuadraticProblem,
    storage: &QuadraticStorage,
    P: &DMatrix<f64>,
) -> DMatrix<f64> {
    let theta = &storage.Lambda + P * (1.0 - problem.gamma());
    assemble(problem, &storage.Lambda, &theta)
}

#[derive(Debug, Clone, Serialize)]
pub struct SdsdReport {
    pub gamma: f64,
    pub epsilon: f64,
    /// Minimum eigenvalue of the condition-(i) form.
    pub margin_i: f64,
    /// Minimum eigenvalue of the condition-(ii) form.
    pub margin_ii: f64,
    /// Minimum eigenvalue of `P + Λ`.
    pub margin_phat: f64,
    /// Eigenvalue margins with strictness in `x` only: the Schur complement
    /// of the input block, or `-inf` when that block is not positive definite.
    pub schur_margin_i: f64,
    pub schur_margin_ii: f64,
    /// Unit `[x; u]` attaining `margin_i` / `margin_ii`.
    pub witness_i: Vec<f64>,
    pub witness_ii: Vec<f64>,
    pub feasible: bool,
}

fn schur_margin(h: &DMatrix<f64>, n: usize) -> f64 {
    let m = h.nrows() - n;
    let huu = h.view((n, n), (m, m)).into_owned();
    if linalg::min_eigenvalue(&huu) <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let Some(chol) = huu.cholesky() else {
        return f64::NEG_INFINITY;
    };
    let hxu = h.view((0, n), (n, m)).into_owned();
    let schur = h.view((0, 0), (n, n)).into_owned() - &hxu * chol.solve(&hxu.transpose());
    linalg::min_eigenvalue(&schur)
}

/// Minimum-eigenvalue margins of both conditions and of `P + Λ`, for the
/// value matrix `P` of the same problem.
#[allow(non_snake_case)]
pub fn verify_with_value(
    problem: &LinearQuadraticProblem,
    storage: &QuadraticStorage,
    P: &DMatrix<f64>,
    epsilon: f64,
) -> SdsdReport {
    let n = problem.state_dim();
    let h_i = assemble_condition_i(problem, storage);
    let h_ii = assemble_condition_ii(problem, storage, P);
    let (margin_i, w_i) = linalg::min_eigenpair(&h_i);
    let (margin_ii, w_ii) = linalg::min_eigenpair(&h_ii);
    let margin_phat = linalg::min_eigenvalue(&(P + &storage.Lambda));
    SdsdReport {
        gamma: problem.gamma(),
        epsilon,
        margin_i,
        margin_ii,
        margin_phat,
        schur_margin_i: schur_margin(&h_i, n),
        schur_margin_ii: schur_margin(&h_ii, n),
        witness_i: w_i.iter().copied().collect(),
        witness_ii: w_ii.iter().copied().collect(),
        feasible: margin_i.min(margin_ii) > epsilon && margin_phat > 0.0,
    }
}

pub fn verify_certificate(
    problem: &LinearQuadraticProblem,
    storage: &QuadraticStorage,
    epsilon: f64,
) -> Result<SdsdReport, CertificateError> {
    if storage.Lambda.nrows() != problem.state_dim() {
        return Err(CertificateError::BadStorage {
            expected: problem.state_dim(),
        });
    }
    let sol = lqr::solve_dare(problem, 1e-13)?;
    Ok(verify_with_value(problem, storage, &sol.P, epsilon))
}

/// Which conditions the synthesized storage must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditions {
    Both,
    /// Condition (i) alone.
    DiscountedOnly,
    /// Condition (ii) alone.
    RotatedOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthesisOptions {
    pub epsilon: f64,
    pub seed: u64,
    pub starts: usize,
    pub conditions: Conditions,
    pub search: NelderMeadOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            seed: 0,
            starts: 16,
            conditions: Conditions::Both,
            search: NelderMeadOptions {
                initial_step: 1.0,
                x_tol: 1e-14,
                f_tol: 0.0,
                max_evals: 40_000,
                restarts: 12,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub storage: QuadraticStorage,
    /// Objective value at the returned storage.
    pub margin: f64,
    pub report: SdsdReport,
    pub start_index: usize,
}

/// Objective maximized by synthesis: the smallest minimum eigenvalue among
/// the selected conditions.
#[allow(non_snake_case)]
pub fn synthesis_margin(
    problem: &LinearQuadraticProblem,
    storage: &QuadraticStorage,
    P: &DMatrix<f64>,
    conditions: Conditions,
) -> f64 {
    let margin_i = || linalg::min_eigenvalue(&assemble_condition_i(problem, storage));
    let margin_ii = || linalg::min_eigenvalue(&assemble_condition_ii(problem, storage, P));
    match conditions {
        Conditions::Both => margin_i().min(margin_ii()),
        Conditions::DiscountedOnly => margin_i(),
        Conditions::RotatedOnly => margin_ii(),
    }
}

/// Searches for `Λ` satisfying the selected conditions with margin above
/// `epsilon`. Deterministic for a given seed.
pub fn synthesize_certificate(
    problem: &LinearQuadraticProblem,
    opts: SynthesisOptions,
) -> Result<Synthesis, CertificateError> {
    problem.gamma.strict().map_err(LqrError::from)?;
    let sol = lqr::solve_dare(problem, 1e-13)?;
    let n = problem.state_dim();
    let dim = n * (n + 1) / 2;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<Vec<f64>> = (0..opts.starts)
        .map(|_| {
            // Log-uniform scale in [0.1, 10] times a standard-normal-ish direction.
            let scale = 10f64.powf(rng.random_range(-1.0..1.0));
            (0..dim)
                .map(|_| scale * (rng.random::<f64>() + rng.random::<f64>() + rng.random::<f64>() - 1.5) * 2.0)
                .collect()
        })
        .collect();

    let objective = |params: &[f64]| {
        let storage = QuadraticStorage::from_params(n, params);
        let margin = synthesis_margin(problem, &storage, &sol.P, opts.conditions);
        if margin.is_finite() {
            -margin
        } else {
            f64::INFINITY
        }
    };

    let results: Vec<(usize, Vec<f64>, f64)> = starts
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let found = nelder_mead(objective, x0, opts.search);
            (i, found.x, -found.value)
        })
        .collect();

    let (start_index, params, margin) = results
        .into_iter()
        .reduce(|best, next| if next.2 > best.2 { next } else { best })
        .expect("at least one start");
    let storage = QuadraticStorage::from_params(n, &params);
    let report = verify_with_value(problem, &storage, &sol.P, opts.epsilon);
    let accepted = match opts.conditions {
        Conditions::Both => report.feasible,
        Conditions::DiscountedOnly => report.margin_i > opts.epsilon,
        Conditions::RotatedOnly => report.margin_ii > opts.epsilon,
    };
    if !accepted {
        return Err(CertificateError::Infeasible {
            best_margin: margin,
            epsilon: opts.epsilon,
            storage,
        });
    }
    Ok(Synthesis {
        storage,
        margin,
        report,
        start_index,
    })
}

/// Smallest γ at which condition (ii) holds with `Λ = 0`.
pub fn lambda_zero_threshold(
    template: &LinearQuadraticProblem,
    opts: BisectionOptions,
) -> Result<ThresholdResult, LqrError> {
    let zero = QuadraticStorage::zero(template.state_dim());
    bisect_threshold(Criterion::LambdaZero, opts, |g| {
        let problem = template.with_gamma(g)?;
        let sol = lqr::solve_dare(&problem, 1e-12)?;
        let h = assemble_condition_ii(&problem, &zero, &sol.P);
        Ok::<_, LqrError>(linalg::min_eigenvalue(&h) > 0.0)
    })
}
