//! Discounted LQR: Riccati fixed-point iteration, closed-loop diagnostics, and
//! bisection for the critical discount factors of a linear-quadratic problem.
//!
//! The discounted Riccati map is
//!
//! ```text
//! P <- Q + γ AᵀPA - γ² AᵀPB (R + γ BᵀPB)⁻¹ BᵀPA
//! ```
//!
//! which is the undiscounted map applied to `(√γ A, √γ B)`. The optimal
//! policy is `u = K x` with `K = -(R + γ BᵀPB)⁻¹ γ BᵀPA`.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::linalg;
use crate::model::{LinearQuadraticProblem, ModelError};

pub use crate::linalg::spectral_radius;

#[derive(Debug, Error)]
pub enum LqrError {
    #[error(
        "Riccati iteration did not converge at gamma = {gamma} after {iterations} iterations \
         (last change {last_change:e}); the discounted pair may not be stabilizable"
    )]
    Divergence {
        gamma: f64,
        iterations: usize,
        last_change: f64,
    },
    #[error("R + γBᵀPB is not positive definite")]
    Singular,
    #[error(
        "criterion `{criterion}` does not change across [{low}, {high}] \
         (holds at low: {holds_low}, holds at high: {holds_high})"
    )]
    Bracketing {
        criterion: Criterion,
        low: f64,
        high: f64,
        holds_low: bool,
        holds_high: bool,
    },
    #[error("Q must be positive definite for the comparison-constant criterion")]
    IndefiniteQ,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[allow(non_snake_case)]
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// `V*(x) = xᵀPx`
    pub P: DMatrix<f64>,
    /// `π*(x) = Kx`
    pub K: DMatrix<f64>,
    /// Sup-norm of `P - Riccati(P)` at return.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DareOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200_000,
        }
    }
}

/// One application of the discounted Riccati map.
#[allow(non_snake_case)]
pub fn riccati_map(problem: &LinearQuadraticProblem, P: &DMatrix<f64>) -> Result<DMatrix<f64>, LqrError> {
    let (A, B, Q, R) = (&problem.A, &problem.B, &problem.Q, &problem.R);
    let g = problem.gamma();
    let pb = P * B;
    let s = R + B.transpose() * &pb * g;
    let bpa = pb.transpose() * A;
    let chol = s.cholesky().ok_or(LqrError::Singular)?;
    let solved = chol.solve(&bpa);
    let next = Q + A.transpose() * P * A * g - bpa.transpose() * solved * (g * g);
    Ok(linalg::symmetrize(&next))
}

/// Optimal gain for the value matrix `P`.
#[allow(non_snake_case)]
pub fn gain(problem: &LinearQuadraticProblem, P: &DMatrix<f64>) -> Result<DMatrix<f64>, LqrError> {
    let (A, B, R) = (&problem.A, &problem.B, &problem.R);
    let g = problem.gamma();
    let s = R + B.transpose() * P * B * g;
    let chol = s.cholesky().ok_or(LqrError::Singular)?;
    Ok(-chol.solve(&(B.transpose() * P * A * g)))
}

/// Solves the discounted Riccati equation by fixed-point iteration from `P = Q`.
pub fn solve_dare(problem: &LinearQuadraticProblem, tol: f64) -> Result<RiccatiSolution, LqrError> {
    solve_dare_with(
        problem,
        DareOptions {
            tol,
            ..DareOptions::default()
        },
    )
}

#[allow(non_snake_case)]
pub fn solve_dare_with(
    problem: &LinearQuadraticProblem,
    opts: DareOptions,
) -> Result<RiccatiSolution, LqrError> {
    let mut P = problem.Q.clone();
    let mut last_change = f64::INFINITY;
    for iteration in 1..=opts.max_iter {
        let next = riccati_map(problem, &P)?;
        last_change = linalg::max_abs(&(&next - &P));
        P = next;
        if !last_change.is_finite() || linalg::max_abs(&P) > 1e150 {
            break;
        }
        if last_change <= opts.tol {
            let residual = linalg::max_abs(&(&riccati_map(problem, &P)? - &P));
            let K = gain(problem, &P)?;
            return Ok(RiccatiSolution {
                P,
                K,
                residual,
                iterations: iteration,
            });
        }
    }
    Err(LqrError::Divergence {
        gamma: problem.gamma(),
        iterations: opts.max_iter,
        last_change,
    })
}

#[allow(non_snake_case)]
pub fn closed_loop_matrix(problem: &LinearQuadraticProblem, K: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(K.shape(), (problem.input_dim(), problem.state_dim()), "gain has wrong shape");
    &problem.A + &problem.B * K
}

/// Largest eigenvalue of `Q^{-1/2} P Q^{-1/2}`, the smallest `C` with
/// `xᵀPx <= C xᵀQx`.
#[allow(non_snake_case)]
pub fn comparison_constant(problem: &LinearQuadraticProblem, P: &DMatrix<f64>) -> Result<f64, LqrError> {
    let chol = problem.Q.clone().cholesky().ok_or(LqrError::IndefiniteQ)?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or(LqrError::IndefiniteQ)?;
    Ok(linalg::max_eigenvalue(&(&l_inv * P * l_inv.transpose())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// `ρ(A + BK) < 1`
    Stabilizing,
    /// `P - (A+BK)ᵀP(A+BK) ≻ 0`
    Lyapunov,
    /// A constant `1 <= C < 1/(1-γ)` with `V* <= C inf_u L` exists.
    GaitsgoryC,
    /// The rotated-cost condition holds with zero storage.
    LambdaZero,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Stabilizing => "stabilizing",
            Criterion::Lyapunov => "lyapunov",
            Criterion::GaitsgoryC => "gaitsgory_c",
            Criterion::LambdaZero => "lambda_zero",
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub gamma_critical: f64,
    /// Final bisection interval; the criterion fails at `.0` and holds at `.1`.
    pub bracket: (f64, f64),
    pub criterion: Criterion,
    /// The criterion already holds at the bracket floor, so no crossing
    /// exists inside the bracket.
    pub at_floor: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BisectionOptions {
    pub low: f64,
    pub high: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BisectionOptions {
    fn default() -> Self {
        Self {
            low: 0.01,
            high: 0.999,
            tol: 1e-9,
            max_iter: 60,
        }
    }
}

/// Smallest γ in the bracket at which `holds` becomes true, assuming it is
/// monotone in γ. Both endpoints are evaluated first.
pub fn bisect_threshold<E>(
    criterion: Criterion,
    opts: BisectionOptions,
    mut holds: impl FnMut(f64) -> Result<bool, E>,
) -> Result<ThresholdResult, E>
where
    E: From<LqrError>,
{
    let (mut low, mut high) = (opts.low, opts.high);
    let holds_low = holds(low)?;
    let holds_high = holds(high)?;
    if holds_low && holds_high {
        return Ok(ThresholdResult {
            gamma_critical: low,
            bracket: (low, low),
            criterion,
            at_floor: true,
        });
    }
    if holds_low || !holds_high {
        return Err(LqrError::Bracketing {
            criterion,
            low,
            high,
            holds_low,
            holds_high,
        }
        .into());
    }
    for _ in 0..opts.max_iter {
        if high - low <= opts.tol {
            break;
        }
        let mid = 0.5 * (low + high);
        if holds(mid)? {
            high = mid;
        } else {
            low = mid;
        }
    }
    Ok(ThresholdResult {
        gamma_critical: high,
        bracket: (low, high),
        criterion,
        at_floor: false,
    })
}

const STABILITY_MARGIN: f64 = 1e-9;
const THRESHOLD_DARE_TOL: f64 = 1e-12;

#[allow(non_snake_case)]
pub fn is_stabilizing(problem: &LinearQuadraticProblem) -> Result<bool, LqrError> {
    let sol = solve_dare(problem, THRESHOLD_DARE_TOL)?;
    let rho = spectral_radius(&closed_loop_matrix(problem, &sol.K));
    Ok(rho < 1.0 - STABILITY_MARGIN)
}

#[allow(non_snake_case)]
pub fn is_lyapunov(problem: &LinearQuadraticProblem) -> Result<bool, LqrError> {
    let sol = solve_dare(problem, THRESHOLD_DARE_TOL)?;
    let Acl = closed_loop_matrix(problem, &sol.K);
    let decrease = &sol.P - Acl.transpose() * &sol.P * &Acl;
    Ok(linalg::min_eigenvalue(&decrease) > 0.0)
}

pub fn has_comparison_constant(problem: &LinearQuadraticProblem) -> Result<bool, LqrError> {
    let sol = solve_dare(problem, THRESHOLD_DARE_TOL)?;
    let c = comparison_constant(problem, &sol.P)?;
    Ok(c.max(1.0) < 1.0 / (1.0 - problem.gamma()))
}

pub fn stabilizing_threshold(
    template: &LinearQuadraticProblem,
    opts: BisectionOptions,
) -> Result<ThresholdResult, LqrError> {
    bisect_threshold(Criterion::Stabilizing, opts, |g| {
        is_stabilizing(&template.with_gamma(g)?)
    })
}

pub fn lyapunov_threshold(
    template: &LinearQuadraticProblem,
    opts: BisectionOptions,
) -> Result<ThresholdResult, LqrError> {
    bisect_threshold(Criterion::Lyapunov, opts, |g| is_lyapunov(&template.with_gamma(g)?))
}

pub fn gaitsgory_c_threshold(
    template: &LinearQuadraticProblem,
    opts: BisectionOptions,
) -> Result<ThresholdResult, LqrError> {
    if template.Q.clone().cholesky().is_none() {
        return Err(LqrError::IndefiniteQ);
    }
    bisect_threshold(Criterion::GaitsgoryC, opts, |g| {
        has_comparison_constant(&template.with_gamma(g)?)
    })
}
