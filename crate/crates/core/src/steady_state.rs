//! Optimal steady states of the discounted problem.
//!
//! For scalar problems the candidate steady states are the `x` with some
//! admissible `u` satisfying `x = f(x, u)`. Among them the optimal one
//! minimizes `L(x, u) + (γ - 1) V(x)`. That objective is unchanged when a
//! constant `c` is subtracted from `L` and `c / (1 - γ)` from `V`, so raw and
//! normalized data give the same answer.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dp::{value_iteration, DpError, DpOptions, GridValueFunction};
use crate::model::{Dynamics, LinearQuadraticProblem, ModelError, ScalarGridProblem};
use crate::sim::{simulate_grid, SimError};

#[derive(Debug, Error)]
pub enum SteadyStateError {
    #[error("no admissible steady state on the state interval")]
    NoSteadyState,
    #[error("steady-state residual {residual:e} at x = {x} exceeds 1e-10")]
    Residual { x: f64, residual: f64 },
    #[error("value function grid does not cover the state interval")]
    GridMismatch,
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Input holding a state in place.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SteadyInput {
    Input(f64),
    /// No admissible input; carries the unconstrained solution when it is
    /// known in closed form.
    OutOfRange(Option<f64>),
    /// The input has no effect on the next state at `x`.
    Singular,
}

const ROOT_SAMPLES: usize = 2001;
const MULTIPLICITY_TOL: f64 = 1e-9;

/// Solves `x = f(x, u)` for `u`.
pub fn steady_input(problem: &ScalarGridProblem, x: f64) -> SteadyInput {
    let range = problem.u_interval();
    let classify = |u: f64| {
        let slack = 1e-12 * range.width().max(1.0);
        if u >= range.lo - slack && u <= range.hi + slack {
            SteadyInput::Input(u.clamp(range.lo, range.hi))
        } else {
            SteadyInput::OutOfRange(Some(u))
        }
    };
    match problem.dynamics() {
        Dynamics::Family { a, b } => {
            let gain = a * (1.0 - x);
            if gain == 0.0 {
                return SteadyInput::Singular;
            }
            classify((1.0 - b) * x / gain)
        }
        Dynamics::Expr(_) => {
            let g = |u: f64| problem.f(x, u) - x;
            let step = range.width() / (ROOT_SAMPLES - 1) as f64;
            let mut lo = range.lo;
            let mut g_lo = g(lo);
            if g_lo == 0.0 {
                return SteadyInput::Input(lo);
            }
            for k in 1..ROOT_SAMPLES {
                let hi = if k == ROOT_SAMPLES - 1 { range.hi } else { range.lo + k as f64 * step };
                let g_hi = g(hi);
                if g_hi == 0.0 {
                    return SteadyInput::Input(hi);
                }
                if g_lo.signum() != g_hi.signum() {
                    let (mut a, mut b) = (lo, hi);
                    for _ in 0..200 {
                        let mid = 0.5 * (a + b);
                        if mid <= a || mid >= b {
                            break;
                        }
                        let gm = g(mid);
                        if gm == 0.0 {
                            return SteadyInput::Input(mid);
                        }
                        if gm.signum() == g_lo.signum() {
                            a = mid;
                        } else {
                            b = mid;
                        }
                    }
                    let u = if g(a).abs() <= g(b).abs() { a } else { b };
                    return SteadyInput::Input(u);
                }
                lo = hi;
                g_lo = g_hi;
            }
            SteadyInput::OutOfRange(None)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SteadyStateOptions {
    pub scan_points: usize,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self { scan_points: 100_001 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyState {
    pub x_s: f64,
    pub u_s: f64,
    /// `L(x_s, u_s) + (γ - 1) V(x_s)`, the rotated cost at the steady pair.
    pub cost_tilde: f64,
    /// `L(x_s, u_s)` for the problem as given (including any shift).
    pub stage_cost: f64,
    pub gamma: f64,
    /// `|x_s - f(x_s, u_s)|`.
    pub residual: f64,
    /// Another local minimum of the scan lies within 1e-9 of the optimum.
    pub multiple: bool,
}

/// Minimizes `L(x, u_s(x)) + (γ - 1) V(x)` over admissible steady states.
pub fn solve_optimal_steady_state(
    problem: &ScalarGridProblem,
    value: &GridValueFunction,
    opts: SteadyStateOptions,
) -> Result<SteadyState, SteadyStateError> {
    let range = problem.x_interval();
    if value.grid.lo() > range.lo || value.grid.hi() < range.hi {
        return Err(SteadyStateError::GridMismatch);
    }
    let gamma = problem.gamma();
    let objective = |x: f64| -> Option<(f64, f64)> {
        match steady_input(problem, x) {
            SteadyInput::Input(u) => {
                let v = value.value_at(x)?;
                Some((problem.cost(x, u) + (gamma - 1.0) * v, u))
            }
            _ => None,
        }
    };

    let n = opts.scan_points.max(3);
    let step = range.width() / (n - 1) as f64;
    let node = |k: usize| if k == n - 1 { range.hi } else { range.lo + k as f64 * step };
    let scan: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|k| objective(node(k)).map(|(j, _)| j))
        .collect();
    let best = scan
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(SteadyStateError::NoSteadyState);
    }
    // Local minima of the scan within the tie tolerance, smallest x first.
    let is_local_min = |k: usize| {
        let Some(v) = scan[k] else { return false };
        let left = k == 0 || scan[k - 1].is_none_or(|w| v <= w);
        let right = k + 1 == n || scan[k + 1].is_none_or(|w| v < w);
        left && right
    };
    let candidates: Vec<usize> = (0..n)
        .filter(|&k| scan[k].is_some_and(|v| v - best <= MULTIPLICITY_TOL) && is_local_min(k))
        .collect();
    let best_k = candidates[0];
    let best = scan[best_k].expect("candidate is admissible");
    let multiple = candidates.len() > 1;

    let lo = if best_k > 0 && scan[best_k - 1].is_some() { node(best_k - 1) } else { node(best_k) };
    let hi = if best_k + 1 < n && scan[best_k + 1].is_some() { node(best_k + 1) } else { node(best_k) };
    let (mut x, mut j) = (node(best_k), best);
    if hi > lo {
        let xr = golden_section(|x| objective(x).map_or(f64::INFINITY, |(j, _)| j), lo, hi, 1e-13);
        if let Some((jr, _)) = objective(xr) {
            if jr < j {
                x = xr;
                j = jr;
            }
        }
    }
    let (_, u) = objective(x).expect("refined point is admissible");
    let residual = (x - problem.f(x, u)).abs();
    if residual > 1e-10 {
        return Err(SteadyStateError::Residual { x, residual });
    }
    Ok(SteadyState {
        x_s: x,
        u_s: u,
        cost_tilde: j,
        stage_cost: problem.cost(x, u),
        gamma,
        residual,
        multiple,
    })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// The origin, which is the optimal steady state of every linear-quadratic
/// problem with positive definite weights.
pub fn linear_quadratic_steady_state(problem: &LinearQuadraticProblem) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::zeros(problem.state_dim()),
        DVector::zeros(problem.input_dim()),
    )
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub dp: DpOptions,
    pub steady: SteadyStateOptions,
    pub sim_steps: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            dp: DpOptions::default(),
            steady: SteadyStateOptions::default(),
            sim_steps: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub steady: SteadyState,
    pub dp_iterations: usize,
    /// Final states of closed-loop runs from 10%, 50% and 90% of the state
    /// interval.
    pub simulated: [f64; 3],
    /// Largest distance between a simulated final state and `x_s`, in grid
    /// cells.
    pub sim_gap_cells: f64,
}

pub const SWEEP_STARTS: [f64; 3] = [0.1, 0.5, 0.9];

/// Solves the DP and the steady-state problem for every discount factor.
/// Rows come back in input order.
pub fn sweep_gamma(
    problem: &ScalarGridProblem,
    gammas: &[f64],
    opts: SweepOptions,
) -> Result<Vec<SweepRow>, SteadyStateError> {
    gammas
        .par_iter()
        .map(|&gamma| {
            let p = problem.with_gamma(gamma)?;
            let (value, policy) = value_iteration(&p, opts.dp)?;
            let steady = solve_optimal_steady_state(&p, &value, opts.steady)?;
            let range = p.x_interval();
            let mut simulated = [0.0; 3];
            for (slot, frac) in simulated.iter_mut().zip(SWEEP_STARTS) {
                let x0 = range.lo + frac * range.width();
                let traj = simulate_grid(&p, &policy, x0, opts.sim_steps, steady.x_s)?;
                *slot = *traj.states.last().expect("trajectory is nonempty");
            }
            let cell = p.x_grid().spacing();
            let sim_gap_cells = simulated
                .iter()
                .map(|s| (s - steady.x_s).abs() / cell)
                .fold(0.0, f64::max);
            Ok(SweepRow {
                gamma,
                steady,
                dp_iterations: value.iterations,
                simulated,
                sim_gap_cells,
            })
        })
        .collect()
}
