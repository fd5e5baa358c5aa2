//! Cost rotations, grid-based dissipativity checks and the identities that
//! tie discounted and undiscounted formulations together.
//!
//! All scalar checks expect the *normalized* problem: the stage cost shifted
//! so that it vanishes at the optimal steady state, and the value function
//! shifted by the matching `L(x_s, u_s) / (1 - γ)`. [`analyze`] produces that
//! setting from a raw problem.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dp::{
    numeric_gradient, value_iteration, BellmanOperator, DpError, DpOptions, GridPolicy,
    GridValueFunction,
};
use crate::model::{LinearQuadraticProblem, ModelError, ScalarGridProblem};
use crate::sim::{simulate_grid, simulate_linear, SimError};
use crate::steady_state::{
    solve_optimal_steady_state, SteadyState, SteadyStateError, SteadyStateOptions,
};

#[derive(Debug, Error)]
pub enum DissipativityError {
    #[error("C = {c} must satisfy 1 <= C < 1/(1 - gamma) = {bound}")]
    InvalidC { c: f64, bound: f64 },
    #[error("annulus [{phi}, {phi_big}] is empty or negative")]
    InvalidAnnulus { phi: f64, phi_big: f64 },
    #[error("value functions live on different grids or discounts")]
    GridMismatch,
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    SteadyState(#[from] SteadyStateError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `λ(x) = -g (x - x_s) + q (x - x_s)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StorageFunction {
    pub x_s: f64,
    pub gradient: f64,
    pub curvature: f64,
}

/// Curvature of the default storage.
pub const STORAGE_CURVATURE: f64 = 50.0;
/// Half-width of the central difference used for the storage gradient, in
/// state-grid cells.
pub const GRADIENT_CELLS: f64 = 8.0;

impl StorageFunction {
    pub fn new(x_s: f64, gradient: f64, curvature: f64) -> Self {
        Self {
            x_s,
            gradient,
            curvature,
        }
    }

    pub fn zero(x_s: f64) -> Self {
        Self::new(x_s, 0.0, 0.0)
    }

    /// Gradient taken from the value table at `x_s` with step `h`.
    pub fn from_value(
        value: &GridValueFunction,
        x_s: f64,
        h: f64,
        curvature: f64,
    ) -> Result<Self, DpError> {
        Ok(Self::new(x_s, numeric_gradient(value, x_s, h)?, curvature))
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let d = x - self.x_s;
        -self.gradient * d + self.curvature * d * d
    }

    /// Storage values at the nodes of `grid`.
    pub fn on_nodes(&self, grid: &crate::grid::UniformGrid) -> Vec<f64> {
        grid.nodes().iter().map(|&x| self.eval(x)).collect()
    }
}

/// Shifts cost and value so that both vanish at the steady state.
pub fn normalize(
    problem: &ScalarGridProblem,
    value: &GridValueFunction,
    steady: &SteadyState,
) -> Result<(ScalarGridProblem, GridValueFunction), DissipativityError> {
    let gamma = problem.discount().strict()?;
    let level = steady.stage_cost;
    Ok((problem.shifted(level), value.shifted(-level / (1.0 - gamma))))
}

#[derive(Debug, Clone, Copy)]
pub struct AnalysisOptions {
    pub dp: DpOptions,
    pub steady: SteadyStateOptions,
    pub gradient_cells: f64,
    pub curvature: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            dp: DpOptions::default(),
            steady: SteadyStateOptions::default(),
            gradient_cells: GRADIENT_CELLS,
            curvature: STORAGE_CURVATURE,
        }
    }
}

/// A solved scalar problem in normalized form with its default storage.
#[derive(Debug, Clone)]
pub struct Analysis {
    /// Problem with the steady-state cost level subtracted.
    pub problem: ScalarGridProblem,
    /// Normalized value function.
    pub value: GridValueFunction,
    pub policy: GridPolicy,
    /// Steady state of the raw problem.
    pub steady: SteadyState,
    pub storage: StorageFunction,
}

/// Value iteration, optimal steady state, normalization and storage.
pub fn analyze(
    problem: &ScalarGridProblem,
    opts: AnalysisOptions,
) -> Result<Analysis, DissipativityError> {
    let (value, policy) = value_iteration(problem, opts.dp)?;
    let steady = solve_optimal_steady_state(problem, &value, opts.steady)?;
    let (normalized, value) = normalize(problem, &value, &steady)?;
    let h = opts.gradient_cells * value.grid.spacing();
    let storage = StorageFunction::from_value(&value, steady.x_s, h, opts.curvature)?;
    Ok(Analysis {
        problem: normalized,
        value,
        policy,
        steady,
        storage,
    })
}

fn value_at(value: &GridValueFunction, x: f64) -> Result<f64, DpError> {
    crate::dp::evaluate_value(value, x)
}

/// `L(x, u) + λ(x) - γ λ(f(x, u))`.
pub fn modified_cost_hat(
    problem: &ScalarGridProblem,
    storage: &StorageFunction,
    x: f64,
    u: f64,
) -> f64 {
    problem.cost(x, u) + storage.eval(x) - problem.gamma() * storage.eval(problem.f(x, u))
}

/// `L(x, u) + (γ - 1) V(f(x, u))`.
pub fn rotated_cost_tilde(
    problem: &ScalarGridProblem,
    value: &GridValueFunction,
    x: f64,
    u: f64,
) -> Result<f64, DpError> {
    let next = problem.f(x, u);
    Ok(problem.cost(x, u) + (problem.gamma() - 1.0) * value_at(value, next)?)
}

/// `L̂(x, u) + (γ - 1) (V + λ)(f(x, u))`.
pub fn rotated_cost_hat_tilde(
    problem: &ScalarGridProblem,
    storage: &StorageFunction,
    value: &GridValueFunction,
    x: f64,
    u: f64,
) -> Result<f64, DpError> {
    let next = problem.f(x, u);
    let v_hat = value_at(value, next)? + storage.eval(next);
    Ok(modified_cost_hat(problem, storage, x, u) + (problem.gamma() - 1.0) * v_hat)
}

/// Exhaustive check of both dissipation inequalities on all grid pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSdsdReport {
    pub gamma: f64,
    pub epsilon: f64,
    /// `min L + λ - γ λ∘f - ε (x - x_s)²`.
    pub margin_i: f64,
    pub witness_i: (f64, f64),
    /// `min L + λ - λ∘f + (γ - 1) V∘f - ε (x - x_s)²`.
    pub margin_ii: f64,
    pub witness_ii: (f64, f64),
    /// Largest `ε` for which the respective inequality holds on the grid.
    pub max_epsilon_i: f64,
    pub max_epsilon_ii: f64,
    pub pairs: usize,
}

impl GridSdsdReport {
    pub fn feasible(&self) -> bool {
        self.margin_i >= 0.0 && self.margin_ii >= 0.0
    }
}

#[derive(Clone, Copy)]
struct RowScan {
    margin_i: f64,
    arg_i: usize,
    margin_ii: f64,
    arg_ii: usize,
    ratio_i: f64,
    ratio_ii: f64,
}

pub fn check_sdsd_on_grid(
    problem: &ScalarGridProblem,
    storage: &StorageFunction,
    value: &GridValueFunction,
    epsilon: f64,
) -> Result<GridSdsdReport, DissipativityError> {
    let x_grid = problem.x_grid();
    let u_grid = problem.u_grid();
    if value.grid != x_grid {
        return Err(DissipativityError::GridMismatch);
    }
    let gamma = problem.gamma();
    let rows: Vec<Result<RowScan, DpError>> = x_grid
        .nodes()
        .par_iter()
        .map(|&x| {
            let d2 = (x - storage.x_s).powi(2);
            let lam_x = storage.eval(x);
            let mut row = RowScan {
                margin_i: f64::INFINITY,
                arg_i: 0,
                margin_ii: f64::INFINITY,
                arg_ii: 0,
                ratio_i: f64::INFINITY,
                ratio_ii: f64::INFINITY,
            };
            for (j, &u) in u_grid.nodes().iter().enumerate() {
                let next = problem.f(x, u);
                let cost = problem.cost(x, u);
                let lam_next = storage.eval(next);
                let lhs_i = cost + lam_x - gamma * lam_next;
                let lhs_ii = cost + lam_x - lam_next + (gamma - 1.0) * value_at(value, next)?;
                let m_i = lhs_i - epsilon * d2;
                let m_ii = lhs_ii - epsilon * d2;
                if m_i < row.margin_i {
                    row.margin_i = m_i;
                    row.arg_i = j;
                }
                if m_ii < row.margin_ii {
                    row.margin_ii = m_ii;
                    row.arg_ii = j;
                }
                row.ratio_i = row.ratio_i.min(ratio(lhs_i, d2));
                row.ratio_ii = row.ratio_ii.min(ratio(lhs_ii, d2));
            }
            Ok(row)
        })
        .collect();

    let mut report = GridSdsdReport {
        gamma,
        epsilon,
        margin_i: f64::INFINITY,
        witness_i: (0.0, 0.0),
        margin_ii: f64::INFINITY,
        witness_ii: (0.0, 0.0),
        max_epsilon_i: f64::INFINITY,
        max_epsilon_ii: f64::INFINITY,
        pairs: x_grid.len() * u_grid.len(),
    };
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        let x = x_grid.nodes()[i];
        if row.margin_i < report.margin_i {
            report.margin_i = row.margin_i;
            report.witness_i = (x, u_grid.nodes()[row.arg_i]);
        }
        if row.margin_ii < report.margin_ii {
            report.margin_ii = row.margin_ii;
            report.witness_ii = (x, u_grid.nodes()[row.arg_ii]);
        }
        report.max_epsilon_i = report.max_epsilon_i.min(row.ratio_i);
        report.max_epsilon_ii = report.max_epsilon_ii.min(row.ratio_ii);
    }
    Ok(report)
}

/// Largest `ε` with `lhs ≥ ε d2` for one pair.
fn ratio(lhs: f64, d2: f64) -> f64 {
    if d2 > 0.0 {
        lhs / d2
    } else if lhs >= 0.0 {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    }
}

/// Value iteration on the modified cost.
///
/// The successor storage `λ(f(x, u))` is replaced by the linear interpolant of
/// the nodal storage values, the same interpolation the value table uses.
/// With that choice the modified Bellman operator is the original one
/// conjugated by the nodal shift `V ↦ V + λ`, so the greedy inputs agree
/// exactly rather than up to interpolation error.
pub fn hat_value_iteration(
    problem: &ScalarGridProblem,
    storage: &StorageFunction,
    opts: DpOptions,
) -> Result<(GridValueFunction, GridPolicy), DissipativityError> {
    let gamma = problem.discount().strict()?;
    let grid = problem.x_grid();
    let nodal = storage.on_nodes(&grid);
    let op = BellmanOperator::with_cost(problem, gamma, |x, u| {
        let next = grid
            .interpolate(&nodal, problem.f(x, u))
            .expect("dynamics keep the state on the grid");
        problem.cost(x, u) + storage.eval(x) - gamma * next
    })?;
    Ok(op.solve(opts)?)
}

/// `max |V̂ - V - λ|` over the nodes.
pub fn check_value_shift(
    storage: &StorageFunction,
    value: &GridValueFunction,
    value_hat: &GridValueFunction,
) -> Result<f64, DissipativityError> {
    if value.grid != value_hat.grid || value.gamma != value_hat.gamma {
        return Err(DissipativityError::GridMismatch);
    }
    Ok(value
        .grid
        .nodes()
        .iter()
        .zip(value.values.iter().zip(&value_hat.values))
        .map(|(&x, (v, vh))| (vh - v - storage.eval(x)).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TelescopicReport {
    /// `|Σ L̃(x_k, u_k) - V(x_0)|`.
    pub residual: f64,
    /// `|V(x_N)|`.
    pub tail: f64,
    /// `|V(x_N)| + N · interpolation slack`.
    pub bound: f64,
}

/// Sums the rotated cost along the closed loop from `x0` and compares with
/// the value at `x0`.
pub fn telescopic_check(
    problem: &ScalarGridProblem,
    value: &GridValueFunction,
    policy: &GridPolicy,
    x0: f64,
    steps: usize,
) -> Result<TelescopicReport, DissipativityError> {
    let traj = simulate_grid(problem, policy, x0, steps, x0)?;
    let mut sum = 0.0;
    for (x, u) in traj.states.iter().zip(&traj.inputs) {
        sum += rotated_cost_tilde(problem, value, *x, *u)?;
    }
    let tail = value_at(value, *traj.states.last().expect("nonempty"))?.abs();
    Ok(TelescopicReport {
        residual: (sum - value_at(value, x0)?).abs(),
        tail,
        bound: tail + steps as f64 * value.interpolation_slack(),
    })
}

/// Linear-quadratic counterpart with `V(x) = x'Px` and `u = Kx`.
#[allow(non_snake_case)]
pub fn telescopic_check_linear(
    problem: &LinearQuadraticProblem,
    P: &DMatrix<f64>,
    K: &DMatrix<f64>,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<TelescopicReport, DissipativityError> {
    let traj = simulate_linear(problem, K, x0, steps)?;
    let v = |x: &DVector<f64>| (x.transpose() * P * x)[(0, 0)];
    let gamma = problem.gamma();
    let mut sum = 0.0;
    for k in 0..steps {
        let (x, u) = (&traj.states[k], &traj.inputs[k]);
        sum += problem.stage_cost(x, u) + (gamma - 1.0) * v(&traj.states[k + 1]);
    }
    let tail = v(&traj.states[steps]).abs();
    Ok(TelescopicReport {
        residual: (sum - v(x0)).abs(),
        tail,
        bound: tail,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecreaseStep {
    pub k: usize,
    pub distance: f64,
    pub v_hat: f64,
    /// `V̂(x_{k+1}) - V̂(x_k)`.
    pub decrease: f64,
    /// `decrease + ε |x_k - x_s|²`; positive values violate the decrease
    /// condition.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecreaseReport {
    pub epsilon: f64,
    pub steps: Vec<DecreaseStep>,
    pub worst_violation: f64,
    /// Interpolation slack of the `V̂` table (zero for closed-form values).
    pub grid_slack: f64,
}

impl DecreaseReport {
    pub fn holds(&self, slack: f64) -> bool {
        self.worst_violation <= slack
    }

    fn from_series(epsilon: f64, distances: &[f64], v_hat: &[f64], grid_slack: f64) -> Self {
        let steps: Vec<DecreaseStep> = (0..v_hat.len() - 1)
            .map(|k| {
                let decrease = v_hat[k + 1] - v_hat[k];
                DecreaseStep {
                    k,
                    distance: distances[k],
                    v_hat: v_hat[k],
                    decrease,
                    violation: decrease + epsilon * distances[k] * distances[k],
                }
            })
            .collect();
        let worst_violation = steps
            .iter()
            .map(|s| s.violation)
            .fold(f64::NEG_INFINITY, f64::max);
        Self {
            epsilon,
            steps,
            worst_violation,
            grid_slack,
        }
    }
}

/// Evaluates `V̂ = V + λ` along the closed loop from `x0`.
pub fn lyapunov_decrease_check(
    problem: &ScalarGridProblem,
    storage: &StorageFunction,
    value: &GridValueFunction,
    policy: &GridPolicy,
    x0: f64,
    steps: usize,
    epsilon: f64,
) -> Result<DecreaseReport, DissipativityError> {
    let traj = simulate_grid(problem, policy, x0, steps, storage.x_s)?;
    let v_hat = traj
        .states
        .iter()
        .map(|&x| Ok(value_at(value, x)? + storage.eval(x)))
        .collect::<Result<Vec<f64>, DpError>>()?;
    let nodal = GridValueFunction::from_values(
        value.grid.clone(),
        value
            .values
            .iter()
            .zip(storage.on_nodes(&value.grid))
            .map(|(v, l)| v + l)
            .collect(),
        value.gamma,
    );
    Ok(DecreaseReport::from_series(
        epsilon,
        &traj.distances,
        &v_hat,
        nodal.interpolation_slack(),
    ))
}

/// Linear-quadratic counterpart with `V̂(x) = x' Θ x` and `u = Kx`.
pub fn lyapunov_decrease_check_linear(
    problem: &LinearQuadraticProblem,
    theta: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    x0: &DVector<f64>,
    steps: usize,
    epsilon: f64,
) -> Result<DecreaseReport, DissipativityError> {
    let traj = simulate_linear(problem, gain, x0, steps)?;
    let v_hat: Vec<f64> = traj
        .states
        .iter()
        .map(|x| (x.transpose() * theta * x)[(0, 0)])
        .collect();
    Ok(DecreaseReport::from_series(epsilon, &traj.distances, &v_hat, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaitsgoryReport {
    pub c: f64,
    /// State nodes inside the annulus.
    pub nodes: usize,
    /// `min C · inf_u L̂(x, u) - V̂(x)` over the annulus.
    pub slack_inf: f64,
    pub witness_inf: f64,
    /// `min C · L̂(x, π(x)) - V̂(x)` over the annulus.
    pub slack_policy: f64,
    pub witness_policy: f64,
}

impl GaitsgoryReport {
    pub fn holds_inf(&self) -> bool {
        self.slack_inf >= 0.0
    }

    pub fn holds_policy(&self) -> bool {
        self.slack_policy >= 0.0
    }
}

/// Checks `V̂ ≤ C L̂` on the state nodes with `φ ≤ |x - x_s| ≤ Φ`, once with
/// the infimum over the input grid and once with the policy input.
#[allow(clippy::too_many_arguments)]
pub fn check_gaitsgory_pointwise(
    problem: &ScalarGridProblem,
    storage: &StorageFunction,
    value: &GridValueFunction,
    policy: &GridPolicy,
    c: f64,
    phi: f64,
    phi_big: f64,
) -> Result<GaitsgoryReport, DissipativityError> {
    let gamma = problem.gamma();
    let bound = 1.0 / (1.0 - gamma);
    if !(c >= 1.0 && c < bound) {
        return Err(DissipativityError::InvalidC { c, bound });
    }
    if !(phi >= 0.0 && phi <= phi_big) {
        return Err(DissipativityError::InvalidAnnulus { phi, phi_big });
    }
    let x_grid = problem.x_grid();
    if value.grid != x_grid || policy.len() != x_grid.len() {
        return Err(DissipativityError::GridMismatch);
    }
    let u_nodes = problem.u_grid();
    let mut report = GaitsgoryReport {
        c,
        nodes: 0,
        slack_inf: f64::INFINITY,
        witness_inf: f64::NAN,
        slack_policy: f64::INFINITY,
        witness_policy: f64::NAN,
    };
    for (i, &x) in x_grid.nodes().iter().enumerate() {
        let d = (x - storage.x_s).abs();
        if d < phi || d > phi_big {
            continue;
        }
        report.nodes += 1;
        let v_hat = value.values[i] + storage.eval(x);
        let inf = u_nodes
            .nodes()
            .iter()
            .map(|&u| modified_cost_hat(problem, storage, x, u))
            .fold(f64::INFINITY, f64::min);
        let s_inf = c * inf - v_hat;
        if s_inf < report.slack_inf {
            report.slack_inf = s_inf;
            report.witness_inf = x;
        }
        let s_pol = c * modified_cost_hat(problem, storage, x, policy.input(i)) - v_hat;
        if s_pol < report.slack_policy {
            report.slack_policy = s_pol;
            report.witness_policy = x;
        }
    }
    Ok(report)
}

/// First-stage greedy inputs of the undiscounted problem with stage cost
/// `L̃`, horizon `horizon` and terminal value `V`.
pub fn rotated_horizon_policy(
    problem: &ScalarGridProblem,
    value: &GridValueFunction,
    horizon: usize,
) -> Result<GridPolicy, DissipativityError> {
    if value.grid != problem.x_grid() {
        return Err(DissipativityError::GridMismatch);
    }
    let gamma = problem.gamma();
    let op = BellmanOperator::with_cost(problem, 1.0, |x, u| {
        let next = value.value_at(problem.f(x, u)).expect("dynamics keep the state on the grid");
        problem.cost(x, u) + (gamma - 1.0) * next
    })?;
    let mut w = value.values.clone();
    for _ in 1..horizon.max(1) {
        w = op.apply(&w);
    }
    Ok(op.greedy(&w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_expression, Dynamics, Interval, StageCost};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_analysis(gamma: f64) -> Analysis {
        let p = ScalarGridProblem::benchmark(gamma, 101, 101).unwrap();
        analyze(&p, AnalysisOptions::default()).unwrap()
    }

    #[test]
    fn storage_vanishes_at_steady_state() {
        let s = StorageFunction::new(0.4, 1.7, 50.0);
        assert_eq!(s.eval(0.4), 0.0);
        assert!((s.eval(0.5) - (-0.17 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn costs_vanish_at_normalized_steady_pair() {
        let a = small_analysis(0.9);
        let (xs, us) = (a.steady.x_s, a.steady.u_s);
        assert!(modified_cost_hat(&a.problem, &a.storage, xs, us).abs() < 1e-12);
        let v_xs = a.value.value_at(xs).unwrap();
        assert!(
            (rotated_cost_tilde(&a.problem, &a.value, xs, us).unwrap() - (-0.1 * v_xs)).abs() < 1e-12
        );
        assert!(
            (rotated_cost_hat_tilde(&a.problem, &a.storage, &a.value, xs, us).unwrap() + 0.1 * v_xs)
                .abs()
                < 1e-12
        );
        // Zero up to the interpolation bias, which is large on this coarse grid.
        assert!(v_xs.abs() < 2e-2, "V̄(x_s) = {v_xs}");
    }

    #[test]
    fn hand_composed_modified_cost() {
        let p = ScalarGridProblem::benchmark(0.9, 11, 11).unwrap();
        let s = StorageFunction::new(0.55, 1.2, 50.0);
        let (x, u) = (0.2, 5.0);
        let next = 0.01 * 5.0 * 0.8 + 0.96 * 0.2;
        let cost = -1.5 * 5.0 + 2.0 * 5.0 * 0.2 + 0.1 * 1.0;
        let lam = |z: f64| -1.2 * (z - 0.55) + 50.0 * (z - 0.55) * (z - 0.55);
        let expected = cost + lam(0.2) - 0.9 * lam(next);
        assert!((modified_cost_hat(&p, &s, x, u) - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_storage_leaves_costs_unchanged() {
        let a = small_analysis(0.8);
        let zero = StorageFunction::zero(a.steady.x_s);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x: f64 = rng.random_range(0.0..1.0);
            let u: f64 = rng.random_range(0.0..20.0);
            assert_eq!(modified_cost_hat(&a.problem, &zero, x, u), a.problem.cost(x, u));
            assert_eq!(
                rotated_cost_hat_tilde(&a.problem, &zero, &a.value, x, u).unwrap(),
                rotated_cost_tilde(&a.problem, &a.value, x, u).unwrap()
            );
        }
    }

    #[test]
    fn hat_tilde_identity_on_samples() {
        let a = small_analysis(0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(0.0..1.0);
            let u: f64 = rng.random_range(0.0..20.0);
            let next = a.problem.f(x, u);
            let lhs = rotated_cost_hat_tilde(&a.problem, &a.storage, &a.value, x, u).unwrap();
            let rhs = rotated_cost_tilde(&a.problem, &a.value, x, u).unwrap() + a.storage.eval(x)
                - a.storage.eval(next);
            assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn rotated_cost_is_shift_invariant() {
        let p = ScalarGridProblem::benchmark(0.9, 51, 51).unwrap();
        let (v, _) = value_iteration(&p, DpOptions::default()).unwrap();
        let c = 2.5;
        let shifted = p.shifted(c);
        let v_shift = v.shifted(-c / 0.1);
        for (x, u) in [(0.1, 3.0), (0.7, 12.0), (0.45, 0.0)] {
            let a = rotated_cost_tilde(&p, &v, x, u).unwrap();
            let b = rotated_cost_tilde(&shifted, &v_shift, x, u).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    fn quadratic_problem(gamma: f64) -> ScalarGridProblem {
        ScalarGridProblem::new(
            Dynamics::Expr(parse_expression("0.5*x + 0.1*u").unwrap()),
            StageCost::Expr(parse_expression("(x - 0.2)^2 + (u - 1)^2").unwrap()),
            Interval::new(0.0, 1.0).unwrap(),
            Interval::new(0.0, 5.0).unwrap(),
            41,
            41,
            gamma,
        )
        .unwrap()
    }

    #[test]
    fn undiscounted_positive_definite_cost_is_dissipative() {
        let p = quadratic_problem(1.0);
        let zero_value = GridValueFunction::from_values(p.x_grid(), vec![0.0; 41], 1.0);
        let r = check_sdsd_on_grid(&p, &StorageFunction::zero(0.2), &zero_value, 1.0).unwrap();
        assert!(r.feasible(), "{r:?}");
        assert!(r.max_epsilon_i >= 1.0 && r.max_epsilon_ii >= 1.0);
    }

    #[test]
    fn grid_margins_match_double_loop() {
        let a = small_analysis(0.5);
        let eps = 1e-6;
        let r = check_sdsd_on_grid(&a.problem, &a.storage, &a.value, eps).unwrap();
        let (mut m1, mut m2) = (f64::INFINITY, f64::INFINITY);
        for &x in a.problem.x_grid().nodes() {
            for &u in a.problem.u_grid().nodes() {
                let next = a.problem.f(x, u);
                let d2 = (x - a.storage.x_s).powi(2);
                let cost = a.problem.cost(x, u);
                let lhs_i = cost + a.storage.eval(x) - 0.5 * a.storage.eval(next);
                let lhs_ii = cost + a.storage.eval(x) - a.storage.eval(next)
                    + (0.5 - 1.0) * a.value.value_at(next).unwrap();
                m1 = m1.min(lhs_i - eps * d2);
                m2 = m2.min(lhs_ii - eps * d2);
            }
        }
        assert_eq!(r.margin_i, m1);
        assert_eq!(r.margin_ii, m2);
        let (wx, wu) = r.witness_i;
        let wi = modified_cost_hat(&a.problem, &a.storage, wx, wu) - eps * (wx - a.storage.x_s).powi(2);
        assert_eq!(wi, m1);
    }

    #[test]
    fn zero_storage_value_shift_is_zero() {
        let p = quadratic_problem(0.8);
        let (v, _) = value_iteration(&p, DpOptions::default()).unwrap();
        let zero = StorageFunction::zero(0.2);
        let (vh, _) = hat_value_iteration(&p, &zero, DpOptions::default()).unwrap();
        assert_eq!(check_value_shift(&zero, &v, &vh).unwrap(), 0.0);
    }

    #[test]
    fn value_shift_rejects_mismatched_grids() {
        let p = quadratic_problem(0.8);
        let v = GridValueFunction::from_values(p.x_grid(), vec![0.0; 41], 0.8);
        let w = GridValueFunction::from_values(p.with_grid(21, 41).unwrap().x_grid(), vec![0.0; 21], 0.8);
        assert!(check_value_shift(&StorageFunction::zero(0.2), &v, &w).is_err());
    }

    #[test]
    fn telescopic_and_decrease_vanish_at_steady_state() {
        // (0.2, 1) is a steady pair with zero cost, both on grid nodes.
        let p = quadratic_problem(0.8);
        let zero = GridValueFunction::from_values(p.x_grid(), vec![0.0; 41], 0.8);
        let hold = GridPolicy::new(vec![8; 41], &p.u_grid());
        assert_eq!(hold.input(8), 1.0);
        let r = telescopic_check(&p, &zero, &hold, 0.2, 50).unwrap();
        assert!(r.residual <= 1e-9);
        let storage = StorageFunction::new(0.2, 0.7, 50.0);
        let d = lyapunov_decrease_check(&p, &storage, &zero, &hold, 0.2, 50, 1e-3).unwrap();
        assert!(d.steps.iter().all(|s| s.decrease == 0.0));
        assert_eq!(d.worst_violation, 0.0);
    }

    #[test]
    fn decrease_series_from_steady_state_is_flat() {
        let p = LinearQuadraticProblem::benchmark(0.5).unwrap();
        let theta = DMatrix::identity(2, 2);
        let gain = DMatrix::zeros(2, 2);
        let r = lyapunov_decrease_check_linear(&p, &theta, &gain, &DVector::zeros(2), 10, 1e-3).unwrap();
        assert!(r.steps.iter().all(|s| s.decrease == 0.0 && s.violation == 0.0));
    }

    #[test]
    fn gaitsgory_rejects_bad_constants() {
        let a = small_analysis(0.5);
        for c in [0.5, 2.0, 3.0] {
            assert!(matches!(
                check_gaitsgory_pointwise(&a.problem, &a.storage, &a.value, &a.policy, c, 0.0, 1.0),
                Err(DissipativityError::InvalidC { .. })
            ));
        }
        assert!(matches!(
            check_gaitsgory_pointwise(&a.problem, &a.storage, &a.value, &a.policy, 1.5, 0.5, 0.1),
            Err(DissipativityError::InvalidAnnulus { .. })
        ));
    }

    #[test]
    fn gaitsgory_slack_matches_node_loop() {
        let a = small_analysis(0.9);
        let (phi, phi_big, c) = (0.05, 0.3, 5.0);
        let r = check_gaitsgory_pointwise(&a.problem, &a.storage, &a.value, &a.policy, c, phi, phi_big).unwrap();
        let mut worst = f64::INFINITY;
        let mut count = 0;
        for (i, &x) in a.problem.x_grid().nodes().iter().enumerate() {
            let d = (x - a.storage.x_s).abs();
            if d < phi || d > phi_big {
                continue;
            }
            count += 1;
            let v_hat = a.value.values[i] + a.storage.eval(x);
            worst = worst.min(c * modified_cost_hat(&a.problem, &a.storage, x, a.policy.input(i)) - v_hat);
        }
        assert_eq!(r.nodes, count);
        assert_eq!(r.slack_policy, worst);
        assert!(r.slack_inf <= r.slack_policy);
    }
}
