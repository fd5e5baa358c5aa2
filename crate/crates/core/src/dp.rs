//! Discounted value iteration on a state-input grid for scalar problems.
//!
//! Values live on the state nodes; successor states are evaluated by linear
//! interpolation, which keeps the Bellman operator monotone and a
//! `γ`-contraction in the sup norm. Sweeps are synchronous (Jacobi), so node
//! updates within a sweep are independent and run in parallel without
//! affecting the result.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{lerp, UniformGrid};
use crate::model::{ModelError, ScalarGridProblem};

#[derive(Debug, Error)]
pub enum DpError {
    #[error("value iteration did not converge in {iterations} sweeps (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("x = {x} is outside the grid range [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
    #[error("step h = {h} must be at least two grid cells ({min})")]
    StepTooSmall { h: f64, min: f64 },
    #[error("value functions live on different grids or discounts")]
    GridMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Tabulated value function with piecewise-linear interpolation between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridValueFunction {
    pub values: Vec<f64>,
    pub grid: UniformGrid,
    pub gamma: f64,
    /// Sup-norm change of the final sweep.
    pub residual: f64,
    pub iterations: usize,
    /// Sup-norm change of every sweep, in order.
    pub residual_history: Vec<f64>,
}

impl GridValueFunction {
    pub fn from_values(grid: UniformGrid, values: Vec<f64>, gamma: f64) -> Self {
        assert_eq!(grid.len(), values.len());
        Self {
            values,
            grid,
            gamma,
            residual: 0.0,
            iterations: 0,
            residual_history: Vec::new(),
        }
    }

    pub fn x_grid(&self) -> &[f64] {
        self.grid.nodes()
    }

    /// Interpolated value; `None` outside the grid range.
    pub fn value_at(&self, x: f64) -> Option<f64> {
        self.grid.interpolate(&self.values, x)
    }

    /// The same table shifted by a constant.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut next = self.clone();
        next.values.iter_mut().for_each(|v| *v += delta);
        next
    }

    /// Bound on the linear-interpolation error, estimated from second
    /// differences: `max |V[i+1] - 2V[i] + V[i-1]| / 8`.
    pub fn interpolation_slack(&self) -> f64 {
        self.values
            .windows(3)
            .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
            .fold(0.0, f64::max)
            / 8.0
    }

    /// Sweep-to-sweep contraction ratios `r[k+1] / r[k]`.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.residual_history
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

/// Greedy input per state node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridPolicy {
    /// Index into the input grid for each state node.
    pub indices: Vec<usize>,
    u_nodes: Vec<u64>,
}

impl GridPolicy {
    pub fn new(indices: Vec<usize>, u_grid: &UniformGrid) -> Self {
        let u_nodes = indices.iter().map(|&j| u_grid.nodes()[j].to_bits()).collect();
        Self { indices, u_nodes }
    }

    pub fn input(&self, node: usize) -> f64 {
        f64::from_bits(self.u_nodes[node])
    }

    pub fn inputs(&self) -> Vec<f64> {
        (0..self.indices.len()).map(|i| self.input(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DpOptions {
    /// Sup-norm stopping tolerance; `None` selects
    /// `1e-8 · max(1, ‖L‖∞) / (1 - γ)`.
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

impl DpOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol: Some(tol),
            max_iter: None,
        }
    }
}

const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Clone, Copy)]
struct Transition {
    cell: u32,
    weight: f64,
    cost: f64,
}

/// Bellman operator `V ↦ min_u L(x, u) + γ V(f(x, u))` on the grid, with all
/// successor locations and stage costs tabulated once.
pub struct BellmanOperator {
    x_grid: UniformGrid,
    u_grid: UniformGrid,
    gamma: f64,
    table: Vec<Transition>,
    cost_sup: f64,
}

impl BellmanOperator {
    /// Uses the problem's own stage cost.
    pub fn new(problem: &ScalarGridProblem) -> Result<Self, DpError> {
        Self::with_cost(problem, problem.gamma(), |x, u| problem.cost(x, u))
    }

    /// Uses `cost` in place of the stage cost and `gamma` as discount.
    pub fn with_cost(
        problem: &ScalarGridProblem,
        gamma: f64,
        cost: impl Fn(f64, f64) -> f64 + Sync,
    ) -> Result<Self, DpError> {
        let x_grid = problem.x_grid();
        let u_grid = problem.u_grid();
        let nu = u_grid.len();
        let rows: Vec<Result<Vec<Transition>, DpError>> = x_grid
            .nodes()
            .par_iter()
            .map(|&x| {
                u_grid
                    .nodes()
                    .iter()
                    .map(|&u| {
                        let next = problem.f(x, u);
                        let (cell, weight) = x_grid.locate(next).ok_or(DpError::OutOfRange {
                            x: next,
                            lo: x_grid.lo(),
                            hi: x_grid.hi(),
                        })?;
                        Ok(Transition {
                            cell: cell as u32,
                            weight,
                            cost: cost(x, u),
                        })
                    })
                    .collect()
            })
            .collect();
        let mut table = Vec::with_capacity(x_grid.len() * nu);
        for row in rows {
            table.extend(row?);
        }
        let cost_sup = table.iter().map(|t| t.cost.abs()).fold(0.0, f64::max);
        Ok(Self {
            x_grid,
            u_grid,
            gamma,
            table,
            cost_sup,
        })
    }

    pub fn x_grid(&self) -> &UniformGrid {
        &self.x_grid
    }

    pub fn u_grid(&self) -> &UniformGrid {
        &self.u_grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `max |L|` over all grid pairs.
    pub fn cost_sup(&self) -> f64 {
        self.cost_sup
    }

    #[inline]
    fn row(&self, i: usize) -> &[Transition] {
        let nu = self.u_grid.len();
        &self.table[i * nu..(i + 1) * nu]
    }

    #[inline]
    fn q(&self, t: &Transition, values: &[f64]) -> f64 {
        let c = t.cell as usize;
        t.cost + self.gamma * lerp(values[c], values[c + 1], t.weight)
    }

    /// `L(x_i, u_j) + γ V(f(x_i, u_j))`.
    pub fn q_value(&self, i: usize, j: usize, values: &[f64]) -> f64 {
        self.q(&self.row(i)[j], values)
    }

    /// Minimum over inputs and its first minimizing index.
    fn node_min(&self, i: usize, values: &[f64]) -> (f64, usize) {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for (j, t) in self.row(i).iter().enumerate() {
            let q = self.q(t, values);
            if q < best {
                best = q;
                arg = j;
            }
        }
        (best, arg)
    }

    /// One synchronous sweep.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        (0..self.x_grid.len())
            .into_par_iter()
            .map(|i| self.node_min(i, values).0)
            .collect()
    }

    /// Per-node argmin; ties go to the smallest input.
    pub fn greedy(&self, values: &[f64]) -> GridPolicy {
        let indices = (0..self.x_grid.len())
            .into_par_iter()
            .map(|i| self.node_min(i, values).1)
            .collect();
        GridPolicy::new(indices, &self.u_grid)
    }

    fn default_tol(&self) -> f64 {
        1e-8 * self.cost_sup.max(1.0) / (1.0 - self.gamma)
    }

    /// Iterates from `initial` until a sweep changes the values by at most
    /// the tolerance.
    pub fn solve_from(
        &self,
        initial: Vec<f64>,
        opts: DpOptions,
    ) -> Result<(GridValueFunction, GridPolicy), DpError> {
        if self.gamma >= 1.0 {
            return Err(ModelError::Invariant {
                field: "gamma".into(),
                reason: "value iteration requires gamma < 1".into(),
            }
            .into());
        }
        let tol = opts.tol.unwrap_or_else(|| self.default_tol());
        let max_iter = opts.max_iter.unwrap_or(DEFAULT_MAX_ITER);
        let mut values = initial;
        let mut history = Vec::new();
        for sweep in 1..=max_iter {
            let next = self.apply(&values);
            let change = next
                .iter()
                .zip(&values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            values = next;
            history.push(change);
            if change <= tol {
                let policy = self.greedy(&values);
                return Ok((
                    GridValueFunction {
                        values,
                        grid: self.x_grid.clone(),
                        gamma: self.gamma,
                        residual: change,
                        iterations: sweep,
                        residual_history: history,
                    },
                    policy,
                ));
            }
        }
        Err(DpError::NonConvergence {
            iterations: max_iter,
            residual: history.last().copied().unwrap_or(f64::INFINITY),
        })
    }

    pub fn solve(&self, opts: DpOptions) -> Result<(GridValueFunction, GridPolicy), DpError> {
        self.solve_from(vec![0.0; self.x_grid.len()], opts)
    }
}

/// Discounted value iteration from `V = 0` with the problem's stage cost.
pub fn value_iteration(
    problem: &ScalarGridProblem,
    opts: DpOptions,
) -> Result<(GridValueFunction, GridPolicy), DpError> {
    problem.discount().strict()?;
    BellmanOperator::new(problem)?.solve(opts)
}

/// Greedy policy for the problem's stage cost against the table `value`.
pub fn greedy_policy(
    problem: &ScalarGridProblem,
    value: &GridValueFunction,
) -> Result<GridPolicy, DpError> {
    if value.grid != problem.x_grid() {
        return Err(DpError::GridMismatch);
    }
    Ok(BellmanOperator::new(problem)?.greedy(&value.values))
}

pub fn evaluate_value(value: &GridValueFunction, x: f64) -> Result<f64, DpError> {
    value.value_at(x).ok_or(DpError::OutOfRange {
        x,
        lo: value.grid.lo(),
        hi: value.grid.hi(),
    })
}

/// Central difference `(V(x+h) - V(x-h)) / 2h`; `h` must span at least two
/// cells.
pub fn numeric_gradient(value: &GridValueFunction, x: f64, h: f64) -> Result<f64, DpError> {
    let min = 2.0 * value.grid.spacing();
    if h < min * (1.0 - 1e-12) {
        return Err(DpError::StepTooSmall { h, min });
    }
    let hi = evaluate_value(value, x + h)?;
    let lo = evaluate_value(value, x - h)?;
    Ok((hi - lo) / (2.0 * h))
}
