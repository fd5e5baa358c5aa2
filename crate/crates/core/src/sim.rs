//! Closed-loop simulation and convergence diagnostics.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dp::GridPolicy;
use crate::model::{LinearQuadraticProblem, ScalarGridProblem};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("state {state} left [{lo}, {hi}] at step {step}")]
    RangeExit { step: usize, state: f64, lo: f64, hi: f64 },
    #[error("policy has {policy} entries but the grid has {grid} nodes")]
    PolicyMismatch { policy: usize, grid: usize },
    #[error("gain is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    GainShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
}

/// States `x_0..x_N`, inputs `u_0..u_{N-1}` and the distance of every state to
/// a reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub states: Vec<S>,
    pub inputs: Vec<S>,
    pub distances: Vec<f64>,
}

impl<S> Trajectory<S> {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }
}

/// Simulates `x+ = f(x, policy(x))` for `steps` steps.
pub fn simulate_scalar(
    problem: &ScalarGridProblem,
    policy: impl Fn(f64) -> f64,
    x0: f64,
    steps: usize,
    reference: f64,
) -> Result<Trajectory<f64>, SimError> {
    let range = problem.x_interval();
    let check = |step: usize, state: f64| {
        if range.contains(state) {
            Ok(())
        } else {
            Err(SimError::RangeExit {
                step,
                state,
                lo: range.lo,
                hi: range.hi,
            })
        }
    };
    check(0, x0)?;
    let mut traj = Trajectory {
        states: vec![x0],
        inputs: Vec::with_capacity(steps),
        distances: vec![(x0 - reference).abs()],
    };
    let mut x = x0;
    for k in 0..steps {
        let u = policy(x);
        let raw = problem.f(x, u);
        // Rounding can land a hair outside the box.
        let next = raw.clamp(range.lo, range.hi);
        if !raw.is_finite() || (raw - next).abs() > 1e-12 * range.width().max(1.0) {
            check(k + 1, raw)?;
        }
        traj.inputs.push(u);
        traj.states.push(next);
        traj.distances.push((next - reference).abs());
        x = next;
    }
    Ok(traj)
}

/// Applies the grid policy at the node nearest the current state.
pub fn simulate_grid(
    problem: &ScalarGridProblem,
    policy: &GridPolicy,
    x0: f64,
    steps: usize,
    reference: f64,
) -> Result<Trajectory<f64>, SimError> {
    let grid = problem.x_grid();
    if policy.len() != grid.len() {
        return Err(SimError::PolicyMismatch {
            policy: policy.len(),
            grid: grid.len(),
        });
    }
    simulate_scalar(
        problem,
        |x| {
            let node = grid.nearest(x).expect("state checked against the range");
            policy.input(node)
        },
        x0,
        steps,
        reference,
    )
}

/// Simulates `x+ = (A + B K) x`; distances are Euclidean norms.
#[allow(non_snake_case)]
pub fn simulate_linear(
    problem: &LinearQuadraticProblem,
    K: &DMatrix<f64>,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Trajectory<DVector<f64>>, SimError> {
    let (n, m) = (problem.state_dim(), problem.input_dim());
    if K.shape() != (m, n) {
        return Err(SimError::GainShape {
            rows: K.nrows(),
            cols: K.ncols(),
            expected_rows: m,
            expected_cols: n,
        });
    }
    let mut traj = Trajectory {
        states: vec![x0.clone()],
        inputs: Vec::with_capacity(steps),
        distances: vec![x0.norm()],
    };
    let mut x = x0.clone();
    for _ in 0..steps {
        let u = K * &x;
        x = problem.next_state(&x, &u);
        traj.inputs.push(u);
        traj.distances.push(x.norm());
        traj.states.push(x.clone());
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceMetrics {
    /// Final distance is within the tolerance.
    pub converged: bool,
    pub final_distance: f64,
    /// Geometric rate fitted to the second half of the distances; zero when
    /// the tail is already exactly at the reference.
    pub decay_ratio: f64,
}

pub fn convergence_metrics<S>(traj: &Trajectory<S>, tol: f64) -> ConvergenceMetrics {
    let d = &traj.distances;
    let final_distance = d.last().copied().unwrap_or(0.0);
    let tail = &d[d.len() / 2..];
    let points: Vec<(f64, f64)> = tail
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(k, &v)| (k as f64, v.ln()))
        .collect();
    let decay_ratio = if points.len() < 2 {
        0.0
    } else {
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
        (sxy / sxx).exp()
    };
    ConvergenceMetrics {
        converged: final_distance <= tol,
        final_distance,
        decay_ratio,
    }
}
