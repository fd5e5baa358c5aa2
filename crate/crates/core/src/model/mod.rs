//! Problem definitions: the linear-quadratic and scalar grid problems, their
//! validation, and the JSON configuration format.

mod config;
pub mod expr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use config::{load_problem, Problem};
pub use expr::{parse_expression, Expression, ParseError, ParseErrorKind};

use crate::grid::UniformGrid;
use crate::linalg;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid `{field}`: {reason}")]
    Invariant { field: String, reason: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("could not parse `{field}`: {source}")]
    Expression {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("point ({x}, {u}) lies outside the problem box")]
    OutOfBox { x: String, u: String },
}

pub(crate) fn invariant(field: &str, reason: impl Into<String>) -> ModelError {
    ModelError::Invariant {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Discount factor in `(0, 1]`. The value `1` is only meaningful for the
/// undiscounted limit checks.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DiscountFactor(f64);

impl DiscountFactor {
    pub fn new(gamma: f64) -> Result<Self, ModelError> {
        if gamma.is_finite() && gamma > 0.0 && gamma <= 1.0 {
            Ok(Self(gamma))
        } else {
            Err(invariant("gamma", format!("{gamma} is not in (0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Fails unless `gamma < 1`.
    pub fn strict(self) -> Result<f64, ModelError> {
        if self.0 < 1.0 {
            Ok(self.0)
        } else {
            Err(invariant("gamma", "strict discounting requires gamma < 1"))
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, ModelError> {
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(Self { lo, hi })
        } else {
            Err(invariant("interval", format!("[{lo}, {hi}] is empty or not finite")))
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Whether point evaluations check the problem box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoxMode {
    #[default]
    Unchecked,
    Strict,
}

/// `x+ = A x + B u` with stage cost `x'Qx + u'Ru`.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq)]
pub struct LinearQuadraticProblem {
    pub A: DMatrix<f64>,
    pub B: DMatrix<f64>,
    pub Q: DMatrix<f64>,
    pub R: DMatrix<f64>,
    pub gamma: DiscountFactor,
    /// Analysis region only; the Riccati solution ignores it.
    pub state_box: Vec<Interval>,
    pub input_box: Vec<Interval>,
}

const DEFAULT_BOX_HALF_WIDTH: f64 = 10.0;

#[allow(non_snake_case)]
impl LinearQuadraticProblem {
    pub fn new(
        A: DMatrix<f64>,
        B: DMatrix<f64>,
        Q: DMatrix<f64>,
        R: DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self, ModelError> {
        let n = A.nrows();
        let m = B.ncols();
        let symmetric_box = |k: usize| {
            vec![Interval::new(-DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH).unwrap(); k]
        };
        Self::with_boxes(A, B, Q, R, gamma, symmetric_box(n), symmetric_box(m))
    }

    pub fn with_boxes(
        A: DMatrix<f64>,
        B: DMatrix<f64>,
        Q: DMatrix<f64>,
        R: DMatrix<f64>,
        gamma: f64,
        state_box: Vec<Interval>,
        input_box: Vec<Interval>,
    ) -> Result<Self, ModelError> {
        let n = A.nrows();
        if n == 0 || A.ncols() != n {
            return Err(ModelError::Dimension(format!(
                "A must be square and nonempty, got {}x{}",
                A.nrows(),
                A.ncols()
            )));
        }
        let m = B.ncols();
        if B.nrows() != n || m == 0 {
            return Err(ModelError::Dimension(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                B.nrows(),
                B.ncols()
            )));
        }
        if Q.shape() != (n, n) {
            return Err(ModelError::Dimension(format!("Q must be {n}x{n}")));
        }
        if R.shape() != (m, m) {
            return Err(ModelError::Dimension(format!("R must be {m}x{m}")));
        }
        if state_box.len() != n || input_box.len() != m {
            return Err(ModelError::Dimension(format!(
                "boxes must have {n} state and {m} input intervals"
            )));
        }
        for (name, mat) in [("A", &A), ("B", &B), ("Q", &Q), ("R", &R)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(invariant(name, "entries must be finite"));
            }
        }
        if !linalg::is_symmetric(&Q, 1e-12) {
            return Err(invariant("Q", "must be symmetric"));
        }
        if linalg::min_eigenvalue(&Q) < -1e-12 * Q.amax().max(1.0) {
            return Err(invariant("Q", "must be positive semidefinite"));
        }
        if !linalg::is_symmetric(&R, 1e-12) {
            return Err(invariant("R", "must be symmetric"));
        }
        if R.clone().cholesky().is_none() || linalg::min_eigenvalue(&R) <= 0.0 {
            return Err(invariant("R", "must be positive definite"));
        }
        let gamma = DiscountFactor::new(gamma)?;
        Ok(Self {
            A,
            B,
            Q,
            R,
            gamma,
            state_box,
            input_box,
        })
    }

    /// The two-state example `A = [2 0; 1 2]`, `B = Q = R = I`.
    pub fn benchmark(gamma: f64) -> Result<Self, ModelError> {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            gamma,
        )
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self, ModelError> {
        let mut next = self.clone();
        next.gamma = DiscountFactor::new(gamma)?;
        Ok(next)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.value()
    }

    pub fn state_dim(&self) -> usize {
        self.A.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.B.ncols()
    }

    pub fn next_state(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.A * x + &self.B * u
    }

    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        x.dot(&(&self.Q * x)) + u.dot(&(&self.R * u))
    }

    fn in_box(&self, x: &DVector<f64>, u: &DVector<f64>) -> bool {
        x.iter().zip(&self.state_box).all(|(v, i)| i.contains(*v))
            && u.iter().zip(&self.input_box).all(|(v, i)| i.contains(*v))
    }

    fn check(&self, x: &DVector<f64>, u: &DVector<f64>, mode: BoxMode) -> Result<(), ModelError> {
        if x.len() != self.state_dim() || u.len() != self.input_dim() {
            return Err(ModelError::Dimension(format!(
                "expected x in R^{} and u in R^{}",
                self.state_dim(),
                self.input_dim()
            )));
        }
        if mode == BoxMode::Strict && !self.in_box(x, u) {
            return Err(ModelError::OutOfBox {
                x: format!("{:?}", x.as_slice()),
                u: format!("{:?}", u.as_slice()),
            });
        }
        Ok(())
    }

    pub fn evaluate_dynamics(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        mode: BoxMode,
    ) -> Result<DVector<f64>, ModelError> {
        self.check(x, u, mode)?;
        Ok(self.next_state(x, u))
    }

    pub fn evaluate_cost(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        mode: BoxMode,
    ) -> Result<f64, ModelError> {
        self.check(x, u, mode)?;
        Ok(self.stage_cost(x, u))
    }
}

/// Scalar dynamics. The family is the reference path; expressions are the
/// extension path.
#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    /// `f(x, u) = a u (1 - x) + b x`
    Family { a: f64, b: f64 },
    Expr(Expression),
}

impl Dynamics {
    #[inline]
    pub fn eval(&self, x: f64, u: f64) -> f64 {
        match self {
            Dynamics::Family { a, b } => a * u * (1.0 - x) + b * x,
            Dynamics::Expr(e) => e.eval(x, u),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageCost {
    /// `L(x, u) = c1 u + c2 u x + c3 (u - d)^2`
    Family { c1: f64, c2: f64, c3: f64, d: f64 },
    Expr(Expression),
}

impl StageCost {
    #[inline]
    pub fn eval(&self, x: f64, u: f64) -> f64 {
        match self {
            StageCost::Family { c1, c2, c3, d } => {
                let du = u - d;
                c1 * u + c2 * u * x + c3 * du * du
            }
            StageCost::Expr(e) => e.eval(x, u),
        }
    }
}

/// Scalar problem solved on a uniform state-input grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGridProblem {
    dynamics: Dynamics,
    cost: StageCost,
    x_interval: Interval,
    u_interval: Interval,
    nx: usize,
    nu: usize,
    gamma: DiscountFactor,
    /// Subtracted from the stage cost; see [`ScalarGridProblem::shifted`].
    cost_shift: f64,
}

impl ScalarGridProblem {
    pub fn new(
        dynamics: Dynamics,
        cost: StageCost,
        x_interval: Interval,
        u_interval: Interval,
        nx: usize,
        nu: usize,
        gamma: f64,
    ) -> Result<Self, ModelError> {
        let problem = Self {
            dynamics,
            cost,
            x_interval,
            u_interval,
            nx,
            nu,
            gamma: DiscountFactor::new(gamma)?,
            cost_shift: 0.0,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// `x+ = 0.01 u (1 - x) + 0.96 x`, `L = -1.5 u + 2 u x + 0.1 (u - 4)^2`
    /// on `[0, 1] x [0, 20]`.
    pub fn benchmark(gamma: f64, nx: usize, nu: usize) -> Result<Self, ModelError> {
        Self::new(
            Dynamics::Family { a: 0.01, b: 0.96 },
            StageCost::Family {
                c1: -1.5,
                c2: 2.0,
                c3: 0.1,
                d: 4.0,
            },
            Interval::new(0.0, 1.0)?,
            Interval::new(0.0, 20.0)?,
            nx,
            nu,
            gamma,
        )
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.nx < 2 {
            return Err(invariant("nx", "need at least 2 grid points"));
        }
        if self.nu < 2 {
            return Err(invariant("nu", "need at least 2 grid points"));
        }
        let xs = self.x_grid();
        let us = self.u_grid();
        let tol = 1e-12 * self.x_interval.width().max(1.0);
        for &x in xs.nodes() {
            for &u in us.nodes() {
                let next = self.dynamics.eval(x, u);
                if !next.is_finite()
                    || next < self.x_interval.lo - tol
                    || next > self.x_interval.hi + tol
                {
                    return Err(invariant(
                        "dynamics",
                        format!(
                            "f({x}, {u}) = {next} leaves [{}, {}]",
                            self.x_interval.lo, self.x_interval.hi
                        ),
                    ));
                }
                if !self.cost.eval(x, u).is_finite() {
                    return Err(invariant("stage_cost", format!("L({x}, {u}) is not finite")));
                }
            }
        }
        Ok(())
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self, ModelError> {
        let mut next = self.clone();
        next.gamma = DiscountFactor::new(gamma)?;
        Ok(next)
    }

    pub fn with_grid(&self, nx: usize, nu: usize) -> Result<Self, ModelError> {
        let mut next = self.clone();
        next.nx = nx;
        next.nu = nu;
        next.validate()?;
        Ok(next)
    }

    /// Same problem with stage cost `L - c`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut next = self.clone();
        next.cost_shift += c;
        next
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn cost_model(&self) -> &StageCost {
        &self.cost
    }

    pub fn x_interval(&self) -> Interval {
        self.x_interval
    }

    pub fn u_interval(&self) -> Interval {
        self.u_interval
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.value()
    }

    pub fn discount(&self) -> DiscountFactor {
        self.gamma
    }

    pub fn cost_shift(&self) -> f64 {
        self.cost_shift
    }

    pub fn x_grid(&self) -> UniformGrid {
        UniformGrid::new(self.x_interval.lo, self.x_interval.hi, self.nx)
    }

    pub fn u_grid(&self) -> UniformGrid {
        UniformGrid::new(self.u_interval.lo, self.u_interval.hi, self.nu)
    }

    #[inline]
    pub fn f(&self, x: f64, u: f64) -> f64 {
        self.dynamics.eval(x, u)
    }

    #[inline]
    pub fn cost(&self, x: f64, u: f64) -> f64 {
        self.cost.eval(x, u) - self.cost_shift
    }

    pub fn in_box(&self, x: f64, u: f64) -> bool {
        self.x_interval.contains(x) && self.u_interval.contains(u)
    }

    pub fn evaluate_dynamics(&self, x: f64, u: f64, mode: BoxMode) -> Result<f64, ModelError> {
        self.check(x, u, mode)?;
        Ok(self.f(x, u))
    }

    pub fn evaluate_cost(&self, x: f64, u: f64, mode: BoxMode) -> Result<f64, ModelError> {
        self.check(x, u, mode)?;
        Ok(self.cost(x, u))
    }

    fn check(&self, x: f64, u: f64, mode: BoxMode) -> Result<(), ModelError> {
        if mode == BoxMode::Strict && !self.in_box(x, u) {
            return Err(ModelError::OutOfBox {
                x: x.to_string(),
                u: u.to_string(),
            });
        }
        Ok(())
    }
}
