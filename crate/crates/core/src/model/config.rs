use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use super::{
    invariant, parse_expression, Dynamics, Interval, LinearQuadraticProblem, ModelError,
    ScalarGridProblem, StageCost,
};

/// A validated problem read from a configuration file.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    LinearQuadratic(LinearQuadraticProblem),
    ScalarGrid(ScalarGridProblem),
}

impl Problem {
    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let file: ProblemFile =
            serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
        file.into_problem()
    }
}

/// Reads and validates a JSON problem file.
pub fn load_problem(path: impl AsRef<Path>) -> Result<Problem, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Problem::from_json_str(&text)
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ProblemFile {
    LinearQuadratic(LinearQuadraticFile),
    ScalarGrid(ScalarGridFile),
}

#[allow(non_snake_case)]
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearQuadraticFile {
    A: Vec<Vec<f64>>,
    B: Vec<Vec<f64>>,
    Q: Vec<Vec<f64>>,
    R: Vec<Vec<f64>>,
    gamma: f64,
    #[serde(default)]
    state_box: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    input_box: Option<Vec<[f64; 2]>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyFile {
    a: f64,
    b: f64,
    c1: f64,
    c2: f64,
    c3: f64,
    d: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalarGridFile {
    #[serde(default)]
    family: Option<FamilyFile>,
    #[serde(default)]
    f_expr: Option<String>,
    #[serde(default)]
    l_expr: Option<String>,
    x_min: f64,
    x_max: f64,
    u_min: f64,
    u_max: f64,
    nx: usize,
    nu: usize,
    gamma: f64,
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ModelError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(invariant(field, "matrix must be nonempty"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(invariant(field, "rows have different lengths"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

fn intervals(field: &str, pairs: &[[f64; 2]]) -> Result<Vec<Interval>, ModelError> {
    pairs
        .iter()
        .map(|[lo, hi]| Interval::new(*lo, *hi).map_err(|_| invariant(field, "empty interval")))
        .collect()
}

impl ProblemFile {
    fn into_problem(self) -> Result<Problem, ModelError> {
        match self {
            ProblemFile::LinearQuadratic(f) => {
                let a = matrix("A", &f.A)?;
                let b = matrix("B", &f.B)?;
                let q = matrix("Q", &f.Q)?;
                let r = matrix("R", &f.R)?;
                let problem = match (f.state_box, f.input_box) {
                    (None, None) => LinearQuadraticProblem::new(a, b, q, r, f.gamma)?,
                    (sb, ib) => {
                        let n = a.nrows();
                        let m = b.ncols();
                        let default = |k| vec![[-10.0, 10.0]; k];
                        let sb = intervals("state_box", &sb.unwrap_or_else(|| default(n)))?;
                        let ib = intervals("input_box", &ib.unwrap_or_else(|| default(m)))?;
                        LinearQuadraticProblem::with_boxes(a, b, q, r, f.gamma, sb, ib)?
                    }
                };
                Ok(Problem::LinearQuadratic(problem))
            }
            ProblemFile::ScalarGrid(f) => {
                let (dynamics, cost) = match (f.family, f.f_expr, f.l_expr) {
                    (Some(fam), None, None) => (
                        Dynamics::Family { a: fam.a, b: fam.b },
                        StageCost::Family {
                            c1: fam.c1,
                            c2: fam.c2,
                            c3: fam.c3,
                            d: fam.d,
                        },
                    ),
                    (None, Some(fe), Some(le)) => {
                        let f_tree = parse_expression(&fe).map_err(|source| {
                            ModelError::Expression {
                                field: "f_expr".into(),
                                source,
                            }
                        })?;
                        let l_tree = parse_expression(&le).map_err(|source| {
                            ModelError::Expression {
                                field: "l_expr".into(),
                                source,
                            }
                        })?;
                        (Dynamics::Expr(f_tree), StageCost::Expr(l_tree))
                    }
                    _ => {
                        return Err(ModelError::Schema(
                            "scalar_grid needs either `family` or both `f_expr` and `l_expr`"
                                .into(),
                        ))
                    }
                };
                let x = Interval::new(f.x_min, f.x_max).map_err(|_| invariant("x_min", "x_min < x_max required"))?;
                let u = Interval::new(f.u_min, f.u_max).map_err(|_| invariant("u_min", "u_min < u_max required"))?;
                Ok(Problem::ScalarGrid(ScalarGridProblem::new(
                    dynamics, cost, x, u, f.nx, f.nu, f.gamma,
                )?))
            }
        }
    }
}
