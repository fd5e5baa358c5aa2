//! Command-line driver. [`run`] parses arguments, runs one experiment and
//! writes its artifacts; the binary only forwards the exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use discounted_mpc::certificate::{
    lambda_zero_threshold, synthesize_certificate, verify_certificate, CertificateError,
    Conditions, QuadraticStorage, SynthesisOptions,
};
use discounted_mpc::dissipativity::{
    analyze, check_sdsd_on_grid, check_value_shift, hat_value_iteration,
    lyapunov_decrease_check, rotated_horizon_policy, telescopic_check, AnalysisOptions,
    DissipativityError,
};
use discounted_mpc::dp::{BellmanOperator, DpError, DpOptions};
use discounted_mpc::lqr::{
    gaitsgory_c_threshold, lyapunov_threshold, solve_dare, stabilizing_threshold,
    BisectionOptions, LqrError,
};
use discounted_mpc::model::{load_problem, LinearQuadraticProblem, ModelError, Problem, ScalarGridProblem};
use discounted_mpc::sim::{convergence_metrics, simulate_linear, SimError};
use discounted_mpc::steady_state::{sweep_gamma, SteadyStateError, SweepOptions};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "dmpc", version, about = "Stability experiments for discounted economic MPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Critical discount factors of a linear-quadratic problem.
    LqrThresholds(Common),
    /// Verify a storage matrix, or synthesize one.
    LqrCertify {
        #[command(flatten)]
        common: Common,
        /// JSON file with the storage matrix as nested rows.
        #[arg(long)]
        lambda: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = ConditionArg::Both)]
        conditions: ConditionArg,
        /// Exit with status 1 when no certificate is found.
        #[arg(long)]
        expect_feasible: bool,
    },
    /// Value iteration on a scalar grid problem.
    DpSolve(Common),
    /// Dissipativity margins on the grid with the default storage.
    SdsdVerify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
    },
    /// Optimal steady state over a range of discount factors.
    SsSweep {
        #[command(flatten)]
        common: Common,
        /// `lo:hi:step`
        #[arg(long, value_parser = parse_range)]
        gammas: GammaRange,
    },
    /// Closed-loop rollout under the optimal policy.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Initial state; comma-separated for vector states.
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long, default_value_t = 500)]
        steps: usize,
    },
    /// Value-shift, telescopic and policy-equivalence identities.
    EquivalenceCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.1)]
        x0: f64,
        #[arg(long, default_value_t = 500)]
        steps: usize,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Problem file (JSON).
    config: PathBuf,
    /// Overrides the discount factor of the problem file.
    #[arg(long)]
    gamma: Option<f64>,
    /// Convergence tolerance for value or Riccati iteration.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    nu: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConditionArg {
    Both,
    Discounted,
    Rotated,
}

#[derive(Debug, Clone)]
struct GammaRange(Vec<f64>);

fn parse_range(text: &str) -> Result<GammaRange, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, step] = parts[..] else {
        return Err("expected lo:hi:step".into());
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
    let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
    if !(step > 0.0 && lo <= hi && lo > 0.0 && hi < 1.0) {
        return Err("need 0 < lo <= hi < 1 and step > 0".into());
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    // Rounded so that 0.2 + 3 * 0.01 prints as 0.23.
    let values = (0..count)
        .map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12)
        .collect();
    Ok(GammaRange(values))
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ModelError),
    #[error("{0}")]
    Compute(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Compute(_) | CliError::Io { .. } => 1,
        }
    }
}

macro_rules! compute_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Compute(e.to_string())
            }
        }
    )*};
}
compute_error!(LqrError, CertificateError, DpError, SteadyStateError, SimError, DissipativityError);

/// Runs the command line `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Everything needed to stamp an artifact.
struct Context {
    command: &'static str,
    config_hash: String,
    seed: u64,
    out: PathBuf,
}

impl Context {
    fn new(command: &'static str, common: &Common) -> Result<Self, CliError> {
        let bytes = fs::read(&common.config).map_err(|source| ModelError::Io {
            path: common.config.display().to_string(),
            source,
        })?;
        fs::create_dir_all(&common.out).map_err(|source| CliError::Io {
            path: common.out.display().to_string(),
            source,
        })?;
        Ok(Self {
            command,
            config_hash: hex::encode(Sha256::digest(&bytes)),
            seed: common.seed,
            out: common.out.clone(),
        })
    }

    fn metadata_line(&self) -> String {
        format!(
            "# command={} config_sha256={} seed={} version={}\n",
            self.command, self.config_hash, self.seed, VERSION
        )
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    }

    fn write_csv(&self, name: &str, header: &str, rows: &[String]) -> Result<PathBuf, CliError> {
        let mut text = self.metadata_line();
        text.push_str(header);
        text.push('\n');
        for row in rows {
            text.push_str(row);
            text.push('\n');
        }
        self.write(name, &text)
    }

    fn write_json(&self, name: &str, body: serde_json::Value) -> Result<PathBuf, CliError> {
        let doc = json!({
            "meta": {
                "command": self.command,
                "config_sha256": self.config_hash,
                "seed": self.seed,
                "version": VERSION,
            },
            "result": body,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
        text.push('\n');
        self.write(name, &text)
    }
}

fn load(common: &Common) -> Result<Problem, CliError> {
    if let Some(g) = common.gamma {
        if !(g > 0.0 && g <= 1.0) {
            return Err(CliError::Usage(format!("--gamma {g} is not in (0, 1]")));
        }
    }
    if let Some(t) = common.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Usage(format!("--tol {t} must be positive")));
        }
    }
    Ok(match load_problem(&common.config)? {
        Problem::LinearQuadratic(p) => Problem::LinearQuadratic(match common.gamma {
            Some(g) => p.with_gamma(g)?,
            None => p,
        }),
        Problem::ScalarGrid(mut p) => {
            if common.nx.is_some() || common.nu.is_some() {
                p = p.with_grid(common.nx.unwrap_or(p.nx()), common.nu.unwrap_or(p.nu()))?;
            }
            if let Some(g) = common.gamma {
                p = p.with_gamma(g)?;
            }
            Problem::ScalarGrid(p)
        }
    })
}

fn linear(common: &Common) -> Result<LinearQuadraticProblem, CliError> {
    match load(common)? {
        Problem::LinearQuadratic(p) => Ok(p),
        Problem::ScalarGrid(_) => Err(CliError::Usage(
            "this command needs a linear_quadratic problem".into(),
        )),
    }
}

fn scalar(common: &Common) -> Result<ScalarGridProblem, CliError> {
    match load(common)? {
        Problem::ScalarGrid(p) => Ok(p),
        Problem::LinearQuadratic(_) => Err(CliError::Usage(
            "this command needs a scalar_grid problem".into(),
        )),
    }
}

fn dp_options(common: &Common) -> DpOptions {
    DpOptions {
        tol: common.tol,
        max_iter: None,
    }
}

fn execute(command: Command) -> Result<Vec<PathBuf>, CliError> {
    match command {
        Command::LqrThresholds(common) => lqr_thresholds(&common),
        Command::LqrCertify {
            common,
            lambda,
            epsilon,
            conditions,
            expect_feasible,
        } => lqr_certify(&common, lambda.as_deref(), epsilon, conditions, expect_feasible),
        Command::DpSolve(common) => dp_solve(&common),
        Command::SdsdVerify { common, epsilon } => sdsd_verify(&common, epsilon),
        Command::SsSweep { common, gammas } => ss_sweep(&common, &gammas.0),
        Command::Simulate { common, x0, steps } => simulate(&common, &x0, steps),
        Command::EquivalenceCheck { common, x0, steps } => equivalence_check(&common, x0, steps),
    }
}

fn lqr_thresholds(common: &Common) -> Result<Vec<PathBuf>, CliError> {
    let problem = linear(common)?;
    let ctx = Context::new("lqr-thresholds", common)?;
    let opts = BisectionOptions::default();
    let results = [
        stabilizing_threshold(&problem, opts)?,
        lyapunov_threshold(&problem, opts)?,
        gaitsgory_c_threshold(&problem, opts)?,
        lambda_zero_threshold(&problem, opts)?,
    ];
    let rows: Vec<String> = results
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{}",
                r.criterion, r.gamma_critical, r.bracket.0, r.bracket.1, r.at_floor
            )
        })
        .collect();
    Ok(vec![ctx.write_csv(
        "thresholds.csv",
        "criterion,gamma_critical,bracket_low,bracket_high,at_floor",
        &rows,
    )?])
}

fn read_lambda(path: &Path) -> Result<QuadraticStorage, CliError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let rows: Vec<Vec<f64>> =
        serde_json::from_str(&text).map_err(|e| ModelError::Schema(format!("{}: {e}", path.display())))?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(ModelError::Schema("storage matrix must be square".into()).into());
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    QuadraticStorage::new(DMatrix::from_row_slice(n, n, &flat))
        .map_err(|e| CliError::Config(ModelError::Schema(e.to_string())))
}

#[derive(Serialize)]
struct CertificateDoc<'a> {
    gamma: f64,
    source: &'a str,
    conditions: Conditions,
    feasible: bool,
    lambda: Vec<Vec<f64>>,
    margin: Option<f64>,
    report: Option<discounted_mpc::certificate::SdsdReport>,
}

fn lqr_certify(
    common: &Common,
    lambda: Option<&Path>,
    epsilon: f64,
    conditions: ConditionArg,
    expect_feasible: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let problem = linear(common)?;
    let conditions = match conditions {
        ConditionArg::Both => Conditions::Both,
        ConditionArg::Discounted => Conditions::DiscountedOnly,
        ConditionArg::Rotated => Conditions::RotatedOnly,
    };
    let storage = lambda.map(read_lambda).transpose()?;
    let ctx = Context::new("lqr-certify", common)?;
    let doc = match storage {
        Some(storage) => {
            if storage.Lambda.nrows() != problem.state_dim() {
                return Err(CliError::Usage("storage size does not match the state".into()));
            }
            let report = verify_certificate(&problem, &storage, epsilon)?;
            let feasible = match conditions {
                Conditions::Both => report.feasible,
                Conditions::DiscountedOnly => report.margin_i > epsilon,
                Conditions::RotatedOnly => report.margin_ii > epsilon,
            };
            CertificateDoc {
                gamma: problem.gamma(),
                source: "file",
                conditions,
                feasible,
                lambda: storage.rows(),
                margin: None,
                report: Some(report),
            }
        }
        None => {
            let opts = SynthesisOptions {
                epsilon,
                seed: common.seed,
                conditions,
                ..SynthesisOptions::default()
            };
            match synthesize_certificate(&problem, opts) {
                Ok(found) => CertificateDoc {
                    gamma: problem.gamma(),
                    source: "synthesis",
                    conditions,
                    feasible: true,
                    lambda: found.storage.rows(),
                    margin: Some(found.margin),
                    report: Some(found.report),
                },
                Err(CertificateError::Infeasible {
                    best_margin,
                    storage,
                    ..
                }) => CertificateDoc {
                    gamma: problem.gamma(),
                    source: "synthesis",
                    conditions,
                    feasible: false,
                    lambda: storage.rows(),
                    margin: Some(best_margin),
                    report: None,
                },
                Err(e) => return Err(e.into()),
            }
        }
    };
    let feasible = doc.feasible;
    let path = ctx.write_json("certificate.json", serde_json::to_value(&doc).expect("serializable"))?;
    if expect_feasible && !feasible {
        return Err(CliError::Compute(format!(
            "no certificate at gamma = {} (see {})",
            problem.gamma(),
            path.display()
        )));
    }
    Ok(vec![path])
}

fn dp_solve(common: &Common) -> Result<Vec<PathBuf>, CliError> {
    let problem = scalar(common)?;
    let ctx = Context::new("dp-solve", common)?;
    problem.discount().strict()?;
    let op = BellmanOperator::new(&problem)?;
    let (value, policy) = op.solve(dp_options(common))?;
    let rows: Vec<String> = value
        .x_grid()
        .iter()
        .enumerate()
        .map(|(i, x)| format!("{x},{},{}", value.values[i], policy.input(i)))
        .collect();
    let table = ctx.write_csv("value.csv", "x,V,u_star", &rows)?;
    let report = ctx.write_json(
        "dp.json",
        json!({
            "gamma": value.gamma,
            "nx": problem.nx(),
            "nu": problem.nu(),
            "iterations": value.iterations,
            "residual": value.residual,
            "interpolation_slack": value.interpolation_slack(),
        }),
    )?;
    Ok(vec![table, report])
}

fn analysis_options(common: &Common) -> AnalysisOptions {
    AnalysisOptions {
        dp: dp_options(common),
        ..AnalysisOptions::default()
    }
}

fn sdsd_verify(common: &Common, epsilon: f64) -> Result<Vec<PathBuf>, CliError> {
    let problem = scalar(common)?;
    let ctx = Context::new("sdsd-verify", common)?;
    let a = analyze(&problem, analysis_options(common))?;
    let report = check_sdsd_on_grid(&a.problem, &a.storage, &a.value, epsilon)?;
    let path = ctx.write_json(
        "sdsd.json",
        json!({
            "steady_state": a.steady,
            "storage": a.storage,
            "dp_iterations": a.value.iterations,
            "report": report,
            "feasible": report.feasible(),
        }),
    )?;
    Ok(vec![path])
}

fn ss_sweep(common: &Common, gammas: &[f64]) -> Result<Vec<PathBuf>, CliError> {
    let problem = scalar(common)?;
    let ctx = Context::new("ss-sweep", common)?;
    let opts = SweepOptions {
        dp: dp_options(common),
        ..SweepOptions::default()
    };
    let rows = sweep_gamma(&problem, gammas, opts)?;
    let full: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.gamma,
                r.steady.x_s,
                r.steady.u_s,
                r.steady.cost_tilde,
                r.steady.multiple,
                r.sim_gap_cells,
                r.dp_iterations
            )
        })
        .collect();
    let plot: Vec<String> = rows.iter().map(|r| format!("{},{}", r.gamma, r.steady.x_s)).collect();
    Ok(vec![
        ctx.write_csv(
            "sweep.csv",
            "gamma,x_s,u_s,cost_tilde,multiple,sim_gap_cells,dp_iterations",
            &full,
        )?,
        ctx.write_csv("fig1.csv", "gamma,x_s", &plot)?,
    ])
}

fn parse_state(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Usage(format!("--x0 {text:?}: {e}")))
        })
        .collect()
}

fn join(v: &DVector<f64>) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn simulate(common: &Common, x0: &str, steps: usize) -> Result<Vec<PathBuf>, CliError> {
    let x0 = parse_state(x0)?;
    let mut rows = Vec::with_capacity(steps + 1);
    let (ctx, summary) = match load(common)? {
        Problem::LinearQuadratic(problem) => {
            if x0.len() != problem.state_dim() {
                return Err(CliError::Usage(format!(
                    "--x0 needs {} components",
                    problem.state_dim()
                )));
            }
            let ctx = Context::new("simulate", common)?;
            let sol = solve_dare(&problem, common.tol.unwrap_or(1e-12))?;
            let traj = simulate_linear(&problem, &sol.K, &DVector::from_vec(x0), steps)?;
            for (k, x) in traj.states.iter().enumerate() {
                let u = traj.inputs.get(k).map(join).unwrap_or_default();
                let v = (x.transpose() * &sol.P * x)[(0, 0)];
                rows.push(format!("{k},{},{u},{},{v}", join(x), traj.distances[k]));
            }
            (ctx, convergence_metrics(&traj, 1e-8))
        }
        Problem::ScalarGrid(problem) => {
            let [x0] = x0[..] else {
                return Err(CliError::Usage("--x0 needs one component".into()));
            };
            let ctx = Context::new("simulate", common)?;
            let a = analyze(&problem, analysis_options(common))?;
            let traj = discounted_mpc::sim::simulate_grid(&a.problem, &a.policy, x0, steps, a.steady.x_s)?;
            for (k, &x) in traj.states.iter().enumerate() {
                let u = traj.inputs.get(k).map(|u| u.to_string()).unwrap_or_default();
                let v_hat = a.value.value_at(x).expect("state on grid") + a.storage.eval(x);
                rows.push(format!("{k},{x},{u},{},{v_hat}", traj.distances[k]));
            }
            let tol = 2.0 * a.problem.x_grid().spacing();
            (ctx, convergence_metrics(&traj, tol))
        }
    };
    let table = ctx.write_csv("trajectory.csv", "k,x,u,distance,V_hat", &rows)?;
    let report = ctx.write_json(
        "convergence.json",
        json!({
            "converged": summary.converged,
            "final_distance": summary.final_distance,
            "decay_ratio": summary.decay_ratio,
        }),
    )?;
    Ok(vec![table, report])
}

fn equivalence_check(common: &Common, x0: f64, steps: usize) -> Result<Vec<PathBuf>, CliError> {
    let problem = scalar(common)?;
    let ctx = Context::new("equivalence-check", common)?;
    let a = analyze(&problem, analysis_options(common))?;
    let slack = a.value.interpolation_slack();
    let tight = DpOptions::with_tol(common.tol.unwrap_or(1e-11));
    let (bar_value, bar_policy) = BellmanOperator::new(&a.problem)?.solve(tight)?;
    let (hat_value, hat_policy) = hat_value_iteration(&a.problem, &a.storage, tight)?;
    let shift = check_value_shift(&a.storage, &bar_value, &hat_value)?;
    let hat_mismatch = mismatches(&bar_policy.indices, &hat_policy.indices);
    let tilde = rotated_horizon_policy(&a.problem, &bar_value, 50)?;
    let tilde_mismatch = mismatches(&bar_policy.indices, &tilde.indices);
    let tele = telescopic_check(&a.problem, &a.value, &a.policy, x0, steps)?;
    let tele_bound = 1e-3 * (1.0 + a.value.value_at(x0).map(f64::abs).unwrap_or(0.0));
    let decrease = lyapunov_decrease_check(&a.problem, &a.storage, &a.value, &a.policy, x0, steps, 0.0)?;

    let mut rows = Vec::new();
    let mut push = |name: &str, value: f64, bound: f64| {
        let mut line = String::new();
        let _ = write!(line, "{name},{value},{bound},{}", value <= bound);
        rows.push(line);
    };
    push("value_shift", shift, 10.0 * slack);
    push("hat_policy_mismatches", hat_mismatch as f64, 0.0);
    push("tilde_policy_mismatches", tilde_mismatch as f64, 0.0);
    push("telescopic_residual", tele.residual, tele_bound);
    push("decrease_violation", decrease.worst_violation, 10.0 * slack);
    Ok(vec![ctx.write_csv("equivalence.csv", "check,value,bound,pass", &rows)?])
}

fn mismatches(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}
