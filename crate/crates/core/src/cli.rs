//! Configuration, command dispatch and report emission for the `pqvar`
//! binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::forms::{CoefficientName, FeSpace, Field, Problem, ProblemSpec};
use crate::functionals::QuotientMode;
use crate::mesh::{Mesh, MeshSelector};
use crate::nonlinear::{check_nonresonance, solve};
use crate::optimize::{random_field, IterationTrace, SolverOptions};
use crate::spectrum::{
    compute_threshold, dichotomy, solve_eigenfunction, spectral_scan, Threshold, RAYLEIGH_IDENTITY_TOL,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_FILESYSTEM: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Validate,
    Spectrum,
    Eigenfunction,
    Scan,
    Solve,
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Spectrum => "spectrum",
            Command::Eigenfunction => "eigenfunction",
            Command::Scan => "scan",
            Command::Solve => "solve",
            Command::Gradcheck => "gradcheck",
        }
    }
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => EXIT_FILESYSTEM,
            Error::Stalled { .. } | Error::NotConverged { .. } | Error::Initialization(_) | Error::Integration { .. } => {
                EXIT_NOT_CONVERGED
            }
            _ => EXIT_VALIDATION,
        }
    }
}

fn default_one() -> usize {
    1
}

fn default_mesh() -> String {
    "interval:n=256".into()
}

fn default_order() -> usize {
    crate::forms::DEFAULT_QUADRATURE_ORDER
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub workers: usize,
    #[serde(default = "default_mesh")]
    pub mesh: String,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub eigenfunction: EigenfunctionConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn expr_one() -> String {
    "1".into()
}

fn expr_zero() -> String {
    "0".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub p: f64,
    pub q: f64,
    #[serde(default = "expr_one")]
    pub c1: String,
    #[serde(default = "expr_one")]
    pub c2: String,
    #[serde(default = "expr_one")]
    pub m: String,
    #[serde(default = "expr_zero")]
    pub rho: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<String>,
    #[serde(default, rename = "F", skip_serializing_if = "Option::is_none")]
    pub primitive_f: Option<String>,
    #[serde(default, rename = "G", skip_serializing_if = "Option::is_none")]
    pub primitive_g: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s2: Option<f64>,
    /// Reject reactions given without a closed-form primitive.
    #[serde(default)]
    pub require_primitives: bool,
}

/// Solver settings; `seed` and `workers` come from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub step_init: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub lbfgs_memory: usize,
    pub penalty_weight: f64,
    pub multistart: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverConfig {
            max_iterations: d.max_iterations,
            grad_tol: d.grad_tol,
            step_init: d.step_init,
            armijo_c: d.armijo_c,
            backtrack_factor: d.backtrack_factor,
            lbfgs_memory: d.lbfgs_memory,
            penalty_weight: d.penalty_weight,
            multistart: d.multistart,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub which: String,
    pub mode: QuotientMode,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            which: Threshold::Lambda.to_string(),
            mode: QuotientMode::W,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenfunctionConfig {
    pub lambda: f64,
    /// Interpret `lambda` as a multiple of Λ̂ computed in `mode`.
    pub relative: bool,
    pub mode: QuotientMode,
}

impl Default for EigenfunctionConfig {
    fn default() -> Self {
        EigenfunctionConfig {
            lambda: 2.0,
            relative: true,
            mode: QuotientMode::W,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    /// Interpret the grid as multiples of Λ̂ computed in `mode`.
    #[serde(default = "default_true")]
    pub relative: bool,
    #[serde(default = "default_w")]
    pub mode: QuotientMode,
}

fn default_grid() -> Vec<f64> {
    vec![0.0, 0.5, 0.9, 1.1, 2.0, 5.0]
}

fn default_w() -> QuotientMode {
    QuotientMode::W
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            grid: default_grid(),
            relative: true,
            mode: QuotientMode::W,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub lambda_decl: f64,
    pub mu_decl: f64,
    pub mode: QuotientMode,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            lambda_decl: 0.0,
            mu_decl: 0.0,
            mode: QuotientMode::W,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub fields: usize,
    pub h: f64,
    pub lambda: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            fields: 10,
            h: 1e-5,
            lambda: 1.0,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "pqvar-out".into(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn mesh_selector(&self) -> Result<MeshSelector> {
        self.mesh.parse()
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.solver;
        SolverOptions {
            max_iterations: s.max_iterations,
            grad_tol: s.grad_tol,
            step_init: s.step_init,
            armijo_c: s.armijo_c,
            backtrack_factor: s.backtrack_factor,
            lbfgs_memory: s.lbfgs_memory,
            penalty_weight: s.penalty_weight,
            seed: self.seed,
            multistart: s.multistart,
            workers: self.workers,
        }
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let c = &self.problem;
        let parse = |src: &str| Expr::parse(src).map_err(Error::from);
        let reaction = |r: &Option<String>, prim: &Option<String>, name: &str| -> Result<(Expr, Option<Expr>)> {
            match (r, prim) {
                (None, None) => Ok((Expr::constant(0.0), Some(Expr::constant(0.0)))),
                (None, Some(_)) => Err(Error::Config(format!(
                    "primitive {} given without its reaction {name}",
                    name.to_uppercase()
                ))),
                (Some(r), Some(p)) => Ok((parse(r)?, Some(parse(p)?))),
                (Some(r), None) => {
                    if c.require_primitives {
                        Err(Error::Validation {
                            condition: "require_primitives",
                            message: format!("reaction {name} has no closed-form primitive {}", name.to_uppercase()),
                        })
                    } else {
                        Ok((parse(r)?, None))
                    }
                }
            }
        };
        let (f, primitive_f) = reaction(&c.f, &c.primitive_f, "f")?;
        let (g, primitive_g) = reaction(&c.g, &c.primitive_g, "g")?;
        Ok(ProblemSpec {
            p: c.p,
            q: c.q,
            c1: parse(&c.c1)?,
            c2: parse(&c.c2)?,
            m: parse(&c.m)?,
            rho: parse(&c.rho)?,
            f,
            g,
            primitive_f,
            primitive_g,
            s1: c.s1,
            s2: c.s2,
        })
    }

    /// Checks everything that can be checked without building the mesh.
    pub fn validate(&self) -> Result<()> {
        self.mesh_selector()?;
        self.solver_options().validate()?;
        self.spectrum.which.parse::<Threshold>()?;
        if self.quadrature_order == 0 {
            return Err(Error::Config("quadrature_order must be >= 1".into()));
        }
        if self.scan.grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("scan grid entries must be finite".into()));
        }
        if self.scan.grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("scan grid must be sorted".into()));
        }
        if !(self.gradcheck.h > 0.0 && self.gradcheck.fields > 0 && self.gradcheck.tolerance > 0.0) {
            return Err(Error::Config("gradcheck needs h > 0, fields > 0 and tolerance > 0".into()));
        }
        self.problem_spec()?;
        Ok(())
    }
}

/// Everything a command needs: normalized config, sampled problem, options.
pub struct Session {
    pub config: RunConfig,
    pub problem: Problem,
    pub opts: SolverOptions,
    pub out: PathBuf,
}

impl Session {
    /// Loads and validates a config, applying command-line overrides.
    pub fn open(config_path: &Path, mesh: Option<&str>, out: Option<&Path>) -> Result<Self> {
        let mut config = RunConfig::load(config_path)?;
        if let Some(m) = mesh {
            config.mesh = m.parse::<MeshSelector>()?.to_string();
        }
        if let Some(o) = out {
            config.output.dir = o.display().to_string();
        }
        Self::from_config(config)
    }

    pub fn from_config(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mesh: Mesh = config.mesh_selector()?.build()?;
        let space = Arc::new(FeSpace::with_order(mesh, config.quadrature_order)?);
        let problem = Problem::new(config.problem_spec()?, space)?;
        let opts = config.solver_options();
        let out = PathBuf::from(&config.output.dir);
        Ok(Session {
            config,
            problem,
            opts,
            out,
        })
    }

    fn mesh_n(&self) -> usize {
        self.config.mesh_selector().map(|m| m.resolution()).unwrap_or(0)
    }

    fn summary(&self, command: Command, body: Value) -> Value {
        let mut v = json!({
            "command": command.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.config.seed,
            "mesh": self.config.mesh,
            "mesh_n": self.mesh_n(),
            "config": serde_json::to_value(&self.config).expect("config serializes"),
        });
        if let (Value::Object(base), Value::Object(extra)) = (&mut v, body) {
            base.extend(extra);
        }
        v
    }

    fn write(&self, name: &str, contents: &[u8]) -> Result<()> {
        let io = |path: &Path, source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(&self.out).map_err(|e| io(&self.out, e))?;
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| io(&path, e))
    }

    fn write_summary(&self, value: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
        text.push('\n');
        self.write("summary.json", text.as_bytes())
    }

    fn write_trace(&self, trace: &IterationTrace) -> Result<()> {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf)?;
        self.write("trace.csv", &buf)
    }

    fn write_field(&self, name: &str, u: &Field) -> Result<()> {
        let mesh = self.problem.space().mesh();
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::invalid("cli", format!("csv export: {e}"));
        if mesh.dimension() == 1 {
            w.write_record(["x", "u"]).map_err(csv_err)?;
            for (p, v) in mesh.nodes().iter().zip(u.iter()) {
                w.write_record([p[0].to_string(), v.to_string()]).map_err(csv_err)?;
            }
        } else {
            w.write_record(["x", "y", "u"]).map_err(csv_err)?;
            for (p, v) in mesh.nodes().iter().zip(u.iter()) {
                w.write_record([p[0].to_string(), p[1].to_string(), v.to_string()])
                    .map_err(csv_err)?;
            }
        }
        let buf = w.into_inner().map_err(|e| Error::invalid("cli", format!("csv export: {e}")))?;
        self.write(name, &buf)
    }
}

/// Outcome of a command: the exit code and a human-readable report.
pub struct Report {
    pub code: i32,
    pub lines: Vec<String>,
}

/// Runs `command` against the config at `config_path`.
pub fn run(command: Command, config_path: &Path, mesh: Option<&str>, out: Option<&Path>) -> Result<Report> {
    let session = Session::open(config_path, mesh, out)?;
    execute(command, &session)
}

pub fn execute(command: Command, s: &Session) -> Result<Report> {
    match command {
        Command::Validate => cmd_validate(s),
        Command::Spectrum => cmd_spectrum(s),
        Command::Eigenfunction => cmd_eigenfunction(s),
        Command::Scan => cmd_scan(s),
        Command::Solve => cmd_solve(s),
        Command::Gradcheck => cmd_gradcheck(s),
    }
}

fn cmd_validate(s: &Session) -> Result<Report> {
    let pr = &s.problem;
    let space = pr.space();
    let integral = |c| space.integral(pr.coefficient(c));
    let (r_star, r_trace) = pr.critical_exponents();
    let body = json!({
        "valid": true,
        "p": pr.p(),
        "q": pr.q(),
        "r": pr.spec().r(),
        "r_star": finite_or_null(r_star),
        "r_trace": finite_or_null(r_trace),
        "integral_c1": integral(CoefficientName::C1),
        "integral_c2": integral(CoefficientName::C2),
        "integral_m": integral(CoefficientName::M),
        "integral_rho": integral(CoefficientName::Rho),
        "nodes": pr.node_count(),
    });
    s.write_summary(&s.summary(Command::Validate, body))?;
    Ok(Report {
        code: EXIT_OK,
        lines: vec![format!(
            "config valid: p = {}, q = {}, mesh {} ({} nodes)",
            pr.p(),
            pr.q(),
            s.config.mesh,
            pr.node_count()
        )],
    })
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn cmd_spectrum(s: &Session) -> Result<Report> {
    let which: Threshold = s.config.spectrum.which.parse()?;
    let mode = s.config.spectrum.mode;
    let r = compute_threshold(&s.problem, which, mode, &s.opts)?;
    let body = json!({
        "which": which.to_string(),
        "label": which.label(),
        "value": r.value,
        "mode": mode,
        "moment_residual": r.moment_residual,
        "moment_scale": r.moment_scale,
        "converged": r.converged,
        "iterations": r.iterations,
        "best_seed": r.best_seed,
        "dispersion": r.dispersion,
        "seeds": r.seeds,
    });
    s.write_summary(&s.summary(Command::Spectrum, body))?;
    s.write_trace(&r.history)?;
    s.write_field("minimizer.csv", &r.minimizer)?;
    let mut lines = vec![format!(
        "{} (mode {mode}) = {:.10} on {} [seed {}, {} iterations, moment residual {:.2e}]",
        which.label(),
        r.value,
        s.config.mesh,
        r.best_seed,
        r.iterations,
        r.moment_residual
    )];
    let code = if r.converged {
        EXIT_OK
    } else {
        lines.push("solver did not reach the stationarity tolerance".into());
        EXIT_NOT_CONVERGED
    };
    Ok(Report { code, lines })
}

fn cmd_eigenfunction(s: &Session) -> Result<Report> {
    let cfg = &s.config.eigenfunction;
    let mut lines = Vec::new();
    let (lambda, lambda_hat) = if cfg.relative {
        let hat = compute_threshold(&s.problem, Threshold::Lambda, cfg.mode, &s.opts)?.value;
        lines.push(format!("Λ_q (mode {}) = {hat:.10}", cfg.mode));
        (cfg.lambda * hat, Some(hat))
    } else {
        (cfg.lambda, None)
    };
    let r = solve_eigenfunction(&s.problem, lambda, &s.opts)?;
    let body = json!({
        "lambda": lambda,
        "lambda_hat": lambda_hat,
        "branch": r.branch,
        "outcome": r.outcome.to_string(),
        "energy": r.energy,
        "rayleigh_identity_residual": r.rayleigh_identity_residual,
        "grad_norm": r.grad_norm,
        "iterations": r.iterations,
        "converged": r.converged,
    });
    s.write_summary(&s.summary(Command::Eigenfunction, body))?;
    s.write_trace(&r.trace)?;
    if let Some(u) = &r.eigenfunction {
        s.write_field("eigenfunction.csv", u)?;
    }
    lines.push(format!(
        "λ = {lambda:.10}: {} ({:?} branch), J_λ = {:.6e}, identity residual {:.2e}",
        r.outcome, r.branch, r.energy, r.rayleigh_identity_residual
    ));
    let code = if r.outcome.is_found() && r.rayleigh_identity_residual > RAYLEIGH_IDENTITY_TOL {
        lines.push("eigenfunction fails the Rayleigh identity tolerance".into());
        EXIT_NOT_CONVERGED
    } else {
        EXIT_OK
    };
    Ok(Report { code, lines })
}

fn cmd_scan(s: &Session) -> Result<Report> {
    let cfg = &s.config.scan;
    let mut thresholds = Vec::new();
    for mode in [QuotientMode::W, QuotientMode::C] {
        thresholds.push((mode, compute_threshold(&s.problem, Threshold::Lambda, mode, &s.opts)?.value));
    }
    let base = thresholds
        .iter()
        .find(|(m, _)| *m == cfg.mode)
        .map(|(_, v)| *v)
        .expect("both modes computed");
    let grid: Vec<f64> = if cfg.relative {
        cfg.grid.iter().map(|f| f * base).collect()
    } else {
        cfg.grid.clone()
    };
    let rows = spectral_scan(&s.problem, &grid, &s.opts)?;
    let verdicts: Vec<_> = thresholds.iter().map(|&(m, v)| dichotomy(&rows, m, v)).collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::invalid("cli", format!("csv export: {e}"));
    for row in &rows {
        w.serialize(row).map_err(csv_err)?;
    }
    if rows.is_empty() {
        w.write_record(["lambda", "outcome", "J_value", "rayleigh_residual", "iterations"])
            .map_err(csv_err)?;
    }
    let buf = w.into_inner().map_err(|e| Error::invalid("cli", format!("csv export: {e}")))?;
    s.write("scan.csv", &buf)?;

    let body = json!({
        "thresholds": thresholds.iter().map(|(m, v)| json!({"mode": m, "value": v})).collect::<Vec<_>>(),
        "grid": grid,
        "rows": rows,
        "verdicts": verdicts,
        "matching_modes": verdicts.iter().filter(|v| v.consistent).map(|v| v.mode).collect::<Vec<_>>(),
    });
    s.write_summary(&s.summary(Command::Scan, body))?;

    let mut lines: Vec<String> = thresholds
        .iter()
        .map(|(m, v)| format!("Λ_q (mode {m}) = {v:.10}"))
        .collect();
    lines.push(format!("{:>14}  {:<20} {:>14} {:>12} {:>6}", "lambda", "outcome", "J_value", "identity", "iters"));
    for r in &rows {
        lines.push(format!(
            "{:>14.6}  {:<20} {:>14.6e} {:>12.2e} {:>6}",
            r.lambda, r.outcome, r.j_value, r.rayleigh_residual, r.iterations
        ));
    }
    for v in &verdicts {
        lines.push(format!(
            "dichotomy against mode {} threshold {:.6}: {} ({} rows outside the ±5% band)",
            v.mode,
            v.threshold,
            if v.consistent { "consistent" } else { "inconsistent" },
            v.rows_judged
        ));
    }
    Ok(Report { code: EXIT_OK, lines })
}

fn cmd_solve(s: &Session) -> Result<Report> {
    let cfg = &s.config.solve;
    let report = check_nonresonance(&s.problem, cfg.lambda_decl, cfg.mu_decl, cfg.mode, &s.opts)?;
    let r = solve(&s.problem, &s.opts)?;
    let residual_ok = r.weak_residual <= 1e-6 * r.residual_scale;
    let body = json!({
        "nonresonance": report,
        "J_value": r.j_value,
        "grad_norm": r.grad_norm,
        "weak_residual": r.weak_residual,
        "residual_scale": r.residual_scale,
        "iterations": r.iterations,
        "converged": r.converged,
        "best_seed": r.best_seed,
    });
    s.write_summary(&s.summary(Command::Solve, body))?;
    s.write_trace(&r.trace)?;
    s.write_field("solution.csv", &r.u)?;
    let mut lines = vec![
        format!(
            "Λ̂ = {:.8}, Γ̂ = {:.8}, Π̂ = {:.8} (mode {})",
            report.lambda_hat, report.gamma_hat, report.pi_hat, report.mode
        ),
        format!(
            "κ < Λ̂: {}; (μ, λ) in region: {}",
            report.theorem2_ok, report.theorem3_ok
        ),
    ];
    lines.extend(report.notes.iter().map(|n| format!("note: {n}")));
    lines.push(format!(
        "J(u) = {:.10e}, weak residual {:.2e} (scale {:.2e}), {} iterations",
        r.j_value, r.weak_residual, r.residual_scale, r.iterations
    ));
    let code = if r.converged && residual_ok {
        EXIT_OK
    } else {
        lines.push("solve did not converge to a weak solution".into());
        EXIT_NOT_CONVERGED
    };
    Ok(Report { code, lines })
}

/// Largest relative central-difference error of `grad` against `value`
/// over the given fields and directions.
pub fn max_fd_error(
    value: &dyn Fn(&[f64]) -> Result<f64>,
    grad: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    fields: &[(Vec<f64>, Vec<f64>)],
    h: f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (u, v) in fields {
        let plus: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - h * b).collect();
        let fd = (value(&plus)? - value(&minus)?) / (2.0 * h);
        let an: f64 = grad(u)?.iter().zip(v).map(|(a, b)| a * b).sum();
        let denom = fd.abs().max(an.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max((an - fd).abs() / denom);
    }
    Ok(worst)
}

fn cmd_gradcheck(s: &Session) -> Result<Report> {
    let cfg = &s.config.gradcheck;
    let pr = &s.problem;
    let n = pr.node_count();
    let fields: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.fields as u64)
        .map(|i| {
            let seed = s.config.seed.wrapping_add(2 * i);
            (random_field(n, seed), random_field(n, seed + 1))
        })
        .collect();
    let lambda = cfg.lambda;
    let err_j = max_fd_error(&|u| pr.j(u), &|u| pr.grad_j(u), &fields, cfg.h)?;
    let err_jl = max_fd_error(
        &|u| Ok(pr.j_lambda(u, lambda)),
        &|u| Ok(pr.grad_j_lambda(u, lambda)),
        &fields,
        cfg.h,
    )?;
    let worst = err_j.max(err_jl);
    let passed = worst <= cfg.tolerance;
    let body = json!({
        "fields": cfg.fields,
        "h": cfg.h,
        "lambda": lambda,
        "tolerance": cfg.tolerance,
        "max_rel_error_J": err_j,
        "max_rel_error_J_lambda": err_jl,
        "max_rel_error": worst,
        "passed": passed,
    });
    s.write_summary(&s.summary(Command::Gradcheck, body))?;
    Ok(Report {
        code: if passed { EXIT_OK } else { EXIT_NOT_CONVERGED },
        lines: vec![
            format!("max relative FD error: J {err_j:.3e}, J_λ {err_jl:.3e}"),
            format!("max relative FD error {worst:.3e} (tolerance {:.0e})", cfg.tolerance),
        ],
    })
}
