//! Spectral thresholds, eigenfunctions at a given λ, and the λ-scan.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forms::{Field, Problem};
use crate::functionals::QuotientMode;
use crate::optimize::{
    minimize_lenient, minimize_quotient, multistart, norm_inf, random_field, IterationTrace, Objective, Quotient,
    QuotientMinimum, SeedOutcome, SolverOptions,
};

/// Half-width of the band around the threshold excluded from the dichotomy
/// verdict.
pub const DICHOTOMY_BAND: f64 = 0.05;

/// Relative bound on `|‖u‖_p^p + ‖u‖_q^q - λK_q(u)|` for a found eigenfunction.
pub const RAYLEIGH_IDENTITY_TOL: f64 = 1e-4;

/// Bounds of the trivial-only classification on the direct branch.
pub const TRIVIAL_NORM: f64 = 1e-6;
pub const TRIVIAL_ENERGY: f64 = 1e-10;

/// Stationarity tolerance used on the direct branch, where the decision
/// between a collapsing and a nontrivial minimizer needs tight convergence.
const DIRECT_GRAD_TOL: f64 = 1e-12;

/// Continuation factors `c = (q/p) t^{p-q}` for the tilde quotient are
/// `(q/p)·TILDE_DECAY^k`, `k = 0..=TILDE_STAGES`.
const TILDE_STAGES: i32 = 5;
const TILDE_DECAY: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Threshold {
    Lambda,
    LambdaTilde,
    LambdaQ,
    Gamma,
    Pi,
}

impl Threshold {
    pub const ALL: [Threshold; 5] = [
        Threshold::Lambda,
        Threshold::LambdaTilde,
        Threshold::LambdaQ,
        Threshold::Gamma,
        Threshold::Pi,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Threshold::Lambda => "Λ_q",
            Threshold::LambdaTilde => "Λ̃_q",
            Threshold::LambdaQ => "discrete λ_q",
            Threshold::Gamma => "Γ_q",
            Threshold::Pi => "Π_q",
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Threshold::Lambda => "Lambda",
            Threshold::LambdaTilde => "LambdaTilde",
            Threshold::LambdaQ => "lambda_q",
            Threshold::Gamma => "Gamma",
            Threshold::Pi => "Pi",
        })
    }
}

impl FromStr for Threshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Threshold::ALL
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "spectrum",
                    format!("unknown threshold `{s}` (expected Lambda, LambdaTilde, lambda_q, Gamma or Pi)"),
                )
            })
    }
}

/// `‖u‖_{c2,q}^q / K_q(u)` as a [`Quotient`].
pub struct RayleighQuotient<'a> {
    pub problem: &'a Problem,
}

impl Quotient for RayleighQuotient<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.problem.rayleigh_q(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pr = self.problem;
        let (q, k) = (pr.q(), pr.k_q(x));
        let r = pr.norm_q(x) / k;
        let load = pr.weight_load(x);
        Ok(pr
            .norm_q_gradient(x)
            .iter()
            .zip(&load)
            .map(|(b, w)| q * (b - r * w) / k)
            .collect())
    }

    fn degree(&self) -> f64 {
        self.problem.q()
    }

    fn mass(&self, x: &[f64]) -> f64 {
        self.problem.k_q(x)
    }

    fn mass_gradient(&self, x: &[f64]) -> Vec<f64> {
        let q = self.problem.q();
        self.problem.weight_load(x).into_iter().map(|v| q * v).collect()
    }

    fn moment(&self, x: &[f64]) -> f64 {
        self.problem.signed_moment(x, self.problem.q())
    }

    fn moment_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.problem.moment_gradient(x, self.problem.q())
    }

    fn moment_scale(&self, x: &[f64]) -> f64 {
        self.problem.moment_scale(x, self.problem.q())
    }

    fn degenerate(&self, x: &[f64]) -> bool {
        self.problem.in_eta(x)
    }

    fn restore_moment(&self, x: &mut [f64]) -> Result<()> {
        restore_moment(self.problem, x)
    }
}

/// `x ↦ rayleigh_tilde(t·x / K_q(x)^{1/q})`, which equals
/// `c·‖x‖_{c1,p}^p / K^{p/q} + ‖x‖_{c2,q}^q / K` with `c = (q/p) t^{p-q}`.
pub struct TildeQuotient<'a> {
    pub problem: &'a Problem,
    pub c: f64,
}

impl Quotient for TildeQuotient<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let pr = self.problem;
        let r = pr.rayleigh_q(x)?;
        let k = pr.k_q(x);
        Ok(self.c * pr.norm_p(x) / k.powf(pr.p() / pr.q()) + r)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pr = self.problem;
        let (p, q) = (pr.p(), pr.q());
        let k = pr.k_q(x);
        let kp = k.powf(p / q);
        let a = pr.norm_p(x);
        let r = pr.norm_q(x) / k;
        let load = pr.weight_load(x);
        let ga = pr.norm_p_gradient(x);
        let gb = pr.norm_q_gradient(x);
        Ok(ga
            .iter()
            .zip(&gb)
            .zip(&load)
            .map(|((ga, gb), w)| self.c * p * (ga - a * w / k) / kp + q * (gb - r * w) / k)
            .collect())
    }

    fn degree(&self) -> f64 {
        self.problem.q()
    }

    fn mass(&self, x: &[f64]) -> f64 {
        self.problem.k_q(x)
    }

    fn mass_gradient(&self, x: &[f64]) -> Vec<f64> {
        RayleighQuotient { problem: self.problem }.mass_gradient(x)
    }

    fn moment(&self, x: &[f64]) -> f64 {
        RayleighQuotient { problem: self.problem }.moment(x)
    }

    fn moment_gradient(&self, x: &[f64]) -> Vec<f64> {
        RayleighQuotient { problem: self.problem }.moment_gradient(x)
    }

    fn moment_scale(&self, x: &[f64]) -> f64 {
        RayleighQuotient { problem: self.problem }.moment_scale(x)
    }

    fn degenerate(&self, x: &[f64]) -> bool {
        self.problem.in_eta(x)
    }

    fn restore_moment(&self, x: &mut [f64]) -> Result<()> {
        restore_moment(self.problem, x)
    }
}

/// Shifts `x` along `d_i = ∫ m φ_i + ∫_∂ rho φ_i` until `S_q(x) = 0`.
/// `s ↦ S_q(x - s d)` is nonincreasing, so a bracket plus bisection finds
/// the root.
pub fn restore_moment(problem: &Problem, x: &mut [f64]) -> Result<()> {
    let q = problem.q();
    let d = problem.weight_integrals();
    let shifted = |s: f64| -> Vec<f64> { x.iter().zip(&d).map(|(v, di)| v - s * di).collect() };
    let g = |s: f64| problem.signed_moment(&shifted(s), q);
    let g0 = g(0.0);
    if g0 == 0.0 {
        return Ok(());
    }
    let dn = norm_inf(&d);
    if dn == 0.0 {
        return Err(Error::invalid("spectrum", "weights vanish; the signed moment cannot be restored"));
    }
    let direction = g0.signum();
    let mut lo = 0.0;
    let mut hi = direction * 1e-6 * norm_inf(x).max(f64::MIN_POSITIVE) / dn;
    let mut expansions = 0;
    while g(hi).signum() == direction {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 2000 {
            return Err(Error::invalid("spectrum", "could not bracket the signed-moment root"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if g(mid).signum() == direction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = if g(lo).abs() <= g(hi).abs() { lo } else { hi };
    x.copy_from_slice(&shifted(s));
    Ok(())
}

fn mesh_resolution(problem: &Problem) -> usize {
    let mesh = problem.space().mesh();
    let elements = mesh.elements().len();
    if mesh.dimension() == 1 {
        elements
    } else {
        ((elements / 2) as f64).sqrt().round() as usize
    }
}

/// Seeded starting field; in mode C it is antisymmetrized about `x = 1/2`
/// so that the signed moment starts near zero with both signs present.
pub fn initial_field(problem: &Problem, seed: u64, mode: QuotientMode) -> Vec<f64> {
    let mesh = problem.space().mesh();
    let v = random_field(problem.node_count(), seed);
    match mode {
        QuotientMode::W => v,
        QuotientMode::C => (0..v.len()).map(|i| 0.5 * (v[i] - v[mesh.mirror_node(i)])).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub which: Threshold,
    pub mode: QuotientMode,
    pub value: f64,
    /// Minimizer normalized to `K_q = 1`.
    pub minimizer: Field,
    pub moment_residual: f64,
    pub moment_scale: f64,
    pub history: IterationTrace,
    pub mesh_size: usize,
    pub iterations: usize,
    pub converged: bool,
    pub best_seed: u64,
    pub seeds: Vec<SeedOutcome>,
    pub dispersion: f64,
}

/// The problem whose quotient defines `which`: Γ and Π replace the weights
/// by `(0, 1)` and `(1, 0)`.
pub fn threshold_problem(problem: &Problem, which: Threshold) -> Result<Problem> {
    let target = match which {
        Threshold::Gamma => problem.with_constant_weights(0.0, 1.0),
        Threshold::Pi => problem.with_constant_weights(1.0, 0.0),
        _ => return Ok(problem.clone()),
    };
    target.validate()?;
    Ok(target)
}

fn tilde_continuation(problem: &Problem, x0: Vec<f64>, mode: QuotientMode, opts: &SolverOptions) -> Result<QuotientMinimum> {
    let base = problem.q() / problem.p();
    let mut x = x0;
    let mut trace = IterationTrace::default();
    let mut iterations = 0;
    let mut last = None;
    for k in 0..=TILDE_STAGES {
        let c = base * TILDE_DECAY.powi(k);
        let run = minimize_quotient(&TildeQuotient { problem, c }, x, mode, opts)?;
        x = run.x.clone();
        iterations += run.iterations;
        trace.extend(run.trace.clone());
        last = Some(run);
    }
    let mut result = last.expect("at least one stage");
    result.trace = trace;
    result.iterations = iterations;
    Ok(result)
}

/// Minimizes the quotient defining `which` over the admissible set of
/// `mode`, with `opts.multistart` seeded starts.
pub fn compute_threshold(problem: &Problem, which: Threshold, mode: QuotientMode, opts: &SolverOptions) -> Result<SpectralResult> {
    opts.validate()?;
    let target = threshold_problem(problem, which)?;
    let run = |seed: u64| -> Result<QuotientMinimum> {
        let x0 = initial_field(&target, seed, mode);
        match which {
            Threshold::LambdaTilde => tilde_continuation(&target, x0, mode, opts),
            _ => minimize_quotient(&RayleighQuotient { problem: &target }, x0, mode, opts),
        }
    };
    let ms = multistart(opts.multistart, opts.seed, opts.workers, run, |r| r.value)?;
    let dispersion = ms.dispersion();
    let best = ms.best;
    Ok(SpectralResult {
        which,
        mode,
        value: best.value,
        minimizer: Field::from_vec(best.x),
        moment_residual: best.moment_residual,
        moment_scale: best.moment_scale,
        history: best.trace,
        mesh_size: mesh_resolution(problem),
        iterations: best.iterations,
        converged: best.converged,
        best_seed: ms.best_seed,
        seeds: ms.outcomes,
        dispersion,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderingReport {
    pub mode: QuotientMode,
    pub lambda_q: f64,
    pub lambda: f64,
    pub lambda_tilde: f64,
    /// `λ̂_q <= 1.02·Λ̂_q`.
    pub ordering_ok: bool,
    /// `|Λ̂_q - Λ̃̂_q| <= 0.02·Λ̂_q`.
    pub equality_ok: bool,
    pub positive: bool,
}

pub fn check_ordering(problem: &Problem, mode: QuotientMode, opts: &SolverOptions) -> Result<OrderingReport> {
    let lambda_q = compute_threshold(problem, Threshold::LambdaQ, mode, opts)?.value;
    let lambda = compute_threshold(problem, Threshold::Lambda, mode, opts)?.value;
    let lambda_tilde = compute_threshold(problem, Threshold::LambdaTilde, mode, opts)?.value;
    Ok(OrderingReport {
        mode,
        lambda_q,
        lambda,
        lambda_tilde,
        ordering_ok: lambda_q <= lambda * 1.02,
        equality_ok: (lambda - lambda_tilde).abs() <= 0.02 * lambda,
        positive: lambda_q > 0.0 && lambda > 0.0 && lambda_tilde > 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Direct,
    Nehari,
}

impl Branch {
    pub fn for_exponents(p: f64, q: f64) -> Branch {
        if q < p {
            Branch::Direct
        } else {
            Branch::Nehari
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    EigenfunctionFound,
    TrivialOnly,
    NehariInfeasible,
}

impl Outcome {
    pub fn is_found(self) -> bool {
        self == Outcome::EigenfunctionFound
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::EigenfunctionFound => "eigenfunction-found",
            Outcome::TrivialOnly => "trivial-only",
            Outcome::NehariInfeasible => "nehari-infeasible",
        })
    }
}

#[derive(Debug, Clone)]
pub struct EigenSolveResult {
    pub lambda: f64,
    pub branch: Branch,
    pub outcome: Outcome,
    pub eigenfunction: Option<Field>,
    /// `J_λ` at the returned field (`m_λ` on the Nehari branch).
    pub energy: f64,
    /// `|‖u‖_p^p + ‖u‖_q^q - λK_q(u)| / (‖u‖_p^p + ‖u‖_q^q)`; 0 without an eigenfunction.
    pub rayleigh_identity_residual: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: IterationTrace,
}

impl EigenSolveResult {
    fn empty(lambda: f64, branch: Branch, outcome: Outcome) -> Self {
        EigenSolveResult {
            lambda,
            branch,
            outcome,
            eigenfunction: None,
            energy: 0.0,
            rayleigh_identity_residual: 0.0,
            grad_norm: 0.0,
            iterations: 0,
            converged: true,
            trace: IterationTrace::default(),
        }
    }
}

/// Relative Rayleigh-identity residual of `u` at `lambda`.
pub fn rayleigh_identity_residual(problem: &Problem, u: &[f64], lambda: f64) -> f64 {
    let norms = problem.norm_p(u) + problem.norm_q(u);
    if norms == 0.0 {
        0.0
    } else {
        problem.nehari_residual(u, lambda).abs() / norms
    }
}

struct JLambda<'a> {
    problem: &'a Problem,
    lambda: f64,
}

impl Objective for JLambda<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.problem.j_lambda(x, self.lambda))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.problem.grad_j_lambda(x, self.lambda))
    }
}

/// `v ↦ J_λ(τ(v) v)` on the feasible cone `λK_q(v) > ‖v‖_{c2,q}^q`,
/// `+∞` outside it.
struct NehariObjective<'a> {
    problem: &'a Problem,
    lambda: f64,
}

impl NehariObjective<'_> {
    fn parts(&self, v: &[f64]) -> (f64, f64) {
        let pr = self.problem;
        (pr.norm_p(v), self.lambda * pr.k_q(v) - pr.norm_q(v))
    }
}

impl Objective for NehariObjective<'_> {
    fn value(&self, v: &[f64]) -> Result<f64> {
        let (p, q) = (self.problem.p(), self.problem.q());
        let (a, d) = self.parts(v);
        if !(a > 0.0 && d > 0.0) {
            return Ok(f64::INFINITY);
        }
        Ok((q - p) / (p * q) * a.powf(q / (q - p)) / d.powf(p / (q - p)))
    }

    fn gradient(&self, v: &[f64]) -> Result<Vec<f64>> {
        let tau = self.problem.nehari_factor(v, self.lambda)?;
        let w: Vec<f64> = v.iter().map(|x| tau * x).collect();
        Ok(self
            .problem
            .grad_j_lambda(&w, self.lambda)
            .into_iter()
            .map(|g| tau * g)
            .collect())
    }

    fn retract(&self, v: &mut [f64]) -> Result<()> {
        let k = self.problem.k_q(v);
        if k > 0.0 && k.is_finite() {
            let s = k.powf(-1.0 / self.problem.q());
            v.iter_mut().for_each(|x| *x *= s);
        }
        Ok(())
    }

    fn constraint_residual(&self, v: &[f64]) -> f64 {
        match self.problem.nehari_project(v, self.lambda) {
            Ok(w) => {
                self.problem.nehari_residual(&w, self.lambda).abs() / self.problem.nehari_scale(&w, self.lambda)
            }
            Err(_) => f64::INFINITY,
        }
    }
}

/// Looks for an eigenfunction at `lambda`: global minimization of `J_λ`
/// when `q < p`, minimization over the Nehari manifold when `q > p`.
pub fn solve_eigenfunction(problem: &Problem, lambda: f64, opts: &SolverOptions) -> Result<EigenSolveResult> {
    opts.validate()?;
    if !lambda.is_finite() {
        return Err(Error::invalid("spectrum", format!("lambda must be finite (got {lambda})")));
    }
    match Branch::for_exponents(problem.p(), problem.q()) {
        Branch::Direct => solve_direct(problem, lambda, opts),
        Branch::Nehari => solve_nehari(problem, lambda, opts),
    }
}

fn solve_direct(problem: &Problem, lambda: f64, opts: &SolverOptions) -> Result<EigenSolveResult> {
    let inner = SolverOptions {
        grad_tol: opts.grad_tol.min(DIRECT_GRAD_TOL),
        ..opts.clone()
    };
    let objective = JLambda { problem, lambda };
    let run = |seed: u64| minimize_lenient(&objective, random_field(problem.node_count(), seed), &inner);
    let best = multistart(opts.multistart, opts.seed, opts.workers, run, |m| m.value)?.best;
    let u = best.x;
    let outcome = if best.value < 0.0 {
        Outcome::EigenfunctionFound
    } else if norm_inf(&u) <= TRIVIAL_NORM && best.value.abs() <= TRIVIAL_ENERGY {
        Outcome::TrivialOnly
    } else {
        return Err(Error::NotConverged {
            iterations: best.iterations,
            grad_norm: best.grad_norm,
        });
    };
    let found = outcome.is_found();
    Ok(EigenSolveResult {
        lambda,
        branch: Branch::Direct,
        outcome,
        energy: best.value,
        rayleigh_identity_residual: if found { rayleigh_identity_residual(problem, &u, lambda) } else { 0.0 },
        eigenfunction: found.then(|| Field::from_vec(u)),
        grad_norm: best.grad_norm,
        iterations: best.iterations,
        converged: best.converged,
        trace: best.trace,
    })
}

fn solve_nehari(problem: &Problem, lambda: f64, opts: &SolverOptions) -> Result<EigenSolveResult> {
    if lambda <= 0.0 {
        return Ok(EigenSolveResult::empty(lambda, Branch::Nehari, Outcome::NehariInfeasible));
    }
    let objective = NehariObjective { problem, lambda };
    let run = |seed: u64| {
        let mut v0 = random_field(problem.node_count(), seed);
        if !objective.value(&v0)?.is_finite() {
            // Descend the Rayleigh quotient until some multiple of the
            // field becomes projectable.
            let quotient = minimize_quotient(&RayleighQuotient { problem }, v0, QuotientMode::W, opts)?;
            v0 = quotient.x;
            if !objective.value(&v0)?.is_finite() {
                let (_, denominator) = objective.parts(&v0);
                return Err(Error::ProjectionInfeasible { denominator });
            }
        }
        minimize_lenient(&objective, v0, opts)
    };
    let best = match multistart(opts.multistart, opts.seed, opts.workers, run, |m| m.value) {
        Ok(ms) => ms.best,
        Err(Error::ProjectionInfeasible { .. }) => {
            return Ok(EigenSolveResult::empty(lambda, Branch::Nehari, Outcome::NehariInfeasible));
        }
        Err(e) => return Err(e),
    };
    let u = problem.nehari_project(&best.x, lambda)?;
    Ok(EigenSolveResult {
        lambda,
        branch: Branch::Nehari,
        outcome: Outcome::EigenfunctionFound,
        energy: problem.nehari_energy(&u),
        rayleigh_identity_residual: rayleigh_identity_residual(problem, &u, lambda),
        eigenfunction: Some(u),
        grad_norm: best.grad_norm,
        iterations: best.iterations,
        converged: best.converged,
        trace: best.trace,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub lambda: f64,
    pub outcome: String,
    #[serde(rename = "J_value")]
    pub j_value: f64,
    pub rayleigh_residual: f64,
    pub iterations: usize,
}

impl ScanRow {
    pub fn found(&self) -> bool {
        self.outcome == Outcome::EigenfunctionFound.to_string()
    }

    pub fn negative(&self) -> bool {
        self.outcome == Outcome::TrivialOnly.to_string() || self.outcome == Outcome::NehariInfeasible.to_string()
    }
}

/// Solves for an eigenfunction at each λ of a sorted grid. A failing row is
/// recorded with outcome `error` and the scan continues.
pub fn spectral_scan(problem: &Problem, grid: &[f64], opts: &SolverOptions) -> Result<Vec<ScanRow>> {
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("spectrum", "scan grid must be sorted"));
    }
    let row_opts = SolverOptions {
        workers: 1,
        ..opts.clone()
    };
    let row = |&lambda: &f64| match solve_eigenfunction(problem, lambda, &row_opts) {
        Ok(r) => ScanRow {
            lambda,
            outcome: r.outcome.to_string(),
            j_value: r.energy,
            rayleigh_residual: r.rayleigh_identity_residual,
            iterations: r.iterations,
        },
        Err(e) => ScanRow {
            lambda,
            outcome: format!("error: {e}"),
            j_value: f64::NAN,
            rayleigh_residual: f64::NAN,
            iterations: 0,
        },
    };
    if opts.workers <= 1 {
        return Ok(grid.iter().map(row).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::invalid("spectrum", format!("thread pool: {e}")))?;
    Ok(pool.install(|| grid.par_iter().map(row).collect()))
}

#[derive(Debug, Clone, Serialize)]
pub struct DichotomyVerdict {
    pub mode: QuotientMode,
    pub threshold: f64,
    /// Every row with `λ <= (1-δ)·threshold` has no eigenfunction.
    pub below_ok: bool,
    /// Every row with `λ >= (1+δ)·threshold` has one satisfying the
    /// Rayleigh identity.
    pub above_ok: bool,
    pub rows_judged: usize,
    pub consistent: bool,
}

pub fn dichotomy(rows: &[ScanRow], mode: QuotientMode, threshold: f64) -> DichotomyVerdict {
    let lower = (1.0 - DICHOTOMY_BAND) * threshold;
    let upper = (1.0 + DICHOTOMY_BAND) * threshold;
    let below: Vec<&ScanRow> = rows.iter().filter(|r| r.lambda <= lower).collect();
    let above: Vec<&ScanRow> = rows.iter().filter(|r| r.lambda >= upper).collect();
    let below_ok = below.iter().all(|r| r.negative());
    let above_ok = above
        .iter()
        .all(|r| r.found() && r.rayleigh_residual <= RAYLEIGH_IDENTITY_TOL);
    DichotomyVerdict {
        mode,
        threshold,
        below_ok,
        above_ok,
        rows_judged: below.len() + above.len(),
        consistent: below_ok && above_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{FeSpace, ProblemSpec};
    use crate::mesh::Mesh;
    use std::sync::Arc;

    fn interval(n: usize) -> Arc<FeSpace> {
        Arc::new(FeSpace::new(Mesh::interval(n).unwrap()).unwrap())
    }

    fn opts() -> SolverOptions {
        SolverOptions {
            multistart: 2,
            ..Default::default()
        }
    }

    fn neumann(n: usize, p: f64, q: f64) -> Problem {
        Problem::new(ProblemSpec::new(p, q), interval(n)).unwrap()
    }

    #[test]
    fn threshold_names_round_trip() {
        for t in Threshold::ALL {
            assert_eq!(t.to_string().parse::<Threshold>().unwrap(), t);
        }
        assert!("lambda".parse::<Threshold>().is_err());
    }

    #[test]
    fn constant_field_bounds_mode_w() {
        let pr = neumann(32, 3.0, 2.0);
        let r = compute_threshold(&pr, Threshold::Lambda, QuotientMode::W, &opts()).unwrap();
        assert!(r.value <= 1.0 + 1e-6, "{}", r.value);
        assert!(r.value > 0.0);
        assert!((pr.k_q(&r.minimizer) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn neumann_mode_c_on_coarse_mesh() {
        let pr = neumann(64, 3.0, 2.0);
        let r = compute_threshold(&pr, Threshold::Lambda, QuotientMode::C, &opts()).unwrap();
        let exact = 1.0 + std::f64::consts::PI.powi(2);
        assert!(((r.value - exact) / exact).abs() < 0.01, "{}", r.value);
        assert!(r.moment_residual <= 1e-8 * r.moment_scale);
    }

    #[test]
    fn gamma_matches_lambda_with_boundary_weights() {
        let base = neumann(32, 3.0, 2.0);
        let gamma = compute_threshold(&base, Threshold::Gamma, QuotientMode::C, &opts()).unwrap();
        let steklov = Problem::new(ProblemSpec::new(3.0, 2.0).weights("0", "1").unwrap(), interval(32)).unwrap();
        let lambda = compute_threshold(&steklov, Threshold::Lambda, QuotientMode::C, &opts()).unwrap();
        assert_eq!(gamma.value, lambda.value);
        assert_eq!(gamma.minimizer, lambda.minimizer);
    }

    #[test]
    fn restore_moment_zeroes_the_moment() {
        let pr = Problem::new(ProblemSpec::new(2.0, 3.0).weights("1+x", "2").unwrap(), interval(16)).unwrap();
        for seed in 0..5 {
            let mut u = random_field(17, seed);
            restore_moment(&pr, &mut u).unwrap();
            assert!(pr.signed_moment(&u, 3.0).abs() <= 1e-12 * pr.moment_scale(&u, 3.0));
        }
    }

    #[test]
    fn tilde_quotient_matches_rayleigh_tilde() {
        let pr = Problem::new(ProblemSpec::new(2.0, 3.0).weights("1", "0.5").unwrap(), interval(16)).unwrap();
        let u = random_field(17, 3);
        let t: f64 = 7.0;
        let c = 3.0 / 2.0 * t.powf(2.0 - 3.0);
        let k = pr.k_q(&u);
        let scaled: Vec<f64> = u.iter().map(|v| t * v / k.powf(1.0 / 3.0)).collect();
        let a = TildeQuotient { problem: &pr, c }.value(&u).unwrap();
        let b = pr.rayleigh_tilde(&scaled).unwrap();
        assert!(((a - b) / b).abs() < 1e-12);
    }

    #[test]
    fn quotient_gradients_match_finite_differences() {
        let pr = Problem::new(ProblemSpec::new(2.5, 1.5).weights("1+x", "0.5").unwrap(), interval(12)).unwrap();
        let rq = RayleighQuotient { problem: &pr };
        let tq = TildeQuotient { problem: &pr, c: 0.3 };
        let u: Vec<f64> = random_field(13, 1).iter().map(|v| v + 2.0).collect();
        let v = random_field(13, 2);
        let h = 1e-6;
        let plus: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let dot = |g: Vec<f64>| g.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        for quotient in [&rq as &dyn Quotient, &tq] {
            let fd = (quotient.value(&plus).unwrap() - quotient.value(&minus).unwrap()) / (2.0 * h);
            let an = dot(quotient.gradient(&u).unwrap());
            assert!(((an - fd) / fd.abs().max(1e-3)).abs() < 1e-6, "{an} vs {fd}");
        }
    }

    #[test]
    fn direct_branch_dichotomy() {
        let pr = neumann(32, 3.0, 2.0);
        let big_lambda = compute_threshold(&pr, Threshold::Lambda, QuotientMode::W, &opts()).unwrap().value;
        let below = solve_eigenfunction(&pr, 0.5 * big_lambda, &opts()).unwrap();
        assert_eq!(below.outcome, Outcome::TrivialOnly);
        let above = solve_eigenfunction(&pr, 2.0 * big_lambda, &opts()).unwrap();
        assert_eq!(above.outcome, Outcome::EigenfunctionFound);
        assert!(above.energy < 0.0);
        assert!(above.rayleigh_identity_residual <= RAYLEIGH_IDENTITY_TOL);
        let zero = solve_eigenfunction(&pr, 0.0, &opts()).unwrap();
        assert!(!zero.outcome.is_found());
    }

    #[test]
    fn nehari_branch_dichotomy() {
        let pr = neumann(32, 2.0, 3.0);
        let big_lambda = compute_threshold(&pr, Threshold::Lambda, QuotientMode::W, &opts()).unwrap().value;
        let below = solve_eigenfunction(&pr, 0.9 * big_lambda, &opts()).unwrap();
        assert_eq!(below.outcome, Outcome::NehariInfeasible);
        let above = solve_eigenfunction(&pr, 2.0 * big_lambda, &opts()).unwrap();
        assert_eq!(above.outcome, Outcome::EigenfunctionFound);
        let u = above.eigenfunction.as_ref().unwrap();
        assert!(above.energy > 0.0);
        let j = pr.j_lambda(u, above.lambda);
        assert!(((j - above.energy) / j).abs() < 1e-10);
        assert!(solve_eigenfunction(&pr, 0.0, &opts()).unwrap().outcome == Outcome::NehariInfeasible);
    }

    #[test]
    fn scan_rows_and_verdict() {
        let pr = neumann(32, 3.0, 2.0);
        let big_lambda = compute_threshold(&pr, Threshold::Lambda, QuotientMode::W, &opts()).unwrap().value;
        let grid: Vec<f64> = [0.5, 0.9, 1.1, 2.0].iter().map(|f| f * big_lambda).collect();
        let rows = spectral_scan(&pr, &grid, &opts()).unwrap();
        assert_eq!(rows.len(), 4);
        let verdict = dichotomy(&rows, QuotientMode::W, big_lambda);
        assert!(verdict.consistent, "{rows:?}");
        assert_eq!(verdict.rows_judged, 4);
        assert!(spectral_scan(&pr, &[2.0, 1.0], &opts()).is_err());
    }
}
