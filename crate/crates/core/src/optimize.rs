//! First-order minimization: L-BFGS with Armijo backtracking, normalized
//! descent for 0-homogeneous quotients with a signed-moment penalty, and
//! seeded multistart.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::QuotientMode;

/// Smallest accepted step, measured as `t·‖d‖_∞` relative to `max(1, ‖x‖_∞)`.
pub const MIN_STEP: f64 = 1e-16;

/// Parameters of the approximate Wolfe conditions used when the Armijo
/// test is below rounding resolution.
const APPROX_WOLFE_DELTA: f64 = 0.1;
const APPROX_WOLFE_SIGMA: f64 = 0.9;

/// Relative evaluation noise tolerated by the approximate Wolfe test.
pub const ROUNDING_SLACK: f64 = 1e-14;

/// Number of geometric penalty continuation stages in mode C.
pub const PENALTY_STAGES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stationarity threshold: `‖g‖_∞ <= grad_tol·(1 + |f|)`.
    pub grad_tol: f64,
    pub step_init: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub lbfgs_memory: usize,
    /// Initial weight of the signed-moment penalty (mode C).
    pub penalty_weight: f64,
    pub seed: u64,
    /// Number of seeded initializations.
    pub multistart: usize,
    pub workers: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 5000,
            grad_tol: 1e-8,
            step_init: 1.0,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            lbfgs_memory: 8,
            penalty_weight: 1e3,
            seed: 0,
            multistart: 4,
            workers: 1,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid("optimize", msg.to_string()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1");
        }
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return bad("grad_tol must be positive");
        }
        if !(self.step_init > 0.0 && self.step_init.is_finite()) {
            return bad("step_init must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return bad("penalty_weight must be nonnegative");
        }
        if self.multistart == 0 {
            return bad("multistart must be >= 1");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub constraint_residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn push(&mut self, record: IterationRecord) {
        self.records.push(record);
    }

    /// Appends `other`, renumbering its iterations after ours.
    pub fn extend(&mut self, other: IterationTrace) {
        let offset = self.records.last().map_or(0, |r| r.iter + 1);
        self.records.extend(other.records.into_iter().map(|mut r| {
            r.iter += offset;
            r
        }));
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::invalid("optimize", format!("trace export: {e}"));
        for r in &self.records {
            w.serialize(r).map_err(wrap)?;
        }
        if self.records.is_empty() {
            w.write_record(["iter", "objective", "grad_norm", "step", "constraint_residual"])
                .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::invalid("optimize", format!("trace export: {e}")))?;
        Ok(())
    }
}

/// A differentiable objective. `value` may return `+∞` to signal an
/// inadmissible point; the line search then backtracks.
pub trait Objective: Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Maps an accepted trial point back to the admissible set.
    fn retract(&self, _x: &mut [f64]) -> Result<()> {
        Ok(())
    }

    fn constraint_residual(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: IterationTrace,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop(g: &[f64], memory: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alpha = Vec::with_capacity(memory.len());
    for pair in memory.iter().rev() {
        let a = pair.rho * dot(&pair.s, &q);
        for (qi, yi) in q.iter_mut().zip(&pair.y) {
            *qi -= a * yi;
        }
        alpha.push(a);
    }
    if let Some(last) = memory.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (pair, a) in memory.iter().zip(alpha.iter().rev()) {
        let b = pair.rho * dot(&pair.y, &q);
        for (qi, si) in q.iter_mut().zip(&pair.s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `objective` from `x0` with L-BFGS and Armijo backtracking.
///
/// Returns the last iterate with `converged = false` when the iteration
/// budget runs out. A line search that fails even along the steepest
/// descent direction yields [`Error::Stalled`].
pub fn minimize(objective: &dyn Objective, x0: Vec<f64>, opts: &SolverOptions) -> Result<Minimum> {
    opts.validate()?;
    let mut x = x0;
    objective.retract(&mut x)?;
    let mut f = objective.value(&x)?;
    if !f.is_finite() {
        return Err(Error::Initialization(format!("objective is {f} at the starting point")));
    }
    let mut g = objective.gradient(&x)?;
    let mut memory: VecDeque<Pair> = VecDeque::with_capacity(opts.lbfgs_memory);
    let mut trace = IterationTrace::default();
    let mut step = 0.0;

    for iter in 0..opts.max_iterations {
        let grad_norm = norm_inf(&g);
        trace.push(IterationRecord {
            iter,
            objective: f,
            grad_norm,
            step,
            constraint_residual: objective.constraint_residual(&x),
        });
        if grad_norm <= opts.grad_tol * (1.0 + f.abs()) {
            return Ok(Minimum {
                x,
                value: f,
                grad_norm,
                iterations: iter,
                converged: true,
                trace,
            });
        }

        let x_scale = norm_inf(&x).max(1.0);
        let mut accepted = None;
        // First attempt uses the quasi-Newton direction; on failure the
        // memory is dropped and steepest descent is tried once.
        for attempt in 0..2 {
            let mut d = if memory.is_empty() {
                let gamma = opts.step_init * x_scale / grad_norm;
                g.iter().map(|v| -gamma * v).collect()
            } else {
                two_loop(&g, &memory)
            };
            let mut slope = dot(&g, &d);
            if slope >= 0.0 || !slope.is_finite() {
                memory.clear();
                let gamma = opts.step_init * x_scale / grad_norm;
                d = g.iter().map(|v| -gamma * v).collect();
                slope = dot(&g, &d);
            }
            let d_norm = norm_inf(&d);
            let mut t = 1.0;
            while t * d_norm >= MIN_STEP * x_scale {
                let raw: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                let mut trial = raw.clone();
                objective.retract(&mut trial)?;
                let ft = objective.value(&trial)?;
                if ft.is_finite() && ft < f && ft <= f + opts.armijo_c * t * slope {
                    accepted = Some((trial, ft, t * d_norm, None));
                    break;
                }
                // Near a minimizer the value difference drowns in rounding;
                // fall back to the approximate Wolfe test, which only needs
                // the directional derivative.
                if ft.is_finite() && ft <= f + ROUNDING_SLACK * f.abs() {
                    let gt = objective.gradient(&trial)?;
                    // Retractions used here are rescalings; undo the scale
                    // for 0-homogeneous objectives.
                    let c = norm2(&trial) / norm2(&raw);
                    let dt = c * dot(&gt, &d);
                    if (2.0 * APPROX_WOLFE_DELTA - 1.0) * slope >= dt && dt >= APPROX_WOLFE_SIGMA * slope {
                        accepted = Some((trial, ft, t * d_norm, Some(gt)));
                        break;
                    }
                }
                t *= opts.backtrack_factor;
            }
            if accepted.is_some() || (attempt == 0 && memory.is_empty()) {
                break;
            }
            memory.clear();
        }

        let Some((x_new, f_new, taken, g_known)) = accepted else {
            return Err(Error::Stalled {
                iteration: iter,
                min_step: MIN_STEP,
                x,
                value: f,
                trace,
            });
        };
        let g_new = match g_known {
            Some(g) => g,
            None => objective.gradient(&x_new)?,
        };
        if opts.lbfgs_memory > 0 {
            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 0.0 && sy.is_finite() {
                if memory.len() == opts.lbfgs_memory {
                    memory.pop_front();
                }
                memory.push_back(Pair { s, y, rho: 1.0 / sy });
            }
        }
        x = x_new;
        f = f_new;
        g = g_new;
        step = taken;
    }

    let grad_norm = norm_inf(&g);
    trace.push(IterationRecord {
        iter: opts.max_iterations,
        objective: f,
        grad_norm,
        step,
        constraint_residual: objective.constraint_residual(&x),
    });
    let converged = grad_norm <= opts.grad_tol * (1.0 + f.abs());
    Ok(Minimum {
        x,
        value: f,
        grad_norm,
        iterations: opts.max_iterations,
        converged,
        trace,
    })
}

/// Like [`minimize`], but a stalled line search returns the last accepted
/// iterate (with `converged = false`) instead of an error.
pub fn minimize_lenient(objective: &dyn Objective, x0: Vec<f64>, opts: &SolverOptions) -> Result<Minimum> {
    match minimize(objective, x0, opts) {
        Err(Error::Stalled {
            iteration,
            x,
            value,
            trace,
            ..
        }) => {
            let grad_norm = trace.records.last().map_or(f64::NAN, |r| r.grad_norm);
            Ok(Minimum {
                x,
                value,
                grad_norm,
                iterations: iteration,
                converged: false,
                trace,
            })
        }
        other => other,
    }
}

/// A 0-homogeneous objective `R` together with the `degree`-homogeneous
/// mass `K` used for normalization and the `(degree-1)`-homogeneous signed
/// moment `S` defining the constrained set `{S = 0}`.
pub trait Quotient: Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn degree(&self) -> f64;

    fn mass(&self, x: &[f64]) -> f64;

    fn mass_gradient(&self, x: &[f64]) -> Vec<f64>;

    fn moment(&self, x: &[f64]) -> f64;

    fn moment_gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Natural scale of `moment`, used for the membership band.
    fn moment_scale(&self, x: &[f64]) -> f64;

    /// True if `x` lies in the zero-mass set.
    fn degenerate(&self, x: &[f64]) -> bool;

    /// Moves `x` exactly onto `{S = 0}`. Called once after the penalty
    /// stages; the default leaves `x` untouched.
    fn restore_moment(&self, _x: &mut [f64]) -> Result<()> {
        Ok(())
    }
}

/// `R + w·S² / K^{2(q-1)/q}`, 0-homogeneous, with retraction onto `K = 1`.
struct Penalized<'a, Q: Quotient> {
    quotient: &'a Q,
    weight: f64,
}

impl<Q: Quotient> Penalized<'_, Q> {
    fn exponent(&self) -> f64 {
        let q = self.quotient.degree();
        2.0 * (q - 1.0) / q
    }
}

impl<Q: Quotient> Objective for Penalized<'_, Q> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let quotient = self.quotient;
        if quotient.degenerate(x) {
            return Ok(f64::INFINITY);
        }
        let mut v = quotient.value(x)?;
        if self.weight > 0.0 {
            let s = quotient.moment(x);
            v += self.weight * s * s / quotient.mass(x).powf(self.exponent());
        }
        Ok(v)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let quotient = self.quotient;
        let mut g = quotient.gradient(x)?;
        if self.weight > 0.0 {
            let a = self.exponent();
            let s = quotient.moment(x);
            let k = quotient.mass(x);
            let ka = k.powf(a);
            let ds = quotient.moment_gradient(x);
            let dk = quotient.mass_gradient(x);
            let c1 = 2.0 * self.weight * s / ka;
            let c2 = a * self.weight * s * s / (ka * k);
            for ((gi, dsi), dki) in g.iter_mut().zip(&ds).zip(&dk) {
                *gi += c1 * dsi - c2 * dki;
            }
        }
        Ok(g)
    }

    fn retract(&self, x: &mut [f64]) -> Result<()> {
        normalize(self.quotient, x);
        Ok(())
    }

    fn constraint_residual(&self, x: &[f64]) -> f64 {
        if self.weight > 0.0 {
            self.quotient.moment(x).abs()
        } else {
            0.0
        }
    }
}

/// Rescales `x` to unit mass; degenerate fields are left unchanged.
pub fn normalize<Q: Quotient + ?Sized>(quotient: &Q, x: &mut [f64]) {
    let k = quotient.mass(x);
    if k > 0.0 && k.is_finite() && !quotient.degenerate(x) {
        let s = k.powf(-1.0 / quotient.degree());
        x.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone)]
pub struct QuotientMinimum {
    /// Minimizer normalized to unit mass.
    pub x: Vec<f64>,
    pub value: f64,
    /// `|S(x)|` at the returned field (0 in mode W by convention).
    pub moment_residual: f64,
    pub moment_scale: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: IterationTrace,
}

/// Minimizes a 0-homogeneous quotient over `W` (mode W) or over the
/// signed-moment level set (mode C, via penalty continuation and a final
/// exact moment restoration).
pub fn minimize_quotient<Q: Quotient>(
    quotient: &Q,
    x0: Vec<f64>,
    mode: QuotientMode,
    opts: &SolverOptions,
) -> Result<QuotientMinimum> {
    let mut x = x0;
    if quotient.degenerate(&x) {
        return Err(Error::Initialization("starting field lies in the zero-mass set".into()));
    }
    normalize(quotient, &mut x);
    let mut trace = IterationTrace::default();
    let mut iterations = 0;
    let mut converged;
    match mode {
        QuotientMode::W => {
            let run = minimize_lenient(&Penalized { quotient, weight: 0.0 }, x, opts)?;
            x = run.x;
            iterations += run.iterations;
            converged = run.converged;
            trace.extend(run.trace);
        }
        QuotientMode::C => {
            let mut weight = opts.penalty_weight.max(1.0);
            converged = false;
            for _ in 0..PENALTY_STAGES {
                let run = minimize_lenient(&Penalized { quotient, weight }, x, opts)?;
                x = run.x;
                iterations += run.iterations;
                converged = run.converged;
                trace.extend(run.trace);
                weight *= 10.0;
            }
            quotient.restore_moment(&mut x)?;
            normalize(quotient, &mut x);
        }
    }
    if quotient.degenerate(&x) {
        return Err(Error::EtaMembership { k: quotient.mass(&x) });
    }
    let value = quotient.value(&x)?;
    let (moment_residual, moment_scale) = match mode {
        QuotientMode::W => (0.0, quotient.moment_scale(&x)),
        QuotientMode::C => (quotient.moment(&x).abs(), quotient.moment_scale(&x)),
    };
    Ok(QuotientMinimum {
        x,
        value,
        moment_residual,
        moment_scale,
        iterations,
        converged,
        trace,
    })
}

/// Centered uniform noise in `[-1, 1]`, deterministic in `seed`.
pub fn random_field(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Per-seed outcome of a multistart run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Multistart<R> {
    pub best: R,
    pub best_seed: u64,
    pub outcomes: Vec<SeedOutcome>,
}

impl<R> Multistart<R> {
    /// Relative spread `(max - min) / |min|` of the successful values.
    pub fn dispersion(&self) -> f64 {
        let values: Vec<f64> = self.outcomes.iter().filter_map(|o| o.value).collect();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            f64::NAN
        } else {
            (max - min) / min.abs().max(f64::MIN_POSITIVE)
        }
    }
}

/// Runs `run(seed)` for seeds `base_seed .. base_seed + k` on `workers`
/// threads and keeps the smallest value; ties within 1e-12 relative go to
/// the lowest seed. Fails only if every run fails, with the first error.
pub fn multistart<R, F, V>(k: usize, base_seed: u64, workers: usize, run: F, value: V) -> Result<Multistart<R>>
where
    R: Send,
    F: Fn(u64) -> Result<R> + Sync,
    V: Fn(&R) -> f64,
{
    if k == 0 {
        return Err(Error::invalid("optimize", "multistart needs at least one run"));
    }
    let seeds: Vec<u64> = (0..k as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let results: Vec<Result<R>> = if workers <= 1 {
        seeds.iter().map(|&s| run(s)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid("optimize", format!("thread pool: {e}")))?;
        pool.install(|| seeds.par_iter().map(|&s| run(s)).collect())
    };

    let mut outcomes = Vec::with_capacity(k);
    let mut best: Option<(R, f64, u64)> = None;
    let mut first_error = None;
    for (seed, result) in seeds.into_iter().zip(results) {
        match result {
            Ok(r) => {
                let v = value(&r);
                outcomes.push(SeedOutcome {
                    seed,
                    value: Some(v),
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((_, bv, _)) => v < *bv - 1e-12 * bv.abs(),
                };
                if better {
                    best = Some((r, v, seed));
                }
            }
            Err(e) => {
                outcomes.push(SeedOutcome {
                    seed,
                    value: None,
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    match best {
        Some((best, _, best_seed)) => Ok(Multistart {
            best,
            best_seed,
            outcomes,
        }),
        None => Err(first_error.expect("k >= 1 runs recorded")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        a: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok(0.5 * x.iter().zip(&self.a).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        }

        fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(x.iter().zip(&self.a).map(|(u, v)| u - v).collect())
        }
    }

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        }

        fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ])
        }
    }

    fn monotone(trace: &IterationTrace) -> bool {
        trace
            .records
            .windows(2)
            .all(|w| w[1].objective <= w[0].objective + ROUNDING_SLACK * w[0].objective.abs())
    }

    #[test]
    fn quadratic_converges() {
        let a: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let obj = Quadratic { a: a.clone() };
        let min = minimize(&obj, vec![0.0; 20], &SolverOptions::default()).unwrap();
        assert!(min.converged && min.iterations <= 200);
        assert!(min.x.iter().zip(&a).all(|(u, v)| (u - v).abs() < 1e-8));
        assert!(monotone(&min.trace));
    }

    #[test]
    fn rosenbrock_converges_monotonically() {
        let opts = SolverOptions {
            grad_tol: 1e-10,
            ..Default::default()
        };
        let min = minimize(&Rosenbrock, vec![-1.2, 1.0], &opts).unwrap();
        assert!(min.converged);
        assert!((min.x[0] - 1.0).abs() < 1e-6 && (min.x[1] - 1.0).abs() < 1e-6);
        assert!(monotone(&min.trace));
    }

    #[test]
    fn zero_memory_is_steepest_descent() {
        let obj = Quadratic { a: vec![1.0, -2.0] };
        let opts = SolverOptions {
            lbfgs_memory: 0,
            ..Default::default()
        };
        let min = minimize(&obj, vec![0.0, 0.0], &opts).unwrap();
        assert!(min.converged);
    }

    #[test]
    fn infinite_start_is_rejected() {
        struct Wall;
        impl Objective for Wall {
            fn value(&self, _: &[f64]) -> Result<f64> {
                Ok(f64::INFINITY)
            }
            fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![0.0; x.len()])
            }
        }
        assert!(matches!(
            minimize(&Wall, vec![0.0], &SolverOptions::default()),
            Err(Error::Initialization(_))
        ));
    }

    #[test]
    fn inconsistent_gradient_stalls() {
        struct Liar;
        impl Objective for Liar {
            fn value(&self, x: &[f64]) -> Result<f64> {
                Ok(x[0] * x[0])
            }
            fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![-2.0 * x[0] - 1.0])
            }
        }
        match minimize(&Liar, vec![1.0], &SolverOptions::default()) {
            Err(Error::Stalled { trace, .. }) => assert!(!trace.is_empty()),
            other => panic!("expected a stall, got {other:?}"),
        }
    }

    #[test]
    fn invalid_options_are_rejected() {
        let obj = Quadratic { a: vec![0.0] };
        let opts = SolverOptions {
            armijo_c: 1.5,
            ..Default::default()
        };
        assert!(minimize(&obj, vec![1.0], &opts).is_err());
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        IterationTrace::default().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), "iter,objective,grad_norm,step,constraint_residual");
        let obj = Quadratic { a: vec![1.0] };
        let min = minimize(&obj, vec![0.0], &SolverOptions::default()).unwrap();
        let mut buf = Vec::new();
        min.trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,objective,grad_norm,step,constraint_residual\n0,"));
    }

    #[test]
    fn determinism() {
        let a: Vec<f64> = random_field(30, 3);
        let obj = Quadratic { a };
        let x0 = random_field(30, 4);
        let r1 = minimize(&obj, x0.clone(), &SolverOptions::default()).unwrap();
        let r2 = minimize(&obj, x0, &SolverOptions::default()).unwrap();
        assert_eq!(r1.trace, r2.trace);
        assert_eq!(random_field(5, 9), random_field(5, 9));
        assert!(random_field(1000, 1).iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn multistart_selection() {
        let run = |seed: u64| -> Result<f64> {
            if seed == 12 {
                Err(Error::Initialization("boom".into()))
            } else {
                Ok(((seed as f64) - 13.4).abs())
            }
        };
        let one = multistart(1, 10, 1, run, |v| *v).unwrap();
        assert_eq!(one.best, run(10).unwrap());
        let eight = multistart(8, 10, 1, run, |v| *v).unwrap();
        assert!(eight.best <= one.best);
        assert_eq!(eight.best_seed, 13);
        assert_eq!(eight.outcomes.len(), 8);
        assert!(eight.outcomes[2].error.is_some());
        let parallel = multistart(8, 10, 3, run, |v| *v).unwrap();
        assert_eq!(parallel.best_seed, 13);
        assert_eq!(parallel.outcomes, eight.outcomes);

        let tie = multistart(4, 0, 1, |_| Ok(1.0), |v: &f64| *v).unwrap();
        assert_eq!(tie.best_seed, 0);

        let all_fail = multistart(3, 0, 1, |_| -> Result<f64> { Err(Error::Initialization("x".into())) }, |v| *v);
        assert!(all_fail.is_err());
    }

    /// Dense generalized Rayleigh quotient `xᵀAx / xᵀMx` with `M` diagonal.
    struct DenseQuotient {
        a: Vec<Vec<f64>>,
        m: Vec<f64>,
    }

    impl DenseQuotient {
        fn ax(&self, x: &[f64]) -> Vec<f64> {
            self.a.iter().map(|row| dot(row, x)).collect()
        }
    }

    impl Quotient for DenseQuotient {
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok(dot(&self.ax(x), x) / self.mass(x))
        }
        fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
            let k = self.mass(x);
            let r = dot(&self.ax(x), x) / k;
            Ok(self
                .ax(x)
                .iter()
                .zip(x)
                .zip(&self.m)
                .map(|((ax, xi), mi)| 2.0 * (ax - r * mi * xi) / k)
                .collect())
        }
        fn degree(&self) -> f64 {
            2.0
        }
        fn mass(&self, x: &[f64]) -> f64 {
            x.iter().zip(&self.m).map(|(v, m)| m * v * v).sum()
        }
        fn mass_gradient(&self, x: &[f64]) -> Vec<f64> {
            x.iter().zip(&self.m).map(|(v, m)| 2.0 * m * v).collect()
        }
        fn moment(&self, x: &[f64]) -> f64 {
            dot(x, &self.m)
        }
        fn moment_gradient(&self, _x: &[f64]) -> Vec<f64> {
            self.m.clone()
        }
        fn moment_scale(&self, x: &[f64]) -> f64 {
            x.iter().zip(&self.m).map(|(v, m)| m * v.abs()).sum()
        }
        fn degenerate(&self, x: &[f64]) -> bool {
            self.mass(x) <= 0.0
        }
        fn restore_moment(&self, x: &mut [f64]) -> Result<()> {
            let shift = self.moment(x) / self.m.iter().sum::<f64>();
            x.iter_mut().for_each(|v| *v -= shift);
            Ok(())
        }
    }

    fn diagonal(values: &[f64]) -> DenseQuotient {
        let n = values.len();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = values[i];
        }
        DenseQuotient { a, m: vec![1.0; n] }
    }

    #[test]
    fn quotient_mode_w_finds_smallest_eigenvalue() {
        let quotient = diagonal(&[3.0, 1.5, 7.0, 2.0]);
        let min = minimize_quotient(&quotient, vec![1.0, 1.0, 1.0, 1.0], QuotientMode::W, &SolverOptions::default())
            .unwrap();
        assert!((min.value - 1.5).abs() < 1e-10);
        assert!((quotient.mass(&min.x) - 1.0).abs() < 1e-10);
        assert!(monotone(&min.trace));
    }

    #[test]
    fn quotient_fixed_point() {
        let quotient = diagonal(&[3.0, 1.5, 7.0]);
        let min = minimize_quotient(&quotient, vec![0.0, 2.0, 0.0], QuotientMode::W, &SolverOptions::default()).unwrap();
        assert_eq!(min.value, 1.5);
        assert_eq!(min.iterations, 0);
    }

    #[test]
    fn quotient_mode_c_respects_the_moment() {
        // A = I + e eᵀ (all ones), so the constant vector is penalized;
        // on {Σx = 0} the quotient is identically 1.
        let n = 5;
        let a = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 2.0 } else { 1.0 }).collect())
            .collect();
        let quotient = DenseQuotient { a, m: vec![1.0; n] };
        let x0 = vec![1.0, 0.5, -0.3, 0.2, 0.9];
        let w = minimize_quotient(&quotient, x0.clone(), QuotientMode::W, &SolverOptions::default()).unwrap();
        assert!((w.value - 1.0).abs() < 1e-8);
        let c = minimize_quotient(&quotient, x0, QuotientMode::C, &SolverOptions::default()).unwrap();
        assert!((c.value - 1.0).abs() < 1e-8);
        assert!(c.moment_residual <= 1e-8 * c.moment_scale);
    }

    #[test]
    fn degenerate_start_is_rejected() {
        let quotient = diagonal(&[1.0, 2.0]);
        assert!(matches!(
            minimize_quotient(&quotient, vec![0.0, 0.0], QuotientMode::W, &SolverOptions::default()),
            Err(Error::Initialization(_))
        ));
    }
}
