//! The nonlinear boundary-value problem: minimization of `J`, weak-residual
//! verification, and the nonresonance checks.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::forms::{Domain, Field, Problem, ProblemSpec, Reaction};
use crate::functionals::QuotientMode;
use crate::optimize::{minimize_lenient, multistart, norm_inf, random_field, IterationTrace, Objective, SolverOptions};
use crate::spectrum::{compute_threshold, Threshold};

/// Magnitudes of `u` at which the asymptotic ratios `qF/|u|^q`, `qG/|u|^q`
/// are sampled.
pub const SAMPLE_MAGNITUDES: [f64; 3] = [1e2, 1e3, 1e4];

/// Upper bound on the number of quadrature points sampled per domain.
const SAMPLE_POINTS: usize = 16;

/// `λ < Π ∧ μ < Γ ∧ Πμ + Γλ < ΠΓ`, all strict.
pub fn region_membership(lambda: f64, mu: f64, pi: f64, gamma: f64) -> Result<bool> {
    if !(pi > 0.0 && gamma > 0.0) {
        return Err(Error::invalid(
            "nonlinear",
            format!("Pi and Gamma must be positive (got Pi = {pi}, Gamma = {gamma})"),
        ));
    }
    Ok(lambda < pi && mu < gamma && pi * mu + gamma * lambda < pi * gamma)
}

/// Largest sampled `qF(x,u)/|u|^q - bound(x)` over the sampled points and
/// magnitudes, for one reaction.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticSample {
    pub reaction: &'static str,
    /// Largest sampled ratio at the largest magnitude.
    pub ratio_max: f64,
    /// Largest excess over the weighted bound `λ m(x)` (or `μ rho(x)`).
    pub weighted_excess: f64,
    /// Largest excess over the unweighted bound `λ` (or `μ`).
    pub plain_excess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NonresonanceReport {
    pub lambda_decl: f64,
    pub mu_decl: f64,
    pub kappa: f64,
    pub mode: QuotientMode,
    pub lambda_hat: f64,
    pub gamma_hat: f64,
    pub pi_hat: f64,
    /// `κ < Λ̂`.
    pub theorem2_ok: bool,
    /// `(μ, λ)` lies in the region bounded by `Π̂μ + Γ̂λ = Π̂Γ̂`.
    pub theorem3_ok: bool,
    pub samples: Vec<AsymptoticSample>,
    pub notes: Vec<String>,
}

fn sample_reaction(
    problem: &Problem,
    which: Reaction,
    bound: f64,
    weight: &[f64],
) -> Result<Option<AsymptoticSample>> {
    let (domain, name) = match which {
        Reaction::F => (Domain::Interior, "F"),
        Reaction::G => (Domain::Boundary, "G"),
    };
    let points = problem.space().points(domain);
    if points.is_empty() {
        return Ok(None);
    }
    let stride = points.len().div_ceil(SAMPLE_POINTS);
    let q = problem.q();
    let mut ratio_max = f64::NEG_INFINITY;
    let mut weighted_excess = f64::NEG_INFINITY;
    let mut plain_excess = f64::NEG_INFINITY;
    for (i, qp) in points.iter().enumerate().step_by(stride) {
        for &magnitude in &SAMPLE_MAGNITUDES {
            for u in [magnitude, -magnitude] {
                let ratio = q * problem.primitive(which, qp.x, u)? / magnitude.powf(q);
                if magnitude == SAMPLE_MAGNITUDES[SAMPLE_MAGNITUDES.len() - 1] {
                    ratio_max = ratio_max.max(ratio);
                    weighted_excess = weighted_excess.max(ratio - bound * weight[i]);
                    plain_excess = plain_excess.max(ratio - bound);
                }
            }
        }
    }
    Ok(Some(AsymptoticSample {
        reaction: name,
        ratio_max,
        weighted_excess,
        plain_excess,
    }))
}

/// Computes `Λ̂`, `Γ̂`, `Π̂` in `mode` and judges the declared asymptotic
/// bounds. Sampled ratios only produce warnings in `notes`.
pub fn check_nonresonance(
    problem: &Problem,
    lambda_decl: f64,
    mu_decl: f64,
    mode: QuotientMode,
    opts: &SolverOptions,
) -> Result<NonresonanceReport> {
    if !(lambda_decl.is_finite() && mu_decl.is_finite()) {
        return Err(Error::invalid("nonlinear", "declared bounds must be finite"));
    }
    let lambda_hat = compute_threshold(problem, Threshold::Lambda, mode, opts)?.value;
    let gamma_hat = compute_threshold(problem, Threshold::Gamma, mode, opts)?.value;
    let pi_hat = compute_threshold(problem, Threshold::Pi, mode, opts)?.value;
    let kappa = lambda_decl.max(mu_decl);
    let theorem2_ok = kappa < lambda_hat;
    let theorem3_ok = region_membership(lambda_decl, mu_decl, pi_hat, gamma_hat)?;

    let mut samples = Vec::new();
    let mut notes = Vec::new();
    let tol = 1e-6;
    for (which, bound, weight) in [
        (Reaction::F, lambda_decl, problem.coefficient(crate::forms::CoefficientName::M).values()),
        (Reaction::G, mu_decl, problem.coefficient(crate::forms::CoefficientName::Rho).values()),
    ] {
        if let Some(s) = sample_reaction(problem, which, bound, weight)? {
            let scale = 1.0 + bound.abs();
            if s.weighted_excess > tol * scale {
                notes.push(format!(
                    "sampled q{0}/|u|^q exceeds the declared weighted bound by {1:.3e} at |u| = {2:e}; \
                     the κ < Λ̂ verdict relies on the declaration",
                    s.reaction,
                    s.weighted_excess,
                    SAMPLE_MAGNITUDES[SAMPLE_MAGNITUDES.len() - 1]
                ));
            }
            if s.plain_excess > tol * scale {
                notes.push(format!(
                    "sampled q{0}/|u|^q exceeds the declared bound {1} by {2:.3e}; the region verdict relies on the declaration",
                    s.reaction, bound, s.plain_excess
                ));
            }
            samples.push(s);
        }
    }
    if !theorem2_ok {
        notes.push(format!("κ = {kappa} is not below Λ̂ = {lambda_hat}"));
    }
    if !theorem3_ok {
        notes.push(format!(
            "(μ, λ) = ({mu_decl}, {lambda_decl}) is outside the region for Π̂ = {pi_hat}, Γ̂ = {gamma_hat}"
        ));
    }
    Ok(NonresonanceReport {
        lambda_decl,
        mu_decl,
        kappa,
        mode,
        lambda_hat,
        gamma_hat,
        pi_hat,
        theorem2_ok,
        theorem3_ok,
        samples,
        notes,
    })
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: Field,
    pub j_value: f64,
    pub grad_norm: f64,
    /// `max_i |⟨J'(u), φ_i⟩|`.
    pub weak_residual: f64,
    /// `1 + ‖B(u, φ_·)‖_∞`, the scale of `weak_residual`.
    pub residual_scale: f64,
    pub iterations: usize,
    pub converged: bool,
    pub best_seed: u64,
    pub trace: IterationTrace,
}

/// `(max_i |⟨J'(u), φ_i⟩|, 1 + ‖B(u, φ_·)‖_∞)`.
pub fn weak_residual(problem: &Problem, u: &[f64]) -> Result<(f64, f64)> {
    let residual = norm_inf(&problem.grad_j(u)?);
    let scale = 1.0 + norm_inf(&problem.operator_residual(u));
    Ok((residual, scale))
}

struct Energy<'a> {
    problem: &'a Problem,
}

impl Objective for Energy<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.problem.j(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.problem.grad_j(x)
    }
}

/// Minimizes `J` from `opts.multistart` seeded starts and reports the best
/// critical point with its weak residual.
pub fn solve(problem: &Problem, opts: &SolverOptions) -> Result<SolveResult> {
    opts.validate()?;
    let objective = Energy { problem };
    let run = |seed: u64| minimize_lenient(&objective, random_field(problem.node_count(), seed), opts);
    let ms = multistart(opts.multistart, opts.seed, opts.workers, run, |m| m.value)?;
    let best = ms.best;
    let (weak, scale) = weak_residual(problem, &best.x)?;
    Ok(SolveResult {
        u: Field::from_vec(best.x),
        j_value: best.value,
        grad_norm: best.grad_norm,
        weak_residual: weak,
        residual_scale: scale,
        iterations: best.iterations,
        converged: best.converged,
        best_seed: ms.best_seed,
        trace: best.trace,
    })
}

/// Sets `f = c1 K^{p-1} + c2 K^{q-1}` (with its primitive) and `g = 0`, so
/// that `u ≡ K` is an exact discrete critical point of `J`.
pub fn manufactured_constant(spec: &ProblemSpec, k: f64) -> Result<ProblemSpec> {
    let a = k.powf(spec.p - 1.0);
    let b = k.powf(spec.q - 1.0);
    let f = format!("({})*{a:e}+({})*{b:e}", spec.c1, spec.c2);
    let primitive = format!("(({f}))*u");
    let mut out = spec.clone();
    out.f = Expr::parse(&f)?;
    out.primitive_f = Some(Expr::parse(&primitive)?);
    out.g = Expr::constant(0.0);
    out.primitive_g = Some(Expr::constant(0.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::FeSpace;
    use crate::mesh::Mesh;
    use proptest::prelude::*;
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

    #[test]
    fn region_examples() {
        assert!(region_membership(0.0, 0.0, 0.7, 3.0).unwrap());
        assert!(!region_membership(1.0, 1.0, 2.0, 2.0).unwrap());
        assert!(!region_membership(2.0, -100.0, 2.0, 5.0).unwrap());
        assert!(region_membership(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(region_membership(0.0, 0.0, 1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn region_is_monotone(
            lambda in -5.0..5.0f64,
            mu in -5.0..5.0f64,
            pi in 0.1..5.0f64,
            gamma in 0.1..5.0f64,
            dl in 0.0..3.0f64,
            dm in 0.0..3.0f64,
        ) {
            if region_membership(lambda, mu, pi, gamma).unwrap() {
                prop_assert!(region_membership(lambda - dl, mu - dm, pi, gamma).unwrap());
            }
        }
    }

    #[test]
    fn zero_reactions_give_zero_solution() {
        let pr = Problem::new(ProblemSpec::new(2.0, 3.0), interval(32)).unwrap();
        let r = solve(&pr, &opts()).unwrap();
        assert!(r.converged);
        assert!(r.u.norm_inf() < 1e-6);
        assert!(r.j_value.abs() < 1e-10);
    }

    #[test]
    fn manufactured_constant_solution() {
        for (p, q) in [(2.0, 3.0), (3.0, 1.5)] {
            let base = ProblemSpec::new(p, q).c1("1+x").unwrap().c2("2-x*x").unwrap();
            let spec = manufactured_constant(&base, 1.0).unwrap();
            let pr = Problem::new(spec, interval(48)).unwrap();
            let one = vec![1.0; 49];
            let (w, _) = weak_residual(&pr, &one).unwrap();
            assert!(w <= 1e-10, "{w}");
            let r = solve(&pr, &opts()).unwrap();
            assert!(r.weak_residual <= 1e-6 * r.residual_scale, "{} vs {}", r.weak_residual, r.residual_scale);
        }
    }

    #[test]
    fn bounded_reaction_converges() {
        let spec = ProblemSpec::new(2.0, 3.0).interior_reaction("sin(u)", None).unwrap();
        let pr = Problem::new(spec, interval(32)).unwrap();
        let r = solve(&pr, &opts()).unwrap();
        assert!(r.converged);
        assert!(r.grad_norm <= 1e-8 * (1.0 + r.j_value.abs()));
        assert!(r.weak_residual <= 1e-6 * r.residual_scale);
    }

    #[test]
    fn nonresonance_verdicts() {
        let spec = ProblemSpec::new(3.0, 2.0).weights("1", "1").unwrap();
        let pr = Problem::new(spec, interval(32)).unwrap();
        let r = check_nonresonance(&pr, 0.0, 0.0, QuotientMode::W, &opts()).unwrap();
        assert!(r.theorem2_ok && r.theorem3_ok);
        assert!(r.lambda_hat > 0.0 && r.gamma_hat > 0.0 && r.pi_hat > 0.0);
        let r2 = check_nonresonance(&pr, 2.0 * r.lambda_hat, 0.0, QuotientMode::W, &opts()).unwrap();
        assert!(!r2.theorem2_ok);
        // Each coordinate below its bound, jointly outside the region.
        let (lambda, mu) = (0.6 * r.pi_hat, 0.6 * r.gamma_hat);
        let r3 = check_nonresonance(&pr, lambda, mu, QuotientMode::W, &opts()).unwrap();
        assert!(!r3.theorem3_ok);
    }

    #[test]
    fn sampling_flags_superlinear_reactions() {
        let spec = ProblemSpec::new(3.0, 2.0)
            .interior_reaction("4*u", Some("2*u*u"))
            .unwrap();
        let pr = Problem::new(spec, interval(16)).unwrap();
        // qF/|u|^q = 4 exceeds the declared bound 1.
        let r = check_nonresonance(&pr, 1.0, 0.0, QuotientMode::W, &opts()).unwrap();
        assert!(r.samples[0].ratio_max > 3.9);
        assert!(!r.notes.is_empty());
    }

    #[test]
    fn coercive_along_rays_below_threshold() {
        let base = Problem::new(ProblemSpec::new(3.0, 2.0).weights("1", "1").unwrap(), interval(24)).unwrap();
        let lambda_hat = compute_threshold(&base, Threshold::Lambda, QuotientMode::W, &opts()).unwrap().value;
        let lambda = 0.5 * lambda_hat;
        let spec = ProblemSpec::new(3.0, 2.0)
            .weights("1", "1")
            .unwrap()
            .interior_reaction(&format!("{lambda}*u"), Some(&format!("{lambda}/2*u*u")))
            .unwrap()
            .boundary_reaction(&format!("{lambda}*u"), Some(&format!("{lambda}/2*u*u")))
            .unwrap();
        let pr = Problem::new(spec, interval(24)).unwrap();
        for seed in 0..5 {
            let u = random_field(25, seed);
            let values: Vec<f64> = [10.0, 100.0, 1000.0]
                .iter()
                .map(|t| pr.j(&u.iter().map(|v| t * v).collect::<Vec<_>>()).unwrap())
                .collect();
            assert!(values[0] < values[1] && values[1] < values[2] && values[0] > 0.0);
        }
    }
}
