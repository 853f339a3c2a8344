//! Energies, Rayleigh-type quotients and Nehari algebra on a [`Problem`].

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::forms::{Domain, Field, Problem, Reaction};
use crate::mesh::Point;
use crate::quadrature::gauss_legendre;

/// Relative threshold of the zero-mass test `K_q(u) <= ETA_TOL * scale`.
pub const ETA_TOL: f64 = 1e-14;

/// Relative width of the band around the signed-moment level set.
pub const MOMENT_TOL: f64 = 1e-8;

const PRIMITIVE_TOL: f64 = 1e-10;
const PRIMITIVE_MAX_DEPTH: usize = 30;

/// Admissible set of a quotient minimization: all of `W` (minus the
/// zero-mass set) or only fields with vanishing signed moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum QuotientMode {
    W,
    C,
}

impl std::fmt::Display for QuotientMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QuotientMode::W => "W",
            QuotientMode::C => "C",
        })
    }
}

impl std::str::FromStr for QuotientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "W" | "w" => Ok(QuotientMode::W),
            "C" | "c" => Ok(QuotientMode::C),
            other => Err(Error::invalid("functionals", format!("unknown quotient mode `{other}` (expected W or C)"))),
        }
    }
}

impl Problem {
    /// `J_λ(u) = ‖u‖_{c1,p}^p / p + ‖u‖_{c2,q}^q / q - λ K_q(u) / q`.
    pub fn j_lambda(&self, u: &[f64], lambda: f64) -> f64 {
        let (p, q) = (self.p(), self.q());
        self.norm_p(u) / p + (self.norm_q(u) - lambda * self.k_q(u)) / q
    }

    pub fn grad_j_lambda(&self, u: &[f64], lambda: f64) -> Vec<f64> {
        let mut g = self.operator_residual(u);
        let q = self.q();
        self.space().add_weighted_load(u, &self.m, q, -lambda, &mut g);
        self.space().add_weighted_load(u, &self.rho, q, -lambda, &mut g);
        g
    }

    /// `J(u) = ‖u‖_{c1,p}^p / p + ‖u‖_{c2,q}^q / q - ∫F(x,u) - ∫_∂ G(x,u)`.
    pub fn j(&self, u: &[f64]) -> Result<f64> {
        let base = self.norm_p(u) / self.p() + self.norm_q(u) / self.q();
        let mut reaction = 0.0;
        for (which, domain) in [(Reaction::F, Domain::Interior), (Reaction::G, Domain::Boundary)] {
            for qp in self.space().points(domain) {
                reaction += qp.weight * self.primitive(which, qp.x, qp.interpolate(u))?;
            }
        }
        Ok(base - reaction)
    }

    pub fn grad_j(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.operator_residual(u);
        for which in [Reaction::F, Reaction::G] {
            for (gi, r) in g.iter_mut().zip(self.reaction_load(u, which)?) {
                *gi -= r;
            }
        }
        Ok(g)
    }

    /// `F(x, u)` or `G(x, u)`: the configured primitive if any, otherwise
    /// adaptive Gauss-Legendre quadrature of the reaction over `[0, u]`.
    pub fn primitive(&self, which: Reaction, x: Point, u: f64) -> Result<f64> {
        let spec = self.spec();
        let (reaction, primitive, name) = match which {
            Reaction::F => (&spec.f, &spec.primitive_f, "F"),
            Reaction::G => (&spec.g, &spec.primitive_g, "G"),
        };
        if let Some(prim) = primitive {
            return eval_at(prim, name, x, u);
        }
        if u == 0.0 {
            return Ok(0.0);
        }
        let f = |s: f64| eval_at(reaction, name, x, s);
        adaptive_integral(&f, 0.0, u, PRIMITIVE_TOL, 0).map_err(|e| match e {
            Error::Integration { depth, .. } => Error::Integration { u, depth },
            other => other,
        })
    }

    /// True when `u` lies in the zero-mass set, i.e. `K_q(u)` vanishes
    /// relative to `(∫|u|^q + ∫_∂|u|^q)(‖m‖_∞ + ‖rho‖_∞)`.
    pub fn in_eta(&self, u: &[f64]) -> bool {
        self.k_q(u) <= self.eta_threshold(u)
    }

    fn eta_threshold(&self, u: &[f64]) -> f64 {
        ETA_TOL * self.space().lebesgue_scale(u, self.q()) * (self.m.sup() + self.rho.sup())
    }

    fn checked_k_q(&self, u: &[f64]) -> Result<f64> {
        let k = self.k_q(u);
        if k <= self.eta_threshold(u) {
            Err(Error::EtaMembership { k })
        } else {
            Ok(k)
        }
    }

    /// `‖u‖_{c2,q}^q / K_q(u)`.
    pub fn rayleigh_q(&self, u: &[f64]) -> Result<f64> {
        let k = self.checked_k_q(u)?;
        Ok(self.norm_q(u) / k)
    }

    /// `(‖u‖_{c1,p}^p / p + ‖u‖_{c2,q}^q / q) / (K_q(u) / q)`.
    pub fn rayleigh_tilde(&self, u: &[f64]) -> Result<f64> {
        let k = self.checked_k_q(u)?;
        let q = self.q();
        Ok((self.norm_p(u) / self.p() + self.norm_q(u) / q) / (k / q))
    }

    /// `‖u‖_{c1,p}^p + ‖u‖_{c2,q}^q - λ K_q(u)`.
    pub fn nehari_residual(&self, u: &[f64], lambda: f64) -> f64 {
        self.norm_p(u) + self.norm_q(u) - lambda * self.k_q(u)
    }

    /// Scale of [`Problem::nehari_residual`] used in membership tests.
    pub fn nehari_scale(&self, u: &[f64], lambda: f64) -> f64 {
        self.norm_p(u) + self.norm_q(u) + lambda.abs() * self.k_q(u)
    }

    /// The unique positive multiple of `v` on the Nehari manifold (`q > p`).
    pub fn nehari_project(&self, v: &[f64], lambda: f64) -> Result<Field> {
        let tau = self.nehari_factor(v, lambda)?;
        Ok(Field::from_vec(v.iter().map(|x| tau * x).collect()))
    }

    /// The factor `τ` of [`Problem::nehari_project`].
    pub fn nehari_factor(&self, v: &[f64], lambda: f64) -> Result<f64> {
        let (p, q) = (self.p(), self.q());
        if q <= p {
            return Err(Error::WrongBranch { p, q });
        }
        let a = self.norm_p(v);
        let denominator = lambda * self.k_q(v) - self.norm_q(v);
        if denominator <= 0.0 || a <= 0.0 {
            return Err(Error::ProjectionInfeasible { denominator });
        }
        Ok(nehari_tau(a, denominator, p, q))
    }

    /// `(q - p) / (p q) · ‖u‖_{c1,p}^p`, the value of `J_λ` on the Nehari manifold.
    pub fn nehari_energy(&self, u: &[f64]) -> f64 {
        let (p, q) = (self.p(), self.q());
        (q - p) / (p * q) * self.norm_p(u)
    }
}

/// `τ = (a / d)^{1/(q-p)}`.
pub fn nehari_tau(a: f64, d: f64, p: f64, q: f64) -> f64 {
    (a / d).powf(1.0 / (q - p))
}

fn eval_at(expr: &Expr, name: &'static str, x: Point, u: f64) -> Result<f64> {
    expr.eval(x[0], x[1], u).map_err(|source| Error::Evaluation {
        what: name,
        x: x[0],
        y: x[1],
        u,
        source,
    })
}

fn gl10() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(10))
}

fn gl_panel(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64) -> Result<f64> {
    let (xs, ws) = gl10();
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut sum = 0.0;
    for (x, w) in xs.iter().zip(ws) {
        sum += w * f(mid + half * x)?;
    }
    Ok(half * sum)
}

/// Adaptive Gauss-Legendre integral of `f` over `[a, b]` (`b < a` allowed).
pub fn adaptive_integral(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, tol: f64, depth: usize) -> Result<f64> {
    let whole = gl_panel(f, a, b)?;
    let mid = 0.5 * (a + b);
    let halves = gl_panel(f, a, mid)? + gl_panel(f, mid, b)?;
    if (whole - halves).abs() <= tol.max(tol * halves.abs()) {
        return Ok(halves);
    }
    if depth >= PRIMITIVE_MAX_DEPTH {
        return Err(Error::Integration { u: b, depth });
    }
    Ok(adaptive_integral(f, a, mid, tol, depth + 1)? + adaptive_integral(f, mid, b, tol, depth + 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{FeSpace, ProblemSpec};
    use crate::mesh::Mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn space(n: usize) -> Arc<FeSpace> {
        Arc::new(FeSpace::new(Mesh::interval(n).unwrap()).unwrap())
    }

    fn random_field(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn basic(p: f64, q: f64) -> Problem {
        let spec = ProblemSpec::new(p, q)
            .c1("1+x")
            .unwrap()
            .c2("1+x*x")
            .unwrap()
            .weights("1+sin(x)", "0.5")
            .unwrap();
        Problem::new(spec, space(20)).unwrap()
    }

    fn directional_fd(f: impl Fn(&[f64]) -> f64, u: &[f64], v: &[f64]) -> f64 {
        let h = 1e-5;
        let plus: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - h * b).collect();
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn j_lambda_examples() {
        let pr = basic(2.0, 3.0);
        assert_eq!(pr.j_lambda(&[0.0; 21], 4.0), 0.0);
        let u = random_field(21, 1);
        let zero = pr.j_lambda(&u, 0.0);
        assert!((zero - (pr.norm_p(&u) / 2.0 + pr.norm_q(&u) / 3.0)).abs() < 1e-14);
        let lambda = 2.5;
        for t in [0.3, 1.0, 4.0] {
            let tu: Vec<f64> = u.iter().map(|v| t * v).collect();
            let expected = t.powi(2) / 2.0 * pr.norm_p(&u) + t.powi(3) / 3.0 * (pr.norm_q(&u) - lambda * pr.k_q(&u));
            let got = pr.j_lambda(&tu, lambda);
            assert!(((got - expected) / expected).abs() < 1e-10);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (p, q) in [(2.0, 3.0), (3.0, 2.0), (1.5, 2.5), (2.5, 1.5)] {
            let spec = ProblemSpec::new(p, q)
                .c1("1+x")
                .unwrap()
                .weights("1", "1")
                .unwrap()
                .interior_reaction("sin(u) + x", Some("1 - cos(u) + x*u"))
                .unwrap()
                .boundary_reaction("u/(1+u*u)", Some("0.5*log(1+u*u)"))
                .unwrap();
            let pr = Problem::new(spec, space(16)).unwrap();
            for seed in 0..10 {
                let u = random_field(17, seed);
                let v = random_field(17, 50 + seed);
                let fd = directional_fd(|w| pr.j_lambda(w, 1.7), &u, &v);
                let an = dot(&pr.grad_j_lambda(&u, 1.7), &v);
                assert!(((an - fd) / fd.abs().max(1e-3)).abs() < 1e-6, "J_λ {p},{q}: {an} vs {fd}");
                let fd = directional_fd(|w| pr.j(w).unwrap(), &u, &v);
                let an = dot(&pr.grad_j(&u).unwrap(), &v);
                assert!(((an - fd) / fd.abs().max(1e-3)).abs() < 1e-6, "J {p},{q}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_zero() {
        let pr = basic(2.0, 3.0);
        assert!(pr.grad_j_lambda(&[0.0; 21], 3.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn j_without_reactions_is_j_lambda_at_zero() {
        let pr = basic(2.5, 1.5);
        let u = random_field(21, 4);
        assert!((pr.j(&u).unwrap() - pr.j_lambda(&u, 0.0)).abs() < 1e-14);
        assert_eq!(pr.j(&[0.0; 21]).unwrap(), 0.0);
    }

    #[test]
    fn eigen_type_reactions_reproduce_j_lambda() {
        let lambda = 1.3;
        for (p, q) in [(2.0, 3.0), (3.0, 1.5)] {
            let f = format!("{lambda}*(1+x)*abs(u)^({q}-2)*u");
            let big_f = format!("{lambda}/{q}*(1+x)*abs(u)^{q}");
            let g = format!("{lambda}*2*abs(u)^({q}-2)*u");
            let big_g = format!("{lambda}/{q}*2*abs(u)^{q}");
            for closed in [true, false] {
                let spec = ProblemSpec::new(p, q)
                    .weights("1+x", "2")
                    .unwrap()
                    .interior_reaction(&f, closed.then_some(big_f.as_str()))
                    .unwrap()
                    .boundary_reaction(&g, closed.then_some(big_g.as_str()))
                    .unwrap();
                let pr = Problem::new(spec, space(12)).unwrap();
                let u: Vec<f64> = random_field(13, 8).iter().map(|v| v + 0.1).collect();
                let a = pr.j(&u).unwrap();
                let b = pr.j_lambda(&u, lambda);
                let tol = if closed { 1e-10 } else { 1e-8 };
                assert!(((a - b) / b).abs() < tol, "closed={closed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn primitive_examples() {
        let spec = ProblemSpec::new(2.0, 3.0)
            .interior_reaction("u", None)
            .unwrap()
            .boundary_reaction("abs(u)^(3-2)*u", None)
            .unwrap();
        let pr = Problem::new(spec, space(4)).unwrap();
        assert!((pr.primitive(Reaction::F, [0.2, 0.0], 2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((pr.primitive(Reaction::G, [0.0, 0.0], -2.0).unwrap() - 8.0 / 3.0).abs() < 1e-10);
        let spec = ProblemSpec::new(2.0, 3.0).interior_reaction("sin(u)", None).unwrap();
        let pr = Problem::new(spec, space(4)).unwrap();
        let v = pr.primitive(Reaction::F, [0.5, 0.0], std::f64::consts::PI).unwrap();
        assert!((v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn primitive_integration_failure_is_reported() {
        // Not integrable near 0: the adaptive rule never settles.
        let spec = ProblemSpec::new(2.0, 3.0).interior_reaction("sign(u)*abs(u)^(-0.999)", None).unwrap();
        let pr = Problem::new(spec, space(4)).unwrap();
        let err = pr.primitive(Reaction::F, [0.5, 0.0], 1.0).unwrap_err();
        assert!(matches!(err, Error::Integration { .. }), "{err}");
    }

    #[test]
    fn rayleigh_examples() {
        let spec = ProblemSpec::new(2.0, 3.0);
        let pr = Problem::new(spec, space(10)).unwrap();
        let one = vec![1.0; 11];
        assert!((pr.rayleigh_q(&one).unwrap() - 1.0).abs() < 1e-14);
        assert!((pr.rayleigh_tilde(&one).unwrap() - 2.5).abs() < 1e-13);

        let pr = basic(2.0, 3.0);
        let u = random_field(21, 2);
        let base = pr.rayleigh_q(&u).unwrap();
        for t in [-1.0, 0.5, 10.0] {
            let tu: Vec<f64> = u.iter().map(|v| t * v).collect();
            assert!(((pr.rayleigh_q(&tu).unwrap() - base) / base).abs() < 1e-12);
        }

        let spec = ProblemSpec::new(2.0, 3.0).weights("0", "0").unwrap();
        let pr = Problem::assemble(spec, space(10)).unwrap();
        assert!(matches!(pr.rayleigh_q(&one), Err(Error::EtaMembership { .. })));
        assert!(matches!(pr.rayleigh_tilde(&one), Err(Error::EtaMembership { .. })));
    }

    #[test]
    fn rayleigh_tilde_scaling_limits() {
        for (p, q, t) in [(2.0, 3.0, 1e3), (3.0, 2.0, 1e-3)] {
            let pr = basic(p, q);
            let u = pr.space().interpolate(|x| 1.0 + x[0] + (5.0 * x[0]).sin());
            let tu: Vec<f64> = u.iter().map(|v| t * v).collect();
            let rq = pr.rayleigh_q(&u).unwrap();
            let rt = pr.rayleigh_tilde(&tu).unwrap();
            assert!(rt >= rq && (rt - rq) / rq < 0.01, "{p},{q}: {rt} vs {rq}");
        }
    }

    #[test]
    fn nehari_examples() {
        let pr = basic(2.0, 3.0);
        assert_eq!(pr.nehari_residual(&[0.0; 21], 2.0), 0.0);
        let u = random_field(21, 3);
        assert!(pr.nehari_residual(&u, 0.0) > 0.0);

        assert_eq!(nehari_tau(1.0, 2.0 * 1.0 - 1.0, 2.0, 3.0), 1.0);
        assert_eq!(nehari_tau(1.0, 3.0 * 1.0 - 1.0, 2.0, 3.0), 0.5);

        // Scale v so that ‖v‖_q^q / K_q(v) gives λ = 1 exactly at the feasibility boundary.
        let lambda = pr.rayleigh_q(&u).unwrap();
        assert!(matches!(
            pr.nehari_project(&u, lambda * (1.0 - 1e-12)),
            Err(Error::ProjectionInfeasible { .. })
        ));
        let swapped = basic(3.0, 2.0);
        assert!(matches!(swapped.nehari_project(&u, 10.0), Err(Error::WrongBranch { .. })));

        let p6 = ProblemSpec::new(2.0, 3.0);
        let pr6 = Problem::new(p6, space(4)).unwrap();
        let c: Vec<f64> = vec![3f64.sqrt(); 5];
        assert!((pr6.nehari_energy(&c) - 0.5).abs() < 1e-13);
    }

    #[test]
    fn projection_lands_on_nehari_manifold() {
        let pr = basic(2.0, 3.0);
        for seed in 0..10 {
            let u = random_field(21, seed);
            let lambda = 2.0 * pr.rayleigh_q(&u).unwrap();
            let w = pr.nehari_project(&u, lambda).unwrap();
            let r = pr.nehari_residual(&w, lambda);
            assert!(r.abs() <= 1e-10 * pr.nehari_scale(&w, lambda));
            let j = pr.j_lambda(&w, lambda);
            assert!((j - pr.nehari_energy(&w)).abs() <= 1e-10 * (1.0 + j.abs()));
            assert!(j > 0.0);
        }
    }

    #[test]
    fn nehari_energy_is_negative_when_q_below_p() {
        let pr = basic(3.0, 2.0);
        let u = random_field(21, 5);
        assert!(pr.nehari_energy(&u) < 0.0);
    }

    #[test]
    fn tilde_dominates_rayleigh() {
        for (p, q) in [(2.0, 3.0), (3.0, 2.0)] {
            let pr = basic(p, q);
            for seed in 0..20 {
                let u = random_field(21, seed);
                assert!(pr.rayleigh_tilde(&u).unwrap() >= pr.rayleigh_q(&u).unwrap());
            }
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("C".parse::<QuotientMode>().unwrap(), QuotientMode::C);
        assert!("Z".parse::<QuotientMode>().is_err());
    }
}
