//! P1 finite-element integrals.
//!
//! Gradients of P1 fields are constant per simplex, so every gradient
//! integral is evaluated exactly from element measures. Integrals of
//! pointwise nonlinearities (`c |u|^θ`, `m |u|^{θ-2} u`, reactions) use the
//! quadrature tables precomputed in [`FeSpace`].

use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::mesh::{Mesh, Point};
use crate::quadrature::QuadratureRule;

/// Regularization inside `(|∇u|² + ε)^{(θ-2)/2} ∇u` for θ < 2.
pub const GRADIENT_REGULARIZATION: f64 = 1e-12;

pub const DEFAULT_QUADRATURE_ORDER: usize = 5;

/// `|s|^{θ-2} s`, extended by its limit 0 at `s = 0`.
#[inline]
pub fn signed_power(s: f64, theta: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s.abs().powf(theta - 1.0).copysign(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Interior,
    Boundary,
}

/// A quadrature point with its physical weight and the P1 basis values of
/// the simplex (element or boundary facet) that carries it.
#[derive(Debug, Clone)]
pub struct QuadPoint {
    pub x: Point,
    pub weight: f64,
    pub nodes: [usize; 3],
    pub basis: [f64; 3],
    pub count: usize,
}

impl QuadPoint {
    #[inline]
    pub fn interpolate(&self, u: &[f64]) -> f64 {
        (0..self.count).map(|k| self.basis[k] * u[self.nodes[k]]).sum()
    }
}

#[derive(Debug, Clone)]
struct ElementGeometry {
    nodes: [usize; 3],
    count: usize,
    measure: f64,
    grads: [[f64; 2]; 3],
}

impl ElementGeometry {
    #[inline]
    fn gradient(&self, u: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for k in 0..self.count {
            let v = u[self.nodes[k]];
            g[0] += v * self.grads[k][0];
            g[1] += v * self.grads[k][1];
        }
        g
    }
}

/// Mesh plus precomputed element geometry and quadrature tables.
#[derive(Debug, Clone)]
pub struct FeSpace {
    mesh: Mesh,
    order: usize,
    elements: Vec<ElementGeometry>,
    interior: Vec<QuadPoint>,
    boundary: Vec<QuadPoint>,
}

impl FeSpace {
    pub fn new(mesh: Mesh) -> Result<Self> {
        Self::with_order(mesh, DEFAULT_QUADRATURE_ORDER)
    }

    pub fn with_order(mesh: Mesh, order: usize) -> Result<Self> {
        let dim = mesh.dimension();
        let (interior_rule, facet_rule) = if dim == 1 {
            (QuadratureRule::interval(order)?, QuadratureRule::point())
        } else {
            (QuadratureRule::triangle(order)?, QuadratureRule::interval(order)?)
        };
        let nodes = mesh.nodes();

        let mut elements = Vec::with_capacity(mesh.elements().len());
        let mut interior = Vec::with_capacity(mesh.elements().len() * interior_rule.len());
        for (e, el) in mesh.elements().iter().enumerate() {
            let measure = mesh.element_measure(e);
            let mut geo = ElementGeometry {
                nodes: [el[0], el[1], *el.get(2).unwrap_or(&el[0])],
                count: el.len(),
                measure,
                grads: [[0.0; 2]; 3],
            };
            if dim == 1 {
                geo.grads[0] = [-1.0 / measure, 0.0];
                geo.grads[1] = [1.0 / measure, 0.0];
            } else {
                let [p0, p1, p2] = [nodes[el[0]], nodes[el[1]], nodes[el[2]]];
                let two_a = 2.0 * measure;
                geo.grads[0] = [(p1[1] - p2[1]) / two_a, (p2[0] - p1[0]) / two_a];
                geo.grads[1] = [(p2[1] - p0[1]) / two_a, (p0[0] - p2[0]) / two_a];
                geo.grads[2] = [(p0[1] - p1[1]) / two_a, (p1[0] - p0[0]) / two_a];
            }
            // Reference measure is 1 (interval) or 1/2 (triangle).
            let jacobian = if dim == 1 { measure } else { 2.0 * measure };
            for (bary, w) in interior_rule.points.iter().zip(&interior_rule.weights) {
                interior.push(make_point(nodes, &geo.nodes, geo.count, bary, w * jacobian));
            }
            elements.push(geo);
        }

        let mut boundary = Vec::new();
        for (f, facet) in mesh.boundary_facets().iter().enumerate() {
            let length = mesh.facet_measure(f)?;
            let ids = [facet.nodes[0], *facet.nodes.get(1).unwrap_or(&facet.nodes[0]), 0];
            for (bary, w) in facet_rule.points.iter().zip(&facet_rule.weights) {
                boundary.push(make_point(nodes, &ids, facet.nodes.len(), bary, w * length));
            }
        }

        Ok(FeSpace {
            mesh,
            order,
            elements,
            interior,
            boundary,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn quadrature_order(&self) -> usize {
        self.order
    }

    pub fn node_count(&self) -> usize {
        self.mesh.node_count()
    }

    pub fn points(&self, domain: Domain) -> &[QuadPoint] {
        match domain {
            Domain::Interior => &self.interior,
            Domain::Boundary => &self.boundary,
        }
    }

    /// Wrap a coefficient vector after checking length and finiteness.
    pub fn field(&self, values: Vec<f64>) -> Result<Field> {
        if values.len() != self.node_count() {
            return Err(Error::invalid(
                "forms",
                format!("field has {} entries, mesh has {} nodes", values.len(), self.node_count()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("forms", format!("field entry {i} is not finite")));
        }
        Ok(Field(values))
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(Point) -> f64) -> Field {
        Field(self.mesh.nodes().iter().map(|&p| f(p)).collect())
    }

    /// `∫_Ω |∇u|^θ`, exact for P1.
    pub fn grad_seminorm(&self, u: &[f64], theta: f64) -> f64 {
        self.elements
            .iter()
            .map(|el| {
                let g = el.gradient(u);
                el.measure * (g[0] * g[0] + g[1] * g[1]).powf(0.5 * theta)
            })
            .sum()
    }

    /// `∫ c |u|^θ` over the coefficient's domain.
    pub fn weighted_power_mass(&self, u: &[f64], c: &Coefficient, theta: f64) -> f64 {
        self.points(c.domain)
            .iter()
            .zip(&c.values)
            .filter(|(_, &cv)| cv != 0.0)
            .map(|(qp, cv)| qp.weight * cv * qp.interpolate(u).abs().powf(theta))
            .sum()
    }

    /// `∫ c |u|^{θ-2} u` over the coefficient's domain.
    pub fn weighted_signed_mass(&self, u: &[f64], c: &Coefficient, theta: f64) -> f64 {
        self.points(c.domain)
            .iter()
            .zip(&c.values)
            .filter(|(_, &cv)| cv != 0.0)
            .map(|(qp, cv)| qp.weight * cv * signed_power(qp.interpolate(u), theta))
            .sum()
    }

    /// Adds `scale * ∫ c |u|^{θ-2} u φ_i` into `out`.
    pub fn add_weighted_load(&self, u: &[f64], c: &Coefficient, theta: f64, scale: f64, out: &mut [f64]) {
        for (qp, &cv) in self.points(c.domain).iter().zip(&c.values) {
            if cv == 0.0 {
                continue;
            }
            let s = scale * qp.weight * cv * signed_power(qp.interpolate(u), theta);
            for k in 0..qp.count {
                out[qp.nodes[k]] += s * qp.basis[k];
            }
        }
    }

    /// Adds `scale * (θ-1) ∫ c |u|^{θ-2} φ_i` into `out`: the gradient of
    /// `∫ c |u|^{θ-2} u`. For θ < 2 the weight is regularized as in
    /// [`FeSpace::add_gradient_load`].
    pub fn add_weighted_derivative_load(&self, u: &[f64], c: &Coefficient, theta: f64, scale: f64, out: &mut [f64]) {
        for (qp, &cv) in self.points(c.domain).iter().zip(&c.values) {
            if cv == 0.0 {
                continue;
            }
            let v = qp.interpolate(u);
            let w = if theta < 2.0 {
                (v * v + GRADIENT_REGULARIZATION).powf(0.5 * (theta - 2.0))
            } else if theta == 2.0 {
                1.0
            } else {
                v.abs().powf(theta - 2.0)
            };
            let s = scale * (theta - 1.0) * qp.weight * cv * w;
            for k in 0..qp.count {
                out[qp.nodes[k]] += s * qp.basis[k];
            }
        }
    }

    /// Adds `scale * ∫ c φ_i` into `out`.
    pub fn add_coefficient_load(&self, c: &Coefficient, scale: f64, out: &mut [f64]) {
        for (qp, &cv) in self.points(c.domain).iter().zip(&c.values) {
            let s = scale * qp.weight * cv;
            for k in 0..qp.count {
                out[qp.nodes[k]] += s * qp.basis[k];
            }
        }
    }

    /// Adds `scale * ∫ ψ_θ(∇u)·∇φ_i` into `out`, with the θ < 2 regularization.
    pub fn add_gradient_load(&self, u: &[f64], theta: f64, scale: f64, out: &mut [f64]) {
        for el in &self.elements {
            let g = el.gradient(u);
            let n2 = g[0] * g[0] + g[1] * g[1];
            let factor = if theta < 2.0 {
                (n2 + GRADIENT_REGULARIZATION).powf(0.5 * (theta - 2.0))
            } else if n2 == 0.0 {
                0.0
            } else {
                n2.powf(0.5 * (theta - 2.0))
            };
            let s = scale * el.measure * factor;
            for k in 0..el.count {
                out[el.nodes[k]] += s * (g[0] * el.grads[k][0] + g[1] * el.grads[k][1]);
            }
        }
    }

    /// `∫ c` over the coefficient's domain.
    pub fn integral(&self, c: &Coefficient) -> f64 {
        self.points(c.domain)
            .iter()
            .zip(&c.values)
            .map(|(qp, cv)| qp.weight * cv)
            .sum()
    }

    /// `∫_Ω |u|^θ + ∫_∂Ω |u|^θ`, used as a scale for zero-mass detection.
    pub fn lebesgue_scale(&self, u: &[f64], theta: f64) -> f64 {
        self.interior
            .iter()
            .chain(&self.boundary)
            .map(|qp| qp.weight * qp.interpolate(u).abs().powf(theta))
            .sum()
    }
}

fn make_point(nodes: &[Point], ids: &[usize; 3], count: usize, bary: &[f64], weight: f64) -> QuadPoint {
    let mut x = [0.0; 2];
    let mut basis = [0.0; 3];
    basis[..count].copy_from_slice(&bary[..count]);
    for k in 0..count {
        x[0] += bary[k] * nodes[ids[k]][0];
        x[1] += bary[k] * nodes[ids[k]][1];
    }
    QuadPoint {
        x,
        weight,
        nodes: *ids,
        basis,
        count,
    }
}

/// Nodal coefficient vector of a continuous piecewise-linear function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field(vec![0.0; n])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Field(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, t: f64) -> Field {
        Field(self.0.iter().map(|v| t * v).collect())
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Deref for Field {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// A coefficient sampled at the quadrature points of one domain. Sampled
/// values are guaranteed nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient {
    domain: Domain,
    values: Vec<f64>,
}

impl Coefficient {
    /// Samples `expr` (in `x`, `y`) at every quadrature point of `domain`.
    /// `condition` names the admissibility condition cited on failure.
    pub fn sample(
        space: &FeSpace,
        expr: &Expr,
        domain: Domain,
        name: &'static str,
        condition: &'static str,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(space.points(domain).len());
        for qp in space.points(domain) {
            let v = expr.eval(qp.x[0], qp.x[1], 0.0).map_err(|source| Error::Evaluation {
                what: name,
                x: qp.x[0],
                y: qp.x[1],
                u: 0.0,
                source,
            })?;
            if v < 0.0 {
                return Err(Error::Validation {
                    condition,
                    message: format!(
                        "{name} must be nonnegative, but {name}({:.6}, {:.6}) = {v}",
                        qp.x[0], qp.x[1]
                    ),
                });
            }
            values.push(v);
        }
        Ok(Coefficient { domain, values })
    }

    pub fn constant(space: &FeSpace, domain: Domain, value: f64) -> Self {
        assert!(value >= 0.0, "coefficients are nonnegative");
        Coefficient {
            domain,
            values: vec![value; space.points(domain).len()],
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, &v| m.max(v))
    }
}

/// User-facing definition of a problem: exponents plus expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub p: f64,
    pub q: f64,
    pub c1: Expr,
    pub c2: Expr,
    pub m: Expr,
    pub rho: Expr,
    pub f: Expr,
    pub g: Expr,
    pub primitive_f: Option<Expr>,
    pub primitive_g: Option<Expr>,
    pub s1: Option<f64>,
    pub s2: Option<f64>,
}

impl ProblemSpec {
    /// Unit coefficients, interior weight `m = 1`, no boundary weight, no
    /// reactions.
    pub fn new(p: f64, q: f64) -> Self {
        ProblemSpec {
            p,
            q,
            c1: Expr::constant(1.0),
            c2: Expr::constant(1.0),
            m: Expr::constant(1.0),
            rho: Expr::constant(0.0),
            f: Expr::constant(0.0),
            g: Expr::constant(0.0),
            primitive_f: Some(Expr::constant(0.0)),
            primitive_g: Some(Expr::constant(0.0)),
            s1: None,
            s2: None,
        }
    }

    pub fn r(&self) -> f64 {
        self.p.max(self.q)
    }

    pub fn c1(mut self, src: &str) -> Result<Self> {
        self.c1 = Expr::parse(src)?;
        Ok(self)
    }

    pub fn c2(mut self, src: &str) -> Result<Self> {
        self.c2 = Expr::parse(src)?;
        Ok(self)
    }

    pub fn weights(mut self, m: &str, rho: &str) -> Result<Self> {
        self.m = Expr::parse(m)?;
        self.rho = Expr::parse(rho)?;
        Ok(self)
    }

    /// Sets the interior reaction `f` and, optionally, its primitive `F`.
    pub fn interior_reaction(mut self, f: &str, primitive: Option<&str>) -> Result<Self> {
        self.f = Expr::parse(f)?;
        self.primitive_f = primitive.map(Expr::parse).transpose()?;
        Ok(self)
    }

    /// Sets the boundary reaction `g` and, optionally, its primitive `G`.
    pub fn boundary_reaction(mut self, g: &str, primitive: Option<&str>) -> Result<Self> {
        self.g = Expr::parse(g)?;
        self.primitive_g = primitive.map(Expr::parse).transpose()?;
        Ok(self)
    }

    pub fn growth(mut self, s1: f64, s2: f64) -> Self {
        self.s1 = Some(s1);
        self.s2 = Some(s2);
        self
    }
}

/// A problem sampled on a finite-element space.
#[derive(Debug, Clone)]
pub struct Problem {
    space: Arc<FeSpace>,
    spec: ProblemSpec,
    pub(crate) c1: Coefficient,
    pub(crate) c2: Coefficient,
    pub(crate) m: Coefficient,
    pub(crate) rho: Coefficient,
}

impl Problem {
    /// Samples and validates the spec: nonnegative coefficients, positive
    /// integrals of `c1`, `c2` and of the weights, `p != q`, and the declared
    /// growth exponents.
    pub fn new(spec: ProblemSpec, space: Arc<FeSpace>) -> Result<Self> {
        let problem = Self::assemble(spec, space)?;
        problem.validate()?;
        Ok(problem)
    }

    /// Samples the coefficients (rejecting negative values) without the
    /// integral and exponent checks of [`Problem::new`].
    pub fn assemble(spec: ProblemSpec, space: Arc<FeSpace>) -> Result<Self> {
        if !(spec.p > 1.0 && spec.q > 1.0 && spec.p.is_finite() && spec.q.is_finite()) {
            return Err(Error::Validation {
                condition: "exponents",
                message: format!("p and q must be finite and > 1 (got p = {}, q = {})", spec.p, spec.q),
            });
        }
        let c1 = Coefficient::sample(&space, &spec.c1, Domain::Interior, "c1", "(C1)")?;
        let c2 = Coefficient::sample(&space, &spec.c2, Domain::Interior, "c2", "(C1)")?;
        let m = Coefficient::sample(&space, &spec.m, Domain::Interior, "m", "(C2)")?;
        let rho = Coefficient::sample(&space, &spec.rho, Domain::Boundary, "rho", "(C2)")?;
        Ok(Problem {
            space,
            spec,
            c1,
            c2,
            m,
            rho,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let spec = &self.spec;
        if spec.p == spec.q {
            return Err(Error::Validation {
                condition: "p != q",
                message: format!("the exponents must differ (p = q = {})", spec.p),
            });
        }
        let space = &self.space;
        let (i1, i2) = (space.integral(&self.c1), space.integral(&self.c2));
        if i1 <= 0.0 || i2 <= 0.0 {
            return Err(Error::Validation {
                condition: "(C1)",
                message: format!("∫_Ω c1 > 0 and ∫_Ω c2 > 0 are required (got {i1:e} and {i2:e})"),
            });
        }
        let total = space.integral(&self.m) + space.integral(&self.rho);
        if total <= 0.0 {
            return Err(Error::Validation {
                condition: "(C2)",
                message: format!("∫_Ω m + ∫_∂Ω rho > 0 is required (got {total:e})"),
            });
        }
        let (interior_limit, boundary_limit) = self.critical_exponents();
        if let Some(s1) = spec.s1 {
            if !(s1 >= 0.0 && s1 < interior_limit - 1.0) {
                return Err(Error::Validation {
                    condition: "(C4)",
                    message: format!("declared s1 = {s1} must satisfy 0 <= s1 < r* - 1 = {}", interior_limit - 1.0),
                });
            }
        }
        if let Some(s2) = spec.s2 {
            if !(s2 >= 0.0 && s2 < boundary_limit - 1.0) {
                return Err(Error::Validation {
                    condition: "(C5)",
                    message: format!("declared s2 = {s2} must satisfy 0 <= s2 < r_* - 1 = {}", boundary_limit - 1.0),
                });
            }
        }
        Ok(())
    }

    /// Critical Sobolev and trace exponents `(r*, r_*)` for `r = max(p, q)`.
    pub fn critical_exponents(&self) -> (f64, f64) {
        let r = self.spec.r();
        let n = self.space.mesh().dimension() as f64;
        if r < n {
            (r * n / (n - r), r * (n - 1.0) / (n - r))
        } else {
            (f64::INFINITY, f64::INFINITY)
        }
    }

    /// Same problem with the weights `(m, rho)` replaced by constants.
    pub fn with_constant_weights(&self, m: f64, rho: f64) -> Self {
        let mut spec = self.spec.clone();
        spec.m = Expr::constant(m);
        spec.rho = Expr::constant(rho);
        Problem {
            space: self.space.clone(),
            spec,
            c1: self.c1.clone(),
            c2: self.c2.clone(),
            m: Coefficient::constant(&self.space, Domain::Interior, m),
            rho: Coefficient::constant(&self.space, Domain::Boundary, rho),
        }
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn space(&self) -> &FeSpace {
        &self.space
    }

    pub fn shared_space(&self) -> Arc<FeSpace> {
        self.space.clone()
    }

    pub fn p(&self) -> f64 {
        self.spec.p
    }

    pub fn q(&self) -> f64 {
        self.spec.q
    }

    pub fn node_count(&self) -> usize {
        self.space.node_count()
    }

    pub fn coefficient(&self, which: CoefficientName) -> &Coefficient {
        match which {
            CoefficientName::C1 => &self.c1,
            CoefficientName::C2 => &self.c2,
            CoefficientName::M => &self.m,
            CoefficientName::Rho => &self.rho,
        }
    }

    /// `‖u‖_{c1,p}^p = ∫|∇u|^p + ∫ c1 |u|^p`.
    pub fn norm_p(&self, u: &[f64]) -> f64 {
        let p = self.spec.p;
        self.space.grad_seminorm(u, p) + self.space.weighted_power_mass(u, &self.c1, p)
    }

    /// `‖u‖_{c2,q}^q = ∫|∇u|^q + ∫ c2 |u|^q`.
    pub fn norm_q(&self, u: &[f64]) -> f64 {
        let q = self.spec.q;
        self.space.grad_seminorm(u, q) + self.space.weighted_power_mass(u, &self.c2, q)
    }

    /// `K_q(u) = ∫_Ω m |u|^q + ∫_∂Ω rho |u|^q`.
    pub fn k_q(&self, u: &[f64]) -> f64 {
        let q = self.spec.q;
        self.space.weighted_power_mass(u, &self.m, q) + self.space.weighted_power_mass(u, &self.rho, q)
    }

    /// `S_θ(u) = ∫_Ω m |u|^{θ-2} u + ∫_∂Ω rho |u|^{θ-2} u`.
    pub fn signed_moment(&self, u: &[f64], theta: f64) -> f64 {
        self.space.weighted_signed_mass(u, &self.m, theta) + self.space.weighted_signed_mass(u, &self.rho, theta)
    }

    /// `∫_Ω m |u|^{θ-1} + ∫_∂Ω rho |u|^{θ-1}`: the natural scale of `S_θ(u)`.
    pub fn moment_scale(&self, u: &[f64], theta: f64) -> f64 {
        self.space.weighted_power_mass(u, &self.m, theta - 1.0)
            + self.space.weighted_power_mass(u, &self.rho, theta - 1.0)
    }

    /// Component `i` is `∫ m |u|^{q-2} u φ_i + ∫_∂ rho |u|^{q-2} u φ_i`, the
    /// gradient of `K_q / q`.
    pub fn weight_load(&self, u: &[f64]) -> Vec<f64> {
        let q = self.spec.q;
        let mut out = vec![0.0; u.len()];
        self.space.add_weighted_load(u, &self.m, q, 1.0, &mut out);
        self.space.add_weighted_load(u, &self.rho, q, 1.0, &mut out);
        out
    }

    /// Gradient of `S_θ`.
    pub fn moment_gradient(&self, u: &[f64], theta: f64) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.space.add_weighted_derivative_load(u, &self.m, theta, 1.0, &mut out);
        self.space.add_weighted_derivative_load(u, &self.rho, theta, 1.0, &mut out);
        out
    }

    /// Component `i` is `∫ m φ_i + ∫_∂ rho φ_i`.
    pub fn weight_integrals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count()];
        self.space.add_coefficient_load(&self.m, 1.0, &mut out);
        self.space.add_coefficient_load(&self.rho, 1.0, &mut out);
        out
    }

    /// Component `i` is `B(u, φ_i)`.
    pub fn operator_residual(&self, u: &[f64]) -> Vec<f64> {
        let (p, q) = (self.spec.p, self.spec.q);
        let mut out = vec![0.0; u.len()];
        self.space.add_gradient_load(u, p, 1.0, &mut out);
        self.space.add_gradient_load(u, q, 1.0, &mut out);
        self.space.add_weighted_load(u, &self.c1, p, 1.0, &mut out);
        self.space.add_weighted_load(u, &self.c2, q, 1.0, &mut out);
        out
    }

    /// Gradient of `‖u‖_{c2,q}^q / q`.
    pub fn norm_q_gradient(&self, u: &[f64]) -> Vec<f64> {
        let q = self.spec.q;
        let mut out = vec![0.0; u.len()];
        self.space.add_gradient_load(u, q, 1.0, &mut out);
        self.space.add_weighted_load(u, &self.c2, q, 1.0, &mut out);
        out
    }

    /// Gradient of `‖u‖_{c1,p}^p / p`.
    pub fn norm_p_gradient(&self, u: &[f64]) -> Vec<f64> {
        let p = self.spec.p;
        let mut out = vec![0.0; u.len()];
        self.space.add_gradient_load(u, p, 1.0, &mut out);
        self.space.add_weighted_load(u, &self.c1, p, 1.0, &mut out);
        out
    }

    /// Component `i` is `∫_Ω f(x,u) φ_i` or `∫_∂Ω g(x,u) φ_i`.
    pub fn reaction_load(&self, u: &[f64], which: Reaction) -> Result<Vec<f64>> {
        let (expr, domain, name) = match which {
            Reaction::F => (&self.spec.f, Domain::Interior, "f"),
            Reaction::G => (&self.spec.g, Domain::Boundary, "g"),
        };
        let mut out = vec![0.0; u.len()];
        for qp in self.space.points(domain) {
            let uv = qp.interpolate(u);
            let v = expr.eval(qp.x[0], qp.x[1], uv).map_err(|source| Error::Evaluation {
                what: name,
                x: qp.x[0],
                y: qp.x[1],
                u: uv,
                source,
            })?;
            for k in 0..qp.count {
                out[qp.nodes[k]] += qp.weight * v * qp.basis[k];
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientName {
    C1,
    C2,
    M,
    Rho,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reaction {
    F,
    G,
}
