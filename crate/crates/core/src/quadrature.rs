//! Quadrature rules on reference simplices.
//!
//! Points are stored in barycentric coordinates, so for P1 fields the
//! coordinates double as the nodal basis values at the point. Reference
//! measures: 1 for the point and the unit interval, 1/2 for the unit
//! triangle.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureRule {
    pub order: usize,
    /// Barycentric coordinates, one entry per simplex vertex.
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Rule on the 0-simplex (a boundary point in 1D).
    pub fn point() -> Self {
        QuadratureRule {
            order: usize::MAX,
            points: vec![vec![1.0]],
            weights: vec![1.0],
        }
    }

    /// Gauss-Legendre rule on [0, 1] exact for polynomials of degree `order`.
    pub fn interval(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("mesh", "quadrature order must be >= 1"));
        }
        let n = order / 2 + 1;
        let (xs, ws) = gauss_legendre(n);
        let points = xs
            .iter()
            .map(|&x| {
                let t = 0.5 * (x + 1.0);
                vec![1.0 - t, t]
            })
            .collect();
        let weights = ws.iter().map(|w| 0.5 * w).collect();
        Ok(QuadratureRule {
            order,
            points,
            weights,
        })
    }

    /// Rule on the reference triangle exact for total degree `order`.
    ///
    /// Order 5 uses the classical 7-point symmetric rule; other orders use a
    /// collapsed (Duffy) tensor product of Gauss-Legendre rules, which keeps
    /// all weights positive.
    pub fn triangle(order: usize) -> Result<Self> {
        match order {
            0 => Err(Error::invalid("mesh", "quadrature order must be >= 1")),
            1 => Ok(QuadratureRule {
                order,
                points: vec![vec![1.0 / 3.0; 3]],
                weights: vec![0.5],
            }),
            5 => Ok(triangle_seven_point()),
            _ => Ok(triangle_collapsed(order)),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn triangle_seven_point() -> QuadratureRule {
    let s15 = 15f64.sqrt();
    let a1 = (9.0 - 2.0 * s15) / 21.0;
    let b1 = (6.0 + s15) / 21.0;
    let w1 = (155.0 + s15) / 2400.0;
    let a2 = (9.0 + 2.0 * s15) / 21.0;
    let b2 = (6.0 - s15) / 21.0;
    let w2 = (155.0 - s15) / 2400.0;
    let mut points = vec![vec![1.0 / 3.0; 3]];
    let mut weights = vec![9.0 / 80.0];
    for (a, b, w) in [(a1, b1, w1), (a2, b2, w2)] {
        points.push(vec![a, b, b]);
        points.push(vec![b, a, b]);
        points.push(vec![b, b, a]);
        weights.extend([w, w, w]);
    }
    QuadratureRule {
        order: 5,
        points,
        weights,
    }
}

fn triangle_collapsed(order: usize) -> QuadratureRule {
    let n = (order + 2).div_ceil(2);
    let (xs, ws) = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (xa, wa) in xs.iter().zip(&ws) {
        let a = 0.5 * (xa + 1.0);
        for (xb, wb) in xs.iter().zip(&ws) {
            let b = 0.5 * (xb + 1.0);
            let xi = a;
            let eta = b * (1.0 - a);
            points.push(vec![1.0 - xi - eta, xi, eta]);
            weights.push(0.25 * wa * wb * (1.0 - a));
        }
    }
    QuadratureRule {
        order,
        points,
        weights,
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        xs[n - 1 - i] = x;
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    (xs, ws)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
