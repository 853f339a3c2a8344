//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use pqvar::forms::{FeSpace, Problem, ProblemSpec};
use pqvar::mesh::Mesh;

pub fn interval_space(n: usize) -> Arc<FeSpace> {
    Arc::new(FeSpace::new(Mesh::interval(n).unwrap()).unwrap())
}

pub fn square_space(n: usize) -> Arc<FeSpace> {
    Arc::new(FeSpace::new(Mesh::unit_square(n).unwrap()).unwrap())
}

/// q = 2 problem on (0,1) with c₂ ≡ 1 and constant weights.
pub fn quadratic_problem(n: usize, p: f64, m: f64, rho: f64) -> Problem {
    let spec = ProblemSpec::new(p, 2.0)
        .weights(&m.to_string(), &rho.to_string())
        .unwrap();
    Problem::new(spec, interval_space(n)).unwrap()
}

/// Dense P1 matrices on the uniform partition of (0,1) with `n` elements:
/// `A = stiffness + mass`, `M = m·mass + rho·(boundary point masses)`.
pub fn interval_matrices(n: usize, m: f64, rho: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let h = 1.0 / n as f64;
    let size = n + 1;
    let mut a = DMatrix::zeros(size, size);
    let mut b = DMatrix::zeros(size, size);
    for e in 0..n {
        let idx = [e, e + 1];
        for (i, &gi) in idx.iter().enumerate() {
            for (j, &gj) in idx.iter().enumerate() {
                let stiff = if i == j { 1.0 / h } else { -1.0 / h };
                let mass = if i == j { h / 3.0 } else { h / 6.0 };
                a[(gi, gj)] += stiff + mass;
                b[(gi, gj)] += m * mass;
            }
        }
    }
    b[(0, 0)] += rho;
    b[(n, n)] += rho;
    (a, b)
}

/// Smallest generalized Rayleigh quotient `uᵀAu / uᵀMu`, optionally over the
/// subspace `(M·1)ᵀu = 0`. `A` must be positive definite.
pub fn dense_min_quotient(a: &DMatrix<f64>, b: &DMatrix<f64>, constrained: bool) -> f64 {
    let size = a.nrows();
    let z = if constrained {
        let c: DVector<f64> = b * DVector::from_element(size, 1.0);
        let k = c.iamax();
        let mut z = DMatrix::zeros(size, size - 1);
        let mut col = 0;
        for j in 0..size {
            if j == k {
                continue;
            }
            z[(j, col)] = 1.0;
            z[(k, col)] = -c[j] / c[k];
            col += 1;
        }
        z
    } else {
        DMatrix::identity(size, size)
    };
    let az = z.transpose() * a * &z;
    let bz = z.transpose() * b * &z;
    let chol = az.cholesky().expect("A restricted to the subspace is positive definite");
    let l = chol.l();
    let linv = l.clone().try_inverse().expect("Cholesky factor is invertible");
    let c = &linv * bz * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mu_max = SymmetricEigen::new(c).eigenvalues.max();
    1.0 / mu_max
}

pub fn dense_threshold(n: usize, m: f64, rho: f64, constrained: bool) -> f64 {
    let (a, b) = interval_matrices(n, m, rho);
    dense_min_quotient(&a, &b, constrained)
}

pub fn neumann_exact() -> f64 {
    1.0 + std::f64::consts::PI.powi(2)
}

pub fn steklov_exact() -> f64 {
    1.0 / 0.5f64.tanh()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
