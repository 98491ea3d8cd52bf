//! Fourth-order tensors acting on `n × n` matrices.
//!
//! Component `T_{piqj}` maps `F` to `(T F)_{pi} = T_{piqj} F_{qj}`. The matrix
//! representation is `n² × n²` with row `p n + i` and column `q n + j`, so
//! tensor composition and inversion are ordinary matrix operations.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor is singular on the space of {0} matrices")]
    Singular(&'static str),
    #[error("moduli violate μ₁ ≥ μ₂, μ₁ + μ₂ > 0, λ > −(μ₁ + μ₂)/n: {0}")]
    InvalidModuli(String),
    #[error("dimension mismatch ({0} vs {1})")]
    Dimension(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    rep: DMatrix<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize) -> Self {
        Self { n, rep: DMatrix::zeros(n * n, n * n) }
    }

    /// The identity map `F ↦ F`.
    pub fn identity(n: usize) -> Self {
        Self { n, rep: DMatrix::identity(n * n, n * n) }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let rep = DMatrix::from_fn(n * n, n * n, |r, c| f(r / n, r % n, c / n, c % n));
        Self { n, rep }
    }

    pub fn from_matrix(n: usize, rep: DMatrix<f64>) -> Result<Self, TensorError> {
        if rep.nrows() != n * n || rep.ncols() != n * n {
            return Err(TensorError::Dimension(rep.nrows(), n * n));
        }
        Ok(Self { n, rep })
    }

    /// `μ₁ δ_ij δ_pq + μ₂ δ_pj δ_iq + λ δ_ip δ_jq`.
    pub fn isotropic(n: usize, mu1: f64, mu2: f64, lambda: f64) -> Self {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        Self::from_fn(n, |p, i, q, j| mu1 * d(i, j) * d(p, q) + mu2 * d(p, j) * d(i, q) + lambda * d(i, p) * d(j, q))
    }

    /// `δ_pq A_ij`: a conductivity `A` acting row by row.
    pub fn conductivity(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self::from_fn(n, |p, i, q, j| if p == q { a[(i, j)] } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, p: usize, i: usize, q: usize, j: usize) -> f64 {
        self.rep[(p * self.n + i, q * self.n + j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rep
    }

    pub fn apply(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let v = DMatrix::from_fn(n * n, 1, |r, _| f[(r / n, r % n)]);
        let out = &self.rep * v;
        DMatrix::from_fn(n, n, |p, i| out[(p * n + i, 0)])
    }

    /// `F · T G`.
    pub fn form(&self, f: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
        f.dot(&self.apply(g))
    }

    pub fn compose(&self, other: &Tensor4) -> Tensor4 {
        Tensor4 { n: self.n, rep: &self.rep * &other.rep }
    }

    pub fn transpose(&self) -> Tensor4 {
        Tensor4 { n: self.n, rep: self.rep.transpose() }
    }

    pub fn inverse(&self) -> Result<Tensor4, TensorError> {
        self.rep
            .clone()
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .map(|rep| Tensor4 { n: self.n, rep })
            .ok_or(TensorError::Singular("all"))
    }

    /// Moore-Penrose inverse on the full matrix space.
    pub fn pseudo_inverse(&self) -> Tensor4 {
        Tensor4 { n: self.n, rep: crate::linalg::pseudo_inverse(&self.rep, 1e-12) }
    }

    pub fn has_major_symmetry(&self, tol: f64) -> bool {
        (&self.rep - self.rep.transpose()).amax() <= tol
    }

    /// `T_{piqj} = T_{ipqj} = T_{piqj}` with the second pair swapped as well.
    pub fn has_minor_symmetry(&self, tol: f64) -> bool {
        let n = self.n;
        for p in 0..n {
            for i in 0..n {
                for q in 0..n {
                    for j in 0..n {
                        let v = self.get(p, i, q, j);
                        if (v - self.get(i, p, q, j)).abs() > tol || (v - self.get(p, i, j, q)).abs() > tol {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// Smallest value of `F·TF/|F|²` over symmetric `F`.
    pub fn min_eig_on_symmetric(&self) -> f64 {
        let basis = symmetric_basis(self.n);
        let m = basis.len();
        let g = DMatrix::from_fn(m, m, |a, b| 0.5 * (self.form(&basis[a], &basis[b]) + self.form(&basis[b], &basis[a])));
        crate::linalg::min_eigenvalue(&g)
    }

    /// Inverse restricted to symmetric matrices: `T⁻¹ S` for symmetric `S`,
    /// with the symmetric part of `T` taken as the operator there.
    pub fn solve_symmetric(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>, TensorError> {
        let basis = symmetric_basis(self.n);
        let m = basis.len();
        let g = DMatrix::from_fn(m, m, |a, b| basis[a].dot(&self.apply(&basis[b])));
        let rhs = nalgebra::DVector::from_fn(m, |a, _| basis[a].dot(s));
        let c = g.lu().solve(&rhs).ok_or(TensorError::Singular("symmetric"))?;
        let mut out = DMatrix::zeros(self.n, self.n);
        for (k, b) in basis.iter().enumerate() {
            out += b * c[k];
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.rep.amax()
    }
}

/// Orthonormal basis of symmetric `n × n` matrices (Frobenius inner product).
pub fn symmetric_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in a..n {
            let mut m = DMatrix::zeros(n, n);
            if a == b {
                m[(a, a)] = 1.0;
            } else {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                m[(a, b)] = s;
                m[(b, a)] = s;
            }
            out.push(m);
        }
    }
    out
}

/// Unit matrices `E_{qj}` in row-major order.
pub fn matrix_basis(n: usize) -> Vec<DMatrix<f64>> {
    (0..n * n)
        .map(|k| {
            let mut m = DMatrix::zeros(n, n);
            m[(k / n, k % n)] = 1.0;
            m
        })
        .collect()
}

impl Add for &Tensor4 {
    type Output = Tensor4;
    fn add(self, rhs: &Tensor4) -> Tensor4 {
        Tensor4 { n: self.n, rep: &self.rep + &rhs.rep }
    }
}

impl Sub for &Tensor4 {
    type Output = Tensor4;
    fn sub(self, rhs: &Tensor4) -> Tensor4 {
        Tensor4 { n: self.n, rep: &self.rep - &rhs.rep }
    }
}

impl Neg for &Tensor4 {
    type Output = Tensor4;
    fn neg(self) -> Tensor4 {
        Tensor4 { n: self.n, rep: -&self.rep }
    }
}

impl Mul<f64> for &Tensor4 {
    type Output = Tensor4;
    fn mul(self, a: f64) -> Tensor4 {
        Tensor4 { n: self.n, rep: &self.rep * a }
    }
}

/// Isotropic tensor `μ₁ δ_ij δ_pq + μ₂ δ_pj δ_iq + λ δ_ip δ_jq`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsoTensor4 {
    pub mu1: f64,
    pub mu2: f64,
    pub lambda: f64,
    pub n: usize,
}

impl IsoTensor4 {
    pub fn new(n: usize, mu1: f64, mu2: f64, lambda: f64) -> Result<Self, TensorError> {
        let ok = mu1 >= mu2 && mu1 + mu2 > 0.0 && lambda > -(mu1 + mu2) / n as f64;
        if !ok || !(mu1.is_finite() && mu2.is_finite() && lambda.is_finite()) {
            return Err(TensorError::InvalidModuli(format!("μ₁={mu1}, μ₂={mu2}, λ={lambda}, n={n}")));
        }
        Ok(Self { mu1, mu2, lambda, n })
    }

    /// `μ₁ Id`, the scalar-conductivity case.
    pub fn scalar(n: usize, mu1: f64) -> Result<Self, TensorError> {
        Self::new(n, mu1, 0.0, 0.0)
    }

    /// `κ = μ₁ + μ₂ + λ`.
    pub fn kappa(&self) -> f64 {
        self.mu1 + self.mu2 + self.lambda
    }

    pub fn tensor(&self) -> Tensor4 {
        Tensor4::isotropic(self.n, self.mu1, self.mu2, self.lambda)
    }
}
