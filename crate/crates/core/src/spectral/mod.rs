//! Fourier-space solvers on the periodic cell.
//!
//! Fields are nodal samples; derivatives act as exact multipliers on the
//! discrete Fourier coefficients. At the Nyquist frequency of an even axis the
//! sign of the wave vector is ambiguous, and multipliers are averaged over both
//! choices.

mod fft;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{GridError, Mask, MatrixField, PeriodicGrid, ScalarField};
use crate::linalg::{min_eigenvalue, sym_eigenvalues};
pub use crate::tensor::IsoTensor4;
use crate::tensor::Tensor4;
use fft::{alias_average, mode, NdFft};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("volume fraction {0} leaves nothing to solve")]
    DegenerateVolume(f64),
    #[error("acoustic tensor is singular for direction {0:?}")]
    SingularAcousticTensor(Vec<f64>),
    #[error("tensor fails L k·k k = κ k: residual {residual:e} for direction {direction:?}")]
    KappaMismatch { residual: f64, direction: Vec<f64> },
    #[error("κ R I is not in 𝒬: trace {trace}, min eigenvalue {min_eig:e}, asymmetry {asymmetry:e}")]
    MembershipViolation { trace: f64, min_eig: f64, asymmetry: f64 },
    #[error("expected {expected}x{expected} data, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Indicator of a region on the nodal grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicFunction {
    grid: PeriodicGrid,
    mask: Mask,
    theta: f64,
}

impl CharacteristicFunction {
    pub fn new(grid: &PeriodicGrid, mask: Mask) -> Result<Self, SpectralError> {
        if !mask.matches(grid) {
            return Err(GridError::GridMismatch.into());
        }
        let theta = mask.fraction();
        Ok(Self { grid: grid.clone(), mask, theta })
    }

    pub fn from_fn(grid: &PeriodicGrid, inside: impl Fn(&DVector<f64>) -> bool) -> Result<Self, SpectralError> {
        let values = (0..grid.len()).map(|i| inside(&grid.point(i))).collect();
        Self::new(grid, Mask::new(grid, values)?)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    fn check(&self) -> Result<(), SpectralError> {
        if self.theta <= 0.0 || self.theta >= 1.0 {
            Err(SpectralError::DegenerateVolume(self.theta))
        } else {
            Ok(())
        }
    }

    fn coefficients(&self, fft: &NdFft) -> Vec<Complex64> {
        let v: Vec<f64> = self.mask.values().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        fft.forward_real(&v)
    }
}

/// Gradient `∇v` of the homogeneous Eshelby solution for source `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub field: MatrixField,
    pub p: DMatrix<f64>,
}

impl GradientField {
    pub fn grid(&self) -> &PeriodicGrid {
        self.field.grid()
    }

    pub fn mean(&self) -> DMatrix<f64> {
        let n = self.grid().dim();
        let mut acc = DMatrix::zeros(n, n);
        for i in 0..self.grid().len() {
            acc += self.field.get(i);
        }
        acc / self.grid().len() as f64
    }

    /// Average of `∇v` over the nodes of `mask`.
    pub fn mean_over(&self, mask: &Mask) -> DMatrix<f64> {
        let n = self.grid().dim();
        let mut acc = DMatrix::zeros(n, n);
        let mut count = 0usize;
        for i in 0..self.grid().len() {
            if mask.get(i) {
                acc += self.field.get(i);
                count += 1;
            }
        }
        acc / count.max(1) as f64
    }

    /// Cell average of `∇v · L ∇v`.
    pub fn energy(&self, l: &Tensor4) -> f64 {
        let total: f64 = (0..self.grid().len())
            .into_par_iter()
            .map(|i| {
                let g = self.field.get(i);
                l.form(&g, &g)
            })
            .sum();
        total / self.grid().len() as f64
    }
}

/// Mean-zero periodic `u` with `Δu = θ − χ`, and its spectral Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    pub u: ScalarField,
    pub hessian: MatrixField,
}

fn synthesize_matrix(
    grid: &PeriodicGrid,
    fft: &NdFft,
    coeffs: &[Complex64],
    multipliers: &[Vec<f64>],
) -> Result<MatrixField, SpectralError> {
    let n = grid.dim();
    let total = grid.len();
    let mut values = vec![0.0; total * n * n];
    for e in 0..n * n {
        let spec: Vec<Complex64> = coeffs.iter().zip(multipliers).map(|(c, m)| c * m[e]).collect();
        let real = fft.inverse_real(spec);
        for (i, v) in real.into_iter().enumerate() {
            values[i * n * n + e] = v;
        }
    }
    Ok(MatrixField::new(grid.clone(), values)?)
}

pub fn solve_poisson(chi: &CharacteristicFunction) -> Result<PoissonSolution, SpectralError> {
    chi.check()?;
    let grid = chi.grid();
    let n = grid.dim();
    let fft = NdFft::new(grid.shape());
    let c = chi.coefficients(&fft);
    let recip = grid.lattice().reciprocal_basis();
    let per_mode: Vec<(f64, Vec<f64>)> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            if idx == 0 {
                return (0.0, vec![0.0; n * n]);
            }
            let md = mode(grid, idx);
            let inv = alias_average(&recip, &md, 0.0, |k| 1.0 / k.norm_squared());
            let hess = alias_average(&recip, &md, DMatrix::zeros(n, n), |k| -(k * k.transpose()) / k.norm_squared());
            (inv, hess.as_slice().to_vec())
        })
        .collect();
    let u_coeffs: Vec<Complex64> = c.iter().zip(&per_mode).map(|(c, (m, _))| c * m).collect();
    let u = ScalarField::new(grid.clone(), fft.inverse_real(u_coeffs))?;
    // Hessian multipliers are symmetric, so column-major storage is row-major too.
    let mults: Vec<Vec<f64>> = per_mode.into_iter().map(|(_, h)| h).collect();
    let hessian = synthesize_matrix(grid, &fft, &c, &mults)?;
    Ok(PoissonSolution { u, hessian })
}

/// `N(k̂) = (L_{piqj} k̂_i k̂_j)⁻¹`.
fn acoustic_inverse(l: &Tensor4, khat: &DVector<f64>) -> Result<DMatrix<f64>, SpectralError> {
    let n = l.dim();
    let a = DMatrix::from_fn(n, n, |p, q| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += l.get(p, i, q, j) * khat[i] * khat[j];
            }
        }
        s
    });
    a.try_inverse().ok_or_else(|| SpectralError::SingularAcousticTensor(khat.iter().copied().collect()))
}

/// Per-mode tensor `T_{(q,j),(p,i)} = N_{qp}(k̂) k̂_i k̂_j`, alias-averaged.
fn mode_tensors(grid: &PeriodicGrid, l: &Tensor4) -> Result<Vec<DMatrix<f64>>, SpectralError> {
    let n = grid.dim();
    let recip = grid.lattice().reciprocal_basis();
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            if idx == 0 {
                return Ok(DMatrix::zeros(n * n, n * n));
            }
            let md = mode(grid, idx);
            let mut err = None;
            let t = alias_average(&recip, &md, DMatrix::zeros(n * n, n * n), |k| {
                let khat = k / k.norm();
                match acoustic_inverse(l, &khat) {
                    Ok(nm) => DMatrix::from_fn(n * n, n * n, |r, c| nm[(r / n, c / n)] * khat[c % n] * khat[r % n]),
                    Err(e) => {
                        err = Some(e);
                        DMatrix::zeros(n * n, n * n)
                    }
                }
            });
            match err {
                Some(e) => Err(e),
                None => Ok(t),
            }
        })
        .collect()
}

fn check_matrix(p: &DMatrix<f64>, n: usize) -> Result<(), SpectralError> {
    if p.nrows() != n || p.ncols() != n {
        return Err(SpectralError::Dimension { expected: n, got: p.nrows().max(p.ncols()) });
    }
    Ok(())
}

/// Gradient of the periodic solution of `div(L₀∇v + Pχ) = 0`.
pub fn solve_eshelby(
    chi: &CharacteristicFunction,
    l0: &IsoTensor4,
    p: &DMatrix<f64>,
) -> Result<GradientField, SpectralError> {
    solve_eshelby_general(chi, &l0.tensor(), p)
}

/// As [`solve_eshelby`] for any tensor with invertible acoustic tensors.
pub fn solve_eshelby_general(
    chi: &CharacteristicFunction,
    l0: &Tensor4,
    p: &DMatrix<f64>,
) -> Result<GradientField, SpectralError> {
    chi.check()?;
    let grid = chi.grid();
    let n = grid.dim();
    check_matrix(p, n)?;
    let fft = NdFft::new(grid.shape());
    let c = chi.coefficients(&fft);
    let pvec = DVector::from_iterator(n * n, (0..n * n).map(|r| p[(r / n, r % n)]));
    // ∇v̂_{qj} = −N_{qp} P_{pi} k̂_i k̂_j χ̂
    let mults: Vec<Vec<f64>> = mode_tensors(grid, l0)?.into_iter().map(|t| (-(t * &pvec)).as_slice().to_vec()).collect();
    let field = synthesize_matrix(grid, &fft, &c, &mults)?;
    Ok(GradientField { field, p: p.clone() })
}

/// The map `P ↦ −(1/(1−θ)) ⨍_Ω ∇v(P)` as a fourth-order tensor.
///
/// Each unit probe `E_{pi}` is averaged over `Ω` through Parseval's identity,
/// `⨍ χ ∇v = Σ_k |χ̂(k)|² (multiplier at k)`, which equals the nodal average
/// of [`solve_eshelby`] exactly.
pub fn compute_r(chi: &CharacteristicFunction, l0: &IsoTensor4) -> Result<Tensor4, SpectralError> {
    compute_r_general(chi, &l0.tensor())
}

pub fn compute_r_general(chi: &CharacteristicFunction, l0: &Tensor4) -> Result<Tensor4, SpectralError> {
    chi.check()?;
    let grid = chi.grid();
    let n = grid.dim();
    let fft = NdFft::new(grid.shape());
    let c = chi.coefficients(&fft);
    let tensors = mode_tensors(grid, l0)?;
    let sum = tensors
        .into_par_iter()
        .zip(c.par_iter())
        .map(|(t, ck)| t * ck.norm_sqr())
        .reduce(|| DMatrix::zeros(n * n, n * n), |a, b| a + b);
    let theta = chi.theta();
    let rep = sum / (theta * (1.0 - theta));
    Tensor4::from_matrix(n, rep).map_err(|_| SpectralError::Dimension { expected: n, got: 0 })
}

/// Computed and predicted Bitter-Crum energies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitterCrum {
    pub energy: f64,
    pub predicted: f64,
}

impl BitterCrum {
    pub fn relative_error(&self) -> f64 {
        (self.energy - self.predicted).abs() / self.predicted
    }
}

fn sample_directions(n: usize) -> Vec<DVector<f64>> {
    let mut dirs = Vec::new();
    for a in 0..n {
        let mut e = DVector::zeros(n);
        e[a] = 1.0;
        dirs.push(e);
    }
    // Deterministic quasi-random directions.
    let golden = 0.618_033_988_749_895;
    for s in 1..=32 {
        let v = DVector::from_fn(n, |i, _| ((s as f64 * golden * (i as f64 + 1.0) * 1.7).fract() - 0.5) * 2.0);
        if v.norm() > 1e-3 {
            dirs.push(&v / v.norm());
        }
    }
    dirs
}

/// Checks `L_{piqj} k̂_i k̂_j k̂_q = κ k̂_p` on sampled directions.
pub fn check_kappa(l0: &Tensor4, kappa: f64) -> Result<(), SpectralError> {
    let n = l0.dim();
    let scale = l0.max_abs().max(kappa.abs()).max(1e-300);
    for d in sample_directions(n) {
        let mut out = DVector::zeros(n);
        for p in 0..n {
            for i in 0..n {
                for q in 0..n {
                    for j in 0..n {
                        out[p] += l0.get(p, i, q, j) * d[i] * d[j] * d[q];
                    }
                }
            }
        }
        let residual = (out - &d * kappa).amax();
        if residual > 1e-10 * scale {
            return Err(SpectralError::KappaMismatch { residual, direction: d.iter().copied().collect() });
        }
    }
    Ok(())
}

/// Energy `⨍ ∇v·L₀∇v` of the solution for `P = I`, against `θ(1−θ)/κ`.
pub fn bitter_crum(chi: &CharacteristicFunction, kappa: f64, l0: &Tensor4) -> Result<BitterCrum, SpectralError> {
    check_kappa(l0, kappa)?;
    let n = chi.grid().dim();
    let grad = solve_eshelby_general(chi, l0, &DMatrix::identity(n, n))?;
    let theta = chi.theta();
    Ok(BitterCrum { energy: grad.energy(l0), predicted: theta * (1.0 - theta) / kappa })
}

/// `Q = κ R I` for `L₀ = κ Id`, checked to be symmetric, PSD and of unit trace.
pub fn r_matrix_q(chi: &CharacteristicFunction, kappa: f64) -> Result<DMatrix<f64>, SpectralError> {
    let n = chi.grid().dim();
    let l0 = IsoTensor4::scalar(n, kappa).map_err(|_| SpectralError::KappaMismatch {
        residual: f64::NAN,
        direction: Vec::new(),
    })?;
    let r = compute_r(chi, &l0)?;
    let q = r.apply(&DMatrix::identity(n, n)) * kappa;
    let asymmetry = (&q - q.transpose()).amax();
    let sym = (&q + q.transpose()) * 0.5;
    let min_eig = min_eigenvalue(&sym);
    let trace = q.trace();
    if asymmetry > 1e-6 || min_eig < -1e-6 || (trace - 1.0).abs() > 1e-6 {
        return Err(SpectralError::MembershipViolation { trace, min_eig, asymmetry });
    }
    Ok(sym)
}

/// Spread of the eigenvalues of `Q` relative to the isotropic `I/n`.
pub fn anisotropy(q: &DMatrix<f64>) -> f64 {
    let n = q.nrows() as f64;
    let eig = sym_eigenvalues(q);
    eig.iter().map(|e| (e - 1.0 / n).abs()).fold(0.0, f64::max) * n
}
