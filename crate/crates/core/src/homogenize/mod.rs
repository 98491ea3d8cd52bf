//! Effective tensors of two-phase composites whose inclusion phase is a
//! periodic E-inclusion, the matching Hashin-Shtrikman bounds, and a numeric
//! cell-problem solver to check them against.
//!
//! Phase 1 (`L₁`) occupies `Ω`, phase 0 (`L₀`) the rest of the cell, and
//! `ΔL = L₀ − L₁`.

mod cell;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::lattice::GridError;
use crate::linalg::{is_symmetric, min_eigenvalue, pseudo_inverse};
use crate::tensor::{symmetric_basis, IsoTensor4, Tensor4, TensorError};

pub use cell::{
    effective_conductivity_numeric, effective_form_numeric, effective_tensor_numeric, CellOptions, CellSolution,
    ProbeBasis,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomogenizeError {
    #[error("θ = {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("Q is not symmetric positive semi-definite with unit trace: {0}")]
    NotInQ(String),
    #[error("closed form needs μ₂ + λ = 0 (got {0})")]
    NotScalarCase(f64),
    #[error("ε-limit did not settle: relative spread {0:e}")]
    LimitDiverged(f64),
    #[error("F violates the compatibility constraint (relative residual {0:e})")]
    ConstraintViolated(f64),
    #[error("required matrix is outside the range of ΔL (residual {0:e})")]
    RangeViolation(f64),
    #[error("tensor ordering fails: {0}")]
    OrderingViolation(String),
    #[error("Tr F must be nonzero")]
    TracelessField,
    #[error("{0} is singular")]
    SingularShift(&'static str),
    #[error("conjugate gradients stopped after {iterations} iterations at relative residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn check_theta(theta: f64) -> Result<(), HomogenizeError> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(HomogenizeError::BadFraction(theta))
    }
}

/// Checks membership in `𝒬` (symmetric, PSD, unit trace) to `tol`.
pub fn check_in_q(q: &DMatrix<f64>, tol: f64) -> Result<(), HomogenizeError> {
    if !q.is_square() {
        return Err(HomogenizeError::NotInQ("not square".into()));
    }
    if !is_symmetric(q, tol) {
        return Err(HomogenizeError::NotInQ("not symmetric".into()));
    }
    let m = min_eigenvalue(q);
    if m < -tol {
        return Err(HomogenizeError::NotInQ(format!("eigenvalue {m:e}")));
    }
    if (q.trace() - 1.0).abs() > tol {
        return Err(HomogenizeError::NotInQ(format!("trace {}", q.trace())));
    }
    Ok(())
}

/// `Y_{piqj} = −(L₀)_{piqj} + μ₁ δ_pq (Q⁻¹)_ij`.
pub fn y_tensor(l0: &IsoTensor4, q_inv: &DMatrix<f64>) -> Tensor4 {
    let shift = Tensor4::from_fn(l0.n, |p, i, qq, j| if p == qq { l0.mu1 * q_inv[(i, j)] } else { 0.0 });
    &shift - &l0.tensor()
}

fn closed_form_regular(l1: &Tensor4, l0: &IsoTensor4, q: &DMatrix<f64>, theta: f64) -> Result<Tensor4, HomogenizeError> {
    let q_inv = q.clone().try_inverse().ok_or(HomogenizeError::SingularShift("Q"))?;
    let l0t = l0.tensor();
    let dl = &l0t - l1;
    let l_theta = &(l1 * theta) + &(&l0t * (1.0 - theta));
    let l_tilde = &(&l0t * theta) + &(l1 * (1.0 - theta));
    let m = &l_tilde + &y_tensor(l0, &q_inv);
    let m_inv = m.inverse().map_err(|_| HomogenizeError::SingularShift("L̃_θ + Y(Q)"))?;
    let correction = dl.compose(&m_inv).compose(&dl);
    Ok(&l_theta - &(&correction * (theta * (1.0 - theta))))
}

/// `L^e = L_θ − θ(1−θ) ΔL (L̃_θ + Y(Q))⁻¹ ΔL` for `L₀` with `μ₂ + λ = 0`.
///
/// For singular `Q` the inverse is the limit along `Q + εI`, evaluated at
/// `ε ∈ {10⁻⁴, 10⁻⁵, 10⁻⁶}` with first-order Richardson extrapolation; the
/// two extrapolants must agree to `10⁻⁶` relative.
pub fn effective_tensor_closed(
    l1: &Tensor4,
    l0: &IsoTensor4,
    q: &DMatrix<f64>,
    theta: f64,
) -> Result<Tensor4, HomogenizeError> {
    check_theta(theta)?;
    if (l0.mu2 + l0.lambda).abs() > 1e-12 * l0.mu1.abs().max(1.0) {
        return Err(HomogenizeError::NotScalarCase(l0.mu2 + l0.lambda));
    }
    if l1.dim() != l0.n || q.nrows() != l0.n {
        return Err(HomogenizeError::Dimension(format!("L₁ is {}, L₀ is {}, Q is {}", l1.dim(), l0.n, q.nrows())));
    }
    check_in_q(q, 1e-8)?;
    let n = l0.n;
    if min_eigenvalue(q) > 1e-10 {
        return closed_form_regular(l1, l0, q, theta);
    }
    let eps = [1e-4, 1e-5, 1e-6];
    let vals: Vec<Tensor4> = eps
        .iter()
        .map(|&e| closed_form_regular(l1, l0, &(q + DMatrix::identity(n, n) * e), theta))
        .collect::<Result<_, _>>()?;
    // X(ε) ≈ X₀ + c ε  ⇒  X₀ ≈ (ε_a X_b − ε_b X_a)/(ε_a − ε_b)
    let extrapolate = |a: usize, b: usize| -> Tensor4 {
        let (ea, eb) = (eps[a], eps[b]);
        &(&vals[b] * (ea / (ea - eb))) - &(&vals[a] * (eb / (ea - eb)))
    };
    let r1 = extrapolate(0, 1);
    let r2 = extrapolate(1, 2);
    let spread = (&r1 - &r2).max_abs() / r2.max_abs().max(1e-300);
    if spread > 1e-6 {
        return Err(HomogenizeError::LimitDiverged(spread));
    }
    Ok(r2)
}

/// `ΔL⁻¹ I`, the least-norm solution of `ΔL X = I`.
pub fn dl_inverse_identity(dl: &Tensor4) -> Result<DMatrix<f64>, HomogenizeError> {
    let n = dl.dim();
    let pinv = Tensor4::from_matrix(n, pseudo_inverse(dl.matrix(), 1e-12))?;
    let id = DMatrix::identity(n, n);
    let x = pinv.apply(&id);
    let residual = (dl.apply(&x) - &id).amax();
    if residual > 1e-9 * (1.0 + dl.max_abs() * x.amax()) {
        return Err(HomogenizeError::RangeViolation(residual));
    }
    Ok(x)
}

/// `D = (1 − θ) − κ Tr(ΔL⁻¹ I)`.
fn denominator(l0: &IsoTensor4, x: &DMatrix<f64>, theta: f64) -> f64 {
    (1.0 - theta) - l0.kappa() * x.trace()
}

/// Relative residual of `ΔL F / Tr F = ((1−θ) ΔL Q − κ I) / D`.
pub fn constraint_residual(
    l1: &Tensor4,
    l0: &IsoTensor4,
    q: &DMatrix<f64>,
    theta: f64,
    f: &DMatrix<f64>,
) -> Result<f64, HomogenizeError> {
    let dl = &l0.tensor() - l1;
    let x = dl_inverse_identity(&dl)?;
    let tr = f.trace();
    if tr == 0.0 {
        return Err(HomogenizeError::TracelessField);
    }
    let d = denominator(l0, &x, theta);
    let n = l0.n;
    let lhs = dl.apply(f) / tr;
    let rhs = (dl.apply(q) * (1.0 - theta) - DMatrix::identity(n, n) * l0.kappa()) / d;
    Ok((&lhs - &rhs).amax() / rhs.amax().max(lhs.amax()).max(1e-300))
}

/// `F·L^e F = F·L₀F + θκ/D (Tr F)²` for `F` meeting the compatibility constraint.
pub fn effective_form_general(
    l1: &Tensor4,
    l0: &IsoTensor4,
    q: &DMatrix<f64>,
    theta: f64,
    f: &DMatrix<f64>,
) -> Result<f64, HomogenizeError> {
    check_theta(theta)?;
    check_in_q(q, 1e-8)?;
    let residual = constraint_residual(l1, l0, q, theta, f)?;
    if residual > 1e-8 {
        return Err(HomogenizeError::ConstraintViolated(residual));
    }
    let dl = &l0.tensor() - l1;
    let x = dl_inverse_identity(&dl)?;
    let d = denominator(l0, &x, theta);
    Ok(l0.tensor().form(f, f) + theta * l0.kappa() / d * f.trace().powi(2))
}

/// The field `F` with trace `tr_f` compatible with `Q`:
/// `F = tr_f ((1−θ) Q − κ ΔL⁻¹I) / D`.
pub fn solve_f_for_q(
    l1: &Tensor4,
    l0: &IsoTensor4,
    q: &DMatrix<f64>,
    theta: f64,
    tr_f: f64,
) -> Result<DMatrix<f64>, HomogenizeError> {
    check_theta(theta)?;
    let dl = &l0.tensor() - l1;
    let x = dl_inverse_identity(&dl)?;
    let d = denominator(l0, &x, theta);
    Ok((q * (1.0 - theta) - x * l0.kappa()) * (tr_f / d))
}

/// `Q = F/Tr F [1 − κ/(1−θ) Tr(ΔL⁻¹I)] + κ/(1−θ) ΔL⁻¹I`.
pub fn q_from_f(
    f: &DMatrix<f64>,
    l0: &IsoTensor4,
    dl: &Tensor4,
    theta: f64,
) -> Result<DMatrix<f64>, HomogenizeError> {
    check_theta(theta)?;
    let tr = f.trace();
    if tr == 0.0 {
        return Err(HomogenizeError::TracelessField);
    }
    let x = dl_inverse_identity(dl)?;
    let c = l0.kappa() / (1.0 - theta);
    Ok(f / tr * (1.0 - c * x.trace()) + x * c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundDirection {
    /// `L₁ ≥ L₀`: the effective form is bounded below.
    Lower,
    /// `L₁ ≤ L₀`: bounded above.
    Upper,
}

/// `θκ / ((1−θ) − κ Tr(ΔL⁻¹I)) · (Tr F)²`, the Hashin-Shtrikman bound on
/// `F·L^eF − F·L₀F`.
pub fn hs_bound(
    l1: &Tensor4,
    l0: &IsoTensor4,
    theta: f64,
    f: &DMatrix<f64>,
    direction: BoundDirection,
) -> Result<f64, HomogenizeError> {
    check_theta(theta)?;
    let l0t = l0.tensor();
    let diff = l1 - &l0t;
    if diff.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let (m, need) = match direction {
        BoundDirection::Lower => (diff.min_eig_on_symmetric(), "L₁ ≥ L₀"),
        BoundDirection::Upper => ((-&diff).min_eig_on_symmetric(), "L₁ ≤ L₀"),
    };
    let scale = diff.max_abs().max(1e-300);
    if m < -1e-12 * scale {
        return Err(HomogenizeError::OrderingViolation(format!("{need} fails (eigenvalue {m:e})")));
    }
    let dl = &l0t - l1;
    // Range must contain all symmetric matrices.
    let pinv = Tensor4::from_matrix(l0.n, pseudo_inverse(dl.matrix(), 1e-12))?;
    for b in symmetric_basis(l0.n) {
        let r = (dl.apply(&pinv.apply(&b)) - &b).amax();
        if r > 1e-9 {
            return Err(HomogenizeError::RangeViolation(r));
        }
    }
    let x = dl_inverse_identity(&dl)?;
    let d = denominator(l0, &x, theta);
    Ok(theta * l0.kappa() / d * f.trace().powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// `F·L^eF − F·L₀F`.
    pub lhs: f64,
    pub rhs: f64,
    pub direction: BoundDirection,
    /// `lhs − rhs`; nonnegative for a lower bound that holds.
    pub gap: f64,
    pub attained: bool,
}

impl BoundReport {
    /// Compares an effective form value against the bound; `attained` when the
    /// gap is within `rel_tol` of `|rhs|`.
    pub fn new(form: f64, l0: &IsoTensor4, f: &DMatrix<f64>, rhs: f64, direction: BoundDirection, rel_tol: f64) -> Self {
        let lhs = form - l0.tensor().form(f, f);
        let gap = lhs - rhs;
        Self { lhs, rhs, direction, gap, attained: gap.abs() <= rel_tol * rhs.abs().max(1e-300) }
    }

    /// Whether the inequality holds up to `rel_tol` relative slack.
    pub fn holds(&self, rel_tol: f64) -> bool {
        let slack = rel_tol * self.rhs.abs();
        match self.direction {
            BoundDirection::Lower => self.gap >= -slack,
            BoundDirection::Upper => self.gap <= slack,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceBounds {
    pub b1_lhs: f64,
    pub b1_rhs: f64,
    pub b2_lhs: f64,
    pub b2_rhs: f64,
    pub satisfied: bool,
}

impl TraceBounds {
    /// `|b1_lhs − b1_rhs| / |b1_rhs|`.
    pub fn b1_gap(&self) -> f64 {
        (self.b1_lhs - self.b1_rhs).abs() / self.b1_rhs.abs()
    }

    pub fn b2_gap(&self) -> f64 {
        (self.b2_lhs - self.b2_rhs).abs() / self.b2_rhs.abs()
    }
}

/// Trace bounds for conductivities `A₁` (inclusion) and `A₂` (matrix) with
/// `A₂ − A₁ < 0`:
///
/// `Tr(A₂(Aᵉ−A₂)⁻¹) ≤ (1/θ) Tr(A₂(A₁−A₂)⁻¹) + (1−θ)/θ` and
/// `Tr(A₁(A₁−Aᵉ)⁻¹) ≤ 1/(1−θ) Tr(A₁(A₁−A₂)⁻¹) − θ/(1−θ)`.
pub fn trace_bounds(
    a1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    ae: &DMatrix<f64>,
    theta: f64,
) -> Result<TraceBounds, HomogenizeError> {
    check_theta(theta)?;
    let n = a1.nrows();
    if a2.nrows() != n || ae.nrows() != n {
        return Err(HomogenizeError::Dimension("conductivities differ in size".into()));
    }
    let gap = a2 - a1;
    let top = crate::linalg::max_eigenvalue(&((&gap + gap.transpose()) * 0.5));
    if top >= 0.0 {
        return Err(HomogenizeError::OrderingViolation(format!("A₂ − A₁ must be negative definite (eigenvalue {top:e})")));
    }
    let inv = |m: DMatrix<f64>, what: &'static str| m.try_inverse().ok_or(HomogenizeError::SingularShift(what));
    let d12 = inv(a1 - a2, "A₁ − A₂")?;
    let de2 = inv(ae - a2, "Aᵉ − A₂")?;
    let d1e = inv(a1 - ae, "A₁ − Aᵉ")?;
    let b1_lhs = (a2 * de2).trace();
    let b1_rhs = (a2 * &d12).trace() / theta + (1.0 - theta) / theta;
    let b2_lhs = (a1 * d1e).trace();
    let b2_rhs = (a1 * &d12).trace() / (1.0 - theta) - theta / (1.0 - theta);
    let tol = |r: f64| 1e-9 * r.abs().max(1.0);
    let satisfied = b1_lhs <= b1_rhs + tol(b1_rhs) && b2_lhs <= b2_rhs + tol(b2_rhs);
    Ok(TraceBounds { b1_lhs, b1_rhs, b2_lhs, b2_rhs, satisfied })
}
