//! Piecewise quadratic obstacles: suprema of translated concave quadratics.
//!
//! A piece contributes `q(x + r)` for every `r` in its translation set, where
//! `q(x) = ½ (x − d)·Q(x − d) + h`. Evaluation is exact: a lower bound from the
//! nearest translates fixes a radius outside which no translate can win, and
//! every lattice point inside that radius is visited.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{BravaisLattice, PeriodicGrid, ScalarField};
use crate::linalg::{is_symmetric, max_eigenvalue, min_eigenvalue, range_basis, sym_eigenvalues};

const SYM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObstacleError {
    #[error("curvature matrix is zero")]
    ZeroMatrix,
    #[error("curvature matrix is not negative semi-definite (max eigenvalue {0:e})")]
    NotNegativeSemidefinite(f64),
    #[error("curvature matrix is not symmetric")]
    NotSymmetric,
    #[error("unbounded obstacle: {0}")]
    UnboundedObstacle(String),
    #[error("piece {piece}: dimension {got} does not match obstacle dimension {dim}")]
    DimensionMismatch { piece: usize, got: usize, dim: usize },
    #[error("piece {0} translates over a lattice but the obstacle has none")]
    MissingLattice(usize),
    #[error("laminate coefficient must be negative (got {0})")]
    NonnegativeLaminate(f64),
    #[error("normal vector must have unit length (|n| = {0})")]
    BadNormal(f64),
    #[error("joined curvatures must differ by a multiple of n⊗n")]
    NotRankOneJoined,
    #[error("obstacle has no pieces")]
    Empty,
}

/// Translation set of a piece.
#[derive(Debug, Clone, PartialEq)]
pub enum Translations {
    /// Every vector of the obstacle lattice.
    Full,
    /// Lattice vectors lying in the range of the curvature.
    Range,
    /// Only `r = 0`.
    None,
    /// Integer combinations of the given vectors.
    Explicit(Vec<DVector<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Curvature {
    Uniform(DMatrix<f64>),
    /// `below` where `(x − d)·normal < 0`, `above` elsewhere.
    Joined { below: DMatrix<f64>, above: DMatrix<f64>, normal: DVector<f64> },
}

impl Curvature {
    pub fn dim(&self) -> usize {
        match self {
            Curvature::Uniform(q) => q.nrows(),
            Curvature::Joined { below, .. } => below.nrows(),
        }
    }

    pub fn matrices(&self) -> Vec<&DMatrix<f64>> {
        match self {
            Curvature::Uniform(q) => vec![q],
            Curvature::Joined { below, above, .. } => vec![below, above],
        }
    }

    fn value(&self, y: &DVector<f64>) -> f64 {
        let q = match self {
            Curvature::Uniform(q) => q,
            Curvature::Joined { below, above, normal } => {
                if y.dot(normal) < 0.0 {
                    below
                } else {
                    above
                }
            }
        };
        0.5 * y.dot(&(q * y))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPiece {
    pub curvature: Curvature,
    pub center: DVector<f64>,
    pub offset: f64,
    pub translations: Translations,
}

impl QuadraticPiece {
    pub fn new(q: DMatrix<f64>, center: DVector<f64>, offset: f64, translations: Translations) -> Self {
        Self { curvature: Curvature::Uniform(q), center, offset, translations }
    }

    /// `q(x)` without translation.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.curvature.value(&(x - &self.center)) + self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Piece {
    Quadratic(QuadraticPiece),
    Constant(f64),
}

/// A translate that attains the supremum at some point.
#[derive(Debug, Clone, PartialEq)]
pub struct Touch {
    pub piece: usize,
    pub shift: DVector<f64>,
    pub value: f64,
}

#[derive(Debug, Clone)]
struct Resolved {
    /// Translation generators as columns (n × m).
    basis: DMatrix<f64>,
    /// Dual generators in the span of `basis` (n × m).
    dual: DMatrix<f64>,
    /// Smallest curvature magnitude on the span of `basis`.
    lambda: f64,
}

#[derive(Debug, Clone)]
pub struct Obstacle {
    dim: usize,
    lattice: Option<BravaisLattice>,
    pieces: Vec<Piece>,
    resolved: Vec<Option<Resolved>>,
}

impl Obstacle {
    pub fn new(pieces: Vec<Piece>, lattice: Option<BravaisLattice>, dim: usize) -> Result<Self, ObstacleError> {
        if pieces.is_empty() {
            return Err(ObstacleError::Empty);
        }
        if let Some(l) = &lattice {
            if l.dim() != dim {
                return Err(ObstacleError::DimensionMismatch { piece: 0, got: l.dim(), dim });
            }
        }
        let mut resolved = Vec::with_capacity(pieces.len());
        for (i, piece) in pieces.iter().enumerate() {
            resolved.push(match piece {
                Piece::Constant(_) => None,
                Piece::Quadratic(p) => resolve(i, p, lattice.as_ref(), dim)?,
            });
        }
        Ok(Self { dim, lattice, pieces, resolved })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lattice(&self) -> Option<&BravaisLattice> {
        self.lattice.as_ref()
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Distinct curvature matrices, in piece order.
    pub fn curvatures(&self) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = Vec::new();
        for p in &self.pieces {
            if let Piece::Quadratic(q) = p {
                for m in q.curvature.matrices() {
                    if !out.iter().any(|o| (o - m).amax() < 1e-12) {
                        out.push(m.clone());
                    }
                }
            }
        }
        out
    }

    /// `C = max spectral radius of −Q_i` (the one-sided curvature bound).
    pub fn curvature_bound(&self) -> f64 {
        self.curvatures().iter().map(|q| -min_eigenvalue(q)).fold(0.0, f64::max)
    }

    fn lower_bound(&self, x: &DVector<f64>) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (piece, res) in self.pieces.iter().zip(&self.resolved) {
            match (piece, res) {
                (Piece::Constant(c), _) => best = best.max(*c),
                (Piece::Quadratic(p), None) => best = best.max(p.value(x)),
                (Piece::Quadratic(p), Some(r)) => {
                    let y = x - &p.center;
                    let t = r.dual.transpose() * &y;
                    let nu = t.map(|v| -v.round());
                    let z = &y + &r.basis * &nu;
                    best = best.max(p.curvature.value(&z) + p.offset);
                }
            }
        }
        best
    }

    fn visit(&self, x: &DVector<f64>, mut f: impl FnMut(usize, &DVector<f64>, f64)) {
        let floor = self.lower_bound(x);
        for (i, (piece, res)) in self.pieces.iter().zip(&self.resolved).enumerate() {
            match (piece, res) {
                (Piece::Constant(c), _) => f(i, &DVector::zeros(self.dim), *c),
                (Piece::Quadratic(p), None) => f(i, &DVector::zeros(self.dim), p.value(x)),
                (Piece::Quadratic(p), Some(r)) => {
                    let gap = p.offset - floor;
                    if gap < -1e-12 * (1.0 + floor.abs()) {
                        continue;
                    }
                    let radius = (2.0 * gap.max(0.0) / r.lambda).sqrt() * (1.0 + 1e-9) + 1e-12;
                    let y = x - &p.center;
                    let t = r.dual.transpose() * &y;
                    let m = r.basis.ncols();
                    let mut lo = vec![0i64; m];
                    let mut hi = vec![0i64; m];
                    for k in 0..m {
                        let reach = radius * r.dual.column(k).norm();
                        lo[k] = (-t[k] - reach).ceil() as i64;
                        hi[k] = (-t[k] + reach).floor() as i64;
                    }
                    if lo.iter().zip(&hi).any(|(a, b)| a > b) {
                        continue;
                    }
                    let mut nu = lo.clone();
                    loop {
                        let nuv = DVector::from_iterator(m, nu.iter().map(|&v| v as f64));
                        let shift = &r.basis * nuv;
                        let value = p.curvature.value(&(&y + &shift)) + p.offset;
                        f(i, &shift, value);
                        let mut k = 0;
                        while k < m {
                            nu[k] += 1;
                            if nu[k] <= hi[k] {
                                break;
                            }
                            nu[k] = lo[k];
                            k += 1;
                        }
                        if k == m {
                            break;
                        }
                    }
                }
            }
        }
    }

    /// Exact value `φ(x)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        let mut best = f64::NEG_INFINITY;
        self.visit(&x, |_, _, v| best = best.max(v));
        best
    }

    /// All translates within `tol` of the supremum at `x`.
    pub fn eval_argmax(&self, x: &[f64], tol: f64) -> Vec<Touch> {
        let x = DVector::from_column_slice(x);
        let mut all = Vec::new();
        self.visit(&x, |piece, shift, value| all.push(Touch { piece, shift: shift.clone(), value }));
        let best = all.iter().map(|t| t.value).fold(f64::NEG_INFINITY, f64::max);
        all.retain(|t| t.value >= best - tol);
        all
    }

    /// Nodal samples of the obstacle.
    pub fn sample(&self, grid: &PeriodicGrid) -> Result<ScalarField, ObstacleError> {
        if grid.dim() != self.dim {
            return Err(ObstacleError::DimensionMismatch { piece: 0, got: grid.dim(), dim: self.dim });
        }
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let p = grid.point(i);
                self.eval(p.as_slice())
            })
            .collect();
        ScalarField::new(grid.clone(), values)
            .map_err(|e| ObstacleError::UnboundedObstacle(format!("non-finite sample: {e}")))
    }
}

fn check_matrix(i: usize, q: &DMatrix<f64>, dim: usize) -> Result<(), ObstacleError> {
    if q.nrows() != dim || q.ncols() != dim {
        return Err(ObstacleError::DimensionMismatch { piece: i, got: q.nrows(), dim });
    }
    if !is_symmetric(q, SYM_TOL * (1.0 + q.amax())) {
        return Err(ObstacleError::NotSymmetric);
    }
    Ok(())
}

fn resolve(
    i: usize,
    p: &QuadraticPiece,
    lattice: Option<&BravaisLattice>,
    dim: usize,
) -> Result<Option<Resolved>, ObstacleError> {
    if p.center.len() != dim {
        return Err(ObstacleError::DimensionMismatch { piece: i, got: p.center.len(), dim });
    }
    for q in p.curvature.matrices() {
        check_matrix(i, q, dim)?;
    }
    if let Curvature::Joined { below, above, normal } = &p.curvature {
        let len = normal.norm();
        if (len - 1.0).abs() > 1e-9 {
            return Err(ObstacleError::BadNormal(len));
        }
        let diff = below - above;
        let b = normal.dot(&(&diff * normal));
        if (&diff - normal * normal.transpose() * b).amax() > 1e-10 * (1.0 + diff.amax()) {
            return Err(ObstacleError::NotRankOneJoined);
        }
    }
    let basis = match &p.translations {
        Translations::None => return Ok(None),
        Translations::Full => lattice.ok_or(ObstacleError::MissingLattice(i))?.basis_matrix().clone(),
        Translations::Range => {
            let lat = lattice.ok_or(ObstacleError::MissingLattice(i))?;
            let q = p.curvature.matrices()[0];
            range_sublattice(lat, q)?
        }
        Translations::Explicit(vs) => {
            if vs.is_empty() {
                return Ok(None);
            }
            for v in vs {
                if v.len() != dim {
                    return Err(ObstacleError::DimensionMismatch { piece: i, got: v.len(), dim });
                }
            }
            DMatrix::from_columns(vs)
        }
    };
    let gram = basis.transpose() * &basis;
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| ObstacleError::UnboundedObstacle(format!("piece {i}: dependent translation vectors")))?;
    let dual = &basis * gram_inv;
    // Orthonormal frame of span(basis).
    let frame = basis.clone().qr().q().columns(0, basis.ncols()).into_owned();
    let mut lambda = f64::INFINITY;
    for q in p.curvature.matrices() {
        let restricted = frame.transpose() * q * &frame;
        let top = max_eigenvalue(&restricted);
        let scale = 1.0 + q.amax();
        if top >= -1e-12 * scale {
            return Err(ObstacleError::UnboundedObstacle(format!(
                "piece {i}: curvature is not negative definite along its translations"
            )));
        }
        // Curvature outside the translation span would make the sup depend on
        // directions the enumeration does not bound.
        let proj = &frame * frame.transpose();
        let leak = q - &proj * q * &proj;
        if leak.amax() > 1e-10 * scale {
            return Err(ObstacleError::UnboundedObstacle(format!(
                "piece {i}: curvature acts outside the span of its translations"
            )));
        }
        lambda = lambda.min(-top);
    }
    Ok(Some(Resolved { basis, dual, lambda }))
}

/// A basis of the lattice vectors contained in `range(q)`.
fn range_sublattice(lat: &BravaisLattice, q: &DMatrix<f64>) -> Result<DMatrix<f64>, ObstacleError> {
    let range = range_basis(q, 1e-10);
    let rank = range.ncols();
    if rank == 0 {
        return Err(ObstacleError::ZeroMatrix);
    }
    let proj = &range * range.transpose();
    let n = lat.dim();
    const SPAN: i64 = 6;
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    let mut nu = vec![-SPAN; n];
    loop {
        if nu.iter().any(|&v| v != 0) {
            let r = lat.lattice_vector(&nu);
            let off = (&r - &proj * &r).norm();
            if off <= 1e-9 * r.norm() {
                candidates.push(r);
            }
        }
        let mut k = 0;
        while k < n {
            nu[k] += 1;
            if nu[k] <= SPAN {
                break;
            }
            nu[k] = -SPAN;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    candidates.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
    let mut chosen: Vec<DVector<f64>> = Vec::new();
    for c in candidates {
        let mut trial = chosen.clone();
        trial.push(c);
        let m = DMatrix::from_columns(&trial);
        if (m.transpose() * &m).determinant().abs() > 1e-10 * trial.iter().map(|v| v.norm_squared()).product::<f64>() {
            chosen = trial;
            if chosen.len() == rank {
                break;
            }
        }
    }
    if chosen.len() < rank {
        return Err(ObstacleError::UnboundedObstacle(
            "range of the curvature contains too few lattice vectors".into(),
        ));
    }
    Ok(DMatrix::from_columns(&chosen))
}

/// Obstacle generated by one negative semi-definite matrix on a lattice.
///
/// Definite matrices translate over the whole lattice; singular ones only over
/// lattice vectors inside their range.
pub fn build_single(q: DMatrix<f64>, lattice: BravaisLattice) -> Result<Obstacle, ObstacleError> {
    let dim = lattice.dim();
    check_matrix(0, &q, dim)?;
    if q.amax() == 0.0 {
        return Err(ObstacleError::ZeroMatrix);
    }
    let eig = sym_eigenvalues(&q);
    let scale = eig.amax();
    if eig.max() > 1e-12 * scale {
        return Err(ObstacleError::NotNegativeSemidefinite(eig.max()));
    }
    let translations =
        if eig.max() < -1e-12 * scale { Translations::Full } else { Translations::Range };
    let piece = QuadraticPiece::new(q, DVector::zeros(dim), 0.0, translations);
    Obstacle::new(vec![Piece::Quadratic(piece)], Some(lattice), dim)
}

/// `φ(x) = max_ν ½ a (x·n + ν)²`, a unit-period laminate profile along `normal`.
pub fn build_laminate(a: f64, normal: DVector<f64>) -> Result<Obstacle, ObstacleError> {
    if a >= 0.0 || !a.is_finite() {
        return Err(ObstacleError::NonnegativeLaminate(a));
    }
    let len = normal.norm();
    if (len - 1.0).abs() > 1e-9 {
        return Err(ObstacleError::BadNormal(len));
    }
    let dim = normal.len();
    let q = &normal * normal.transpose() * a;
    let piece = QuadraticPiece::new(q, DVector::zeros(dim), 0.0, Translations::Explicit(vec![normal]));
    Obstacle::new(vec![Piece::Quadratic(piece)], None, dim)
}

/// Maximum over several strictly concave pieces `(Q_i, d_i, h_i)` and all lattice translations.
pub fn build_multi(
    pieces: &[(DMatrix<f64>, DVector<f64>, f64)],
    lattice: BravaisLattice,
) -> Result<Obstacle, ObstacleError> {
    let dim = lattice.dim();
    let list = pieces
        .iter()
        .map(|(q, d, h)| Piece::Quadratic(QuadraticPiece::new(q.clone(), d.clone(), *h, Translations::Full)))
        .collect();
    Obstacle::new(list, Some(lattice), dim)
}

/// Free function form of [`Obstacle::sample`].
pub fn sample(obstacle: &Obstacle, grid: &PeriodicGrid) -> Result<ScalarField, ObstacleError> {
    obstacle.sample(grid)
}
