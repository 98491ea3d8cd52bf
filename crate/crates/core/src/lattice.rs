//! Bravais lattices, periodic unit-cell grids and finite-difference operators.
//!
//! Grid values are stored in row-major lexicographic order: the last axis
//! varies fastest. That ordering is also the on-disk order of exported fields.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("lattice dimension must be 1, 2 or 3 (got {0})")]
    BadDimension(usize),
    #[error("basis vector {index} has length {len}, expected {dim}")]
    BadVector { index: usize, len: usize, dim: usize },
    #[error("lattice basis is degenerate (|det| = {0:e})")]
    Degenerate(f64),
    #[error("grid needs at least 4 nodes per axis (axis {axis} has {nodes})")]
    TooCoarse { axis: usize, nodes: usize },
    #[error("finite-difference operators need an orthogonal lattice basis")]
    NonOrthogonal,
    #[error("field has {got} values but the grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("field value at node {0} is not finite")]
    NonFinite(usize),
    #[error("fields live on different grids")]
    GridMismatch,
}

/// A lattice `{ sum nu_i e_i : nu_i integer }` with its open unit cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BravaisLattice {
    /// Columns are the basis vectors `e_1..e_n`.
    basis: DMatrix<f64>,
}

impl BravaisLattice {
    /// Builds a lattice from basis vectors given as rows.
    pub fn new(vectors: &[Vec<f64>]) -> Result<Self, GridError> {
        let dim = vectors.len();
        if !(1..=3).contains(&dim) {
            return Err(GridError::BadDimension(dim));
        }
        for (index, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(GridError::BadVector { index, len: v.len(), dim });
            }
        }
        let basis = DMatrix::from_fn(dim, dim, |r, c| vectors[c][r]);
        let det = basis.determinant();
        let scale: f64 = vectors
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .product();
        if !det.is_finite() || det.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(GridError::Degenerate(det));
        }
        Ok(Self { basis })
    }

    /// Axis-aligned box lattice with the given side lengths.
    pub fn rectangular(sides: &[f64]) -> Result<Self, GridError> {
        let n = sides.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { sides[i] } else { 0.0 }).collect())
            .collect();
        Self::new(&rows)
    }

    pub fn cubic(dim: usize, side: f64) -> Result<Self, GridError> {
        Self::rectangular(&vec![side; dim])
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Basis vectors as matrix columns.
    pub fn basis_matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn basis_vector(&self, i: usize) -> DVector<f64> {
        self.basis.column(i).into_owned()
    }

    pub fn volume(&self) -> f64 {
        self.basis.determinant().abs()
    }

    pub fn diameter(&self) -> f64 {
        let n = self.dim();
        let mut best: f64 = 0.0;
        for corner in 0..(1usize << n) {
            let frac: Vec<f64> = (0..n)
                .map(|k| if corner >> k & 1 == 1 { 1.0 } else { 0.0 })
                .collect();
            best = best.max(self.to_cartesian(&frac).norm());
        }
        best
    }

    pub fn is_orthogonal(&self) -> bool {
        let n = self.dim();
        for i in 0..n {
            for j in (i + 1)..n {
                let a = self.basis.column(i);
                let b = self.basis.column(j);
                if a.dot(&b).abs() > 1e-12 * a.norm() * b.norm() {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_cartesian(&self, frac: &[f64]) -> DVector<f64> {
        &self.basis * DVector::from_column_slice(frac)
    }

    pub fn to_fractional(&self, x: &[f64]) -> DVector<f64> {
        let lu = self.basis.clone().lu();
        lu.solve(&DVector::from_column_slice(x))
            .expect("basis is nonsingular by construction")
    }

    /// Fractional coordinates of `x`, reduced into `[0, 1)` on every axis.
    pub fn wrap_fractional(&self, x: &[f64]) -> DVector<f64> {
        self.to_fractional(x).map(wrap_unit)
    }

    pub fn lattice_vector(&self, nu: &[i64]) -> DVector<f64> {
        let frac: Vec<f64> = nu.iter().map(|&v| v as f64).collect();
        self.to_cartesian(&frac)
    }

    /// Vectors `g_j` with `e_i . g_j = 2 pi delta_ij`.
    pub fn reciprocal_basis(&self) -> Vec<DVector<f64>> {
        let inv_t = self
            .basis
            .clone()
            .try_inverse()
            .expect("basis is nonsingular by construction")
            .transpose();
        (0..self.dim())
            .map(|j| inv_t.column(j).into_owned() * (2.0 * PI))
            .collect()
    }
}

fn wrap_unit(v: f64) -> f64 {
    let w = v - v.floor();
    // Tiny negative inputs can round up to exactly 1.0.
    if w >= 1.0 || w.abs() < 1e-14 {
        0.0
    } else {
        w
    }
}

/// Uniform nodal grid on the unit cell of a lattice, periodic on every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicGrid {
    lattice: BravaisLattice,
    shape: Vec<usize>,
    strides: Vec<usize>,
    origin: DVector<f64>,
}

impl PeriodicGrid {
    pub fn new(lattice: BravaisLattice, shape: &[usize]) -> Result<Self, GridError> {
        if shape.len() != lattice.dim() {
            return Err(GridError::BadVector { index: 0, len: shape.len(), dim: lattice.dim() });
        }
        for (axis, &nodes) in shape.iter().enumerate() {
            if nodes < 4 {
                return Err(GridError::TooCoarse { axis, nodes });
            }
        }
        let mut strides = vec![1; shape.len()];
        for k in (0..shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * shape[k + 1];
        }
        let origin = DVector::zeros(lattice.dim());
        Ok(Self { lattice, shape: shape.to_vec(), strides, origin })
    }

    /// Shifts the cartesian position of node 0.
    pub fn with_origin(mut self, origin: &[f64]) -> Self {
        assert_eq!(origin.len(), self.dim(), "origin dimension");
        self.origin = DVector::from_column_slice(origin);
        self
    }

    /// Grid whose node 0 sits at `-(e_1 + .. + e_n)/2`, so the cell is centred at 0.
    pub fn centered(lattice: BravaisLattice, shape: &[usize]) -> Result<Self, GridError> {
        let half = lattice.to_cartesian(&vec![-0.5; lattice.dim()]);
        let grid = Self::new(lattice, shape)?;
        let origin: Vec<f64> = half.iter().copied().collect();
        Ok(grid.with_origin(&origin))
    }

    pub fn lattice(&self) -> &BravaisLattice {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn origin(&self) -> &DVector<f64> {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_resolution(&self) -> usize {
        *self.shape.iter().min().expect("grid has at least one axis")
    }

    /// Volume attached to each node (`|Y| / node count`).
    pub fn node_volume(&self) -> f64 {
        self.lattice.volume() / self.len() as f64
    }

    /// Physical step along `axis` (`|e_axis| / N_axis`).
    pub fn spacing(&self, axis: usize) -> f64 {
        self.lattice.basis.column(axis).norm() / self.shape[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).fold(f64::INFINITY, f64::min)
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        self.shape
            .iter()
            .zip(&self.strides)
            .map(|(&n, &s)| (flat / s) % n)
            .collect()
    }

    pub fn coord(&self, flat: usize, axis: usize) -> usize {
        (flat / self.strides[axis]) % self.shape[axis]
    }

    /// Index of the node `delta` steps away along `axis`, wrapping periodically.
    pub fn shift(&self, flat: usize, axis: usize, delta: isize) -> usize {
        let n = self.shape[axis] as isize;
        let c = self.coord(flat, axis) as isize;
        let target = (c + delta).rem_euclid(n);
        (flat as isize + (target - c) * self.strides[axis] as isize) as usize
    }

    /// Cartesian position of a node.
    pub fn point(&self, flat: usize) -> DVector<f64> {
        let frac: Vec<f64> = (0..self.dim())
            .map(|k| self.coord(flat, k) as f64 / self.shape[k] as f64)
            .collect();
        &self.origin + self.lattice.to_cartesian(&frac)
    }

    /// Flat table of face neighbours: entry `2*n*i + 2*k` is the `+1` neighbour of
    /// node `i` along axis `k`, entry `2*n*i + 2*k + 1` the `-1` neighbour.
    pub fn neighbor_table(&self) -> Vec<usize> {
        let n = self.dim();
        let mut table = vec![0usize; self.len() * 2 * n];
        for i in 0..self.len() {
            for k in 0..n {
                table[2 * n * i + 2 * k] = self.shift(i, k, 1);
                table[2 * n * i + 2 * k + 1] = self.shift(i, k, -1);
            }
        }
        table
    }

    fn require_orthogonal(&self) -> Result<(), GridError> {
        if self.lattice.is_orthogonal() {
            Ok(())
        } else {
            Err(GridError::NonOrthogonal)
        }
    }

    /// `1/h_k^2` per axis.
    pub fn inverse_spacing_sq(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| 1.0 / self.spacing(k).powi(2)).collect()
    }

    /// Unit basis directions as columns (lattice frame to cartesian frame).
    fn frame(&self) -> DMatrix<f64> {
        let mut r = self.lattice.basis.clone();
        for mut c in r.column_iter_mut() {
            let len = c.norm();
            c /= len;
        }
        r
    }
}

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: &PeriodicGrid, f: impl Fn(&DVector<f64>) -> f64) -> Result<Self, GridError> {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self::new(grid.clone(), values)
    }

    pub fn constant(grid: &PeriodicGrid, value: f64) -> Result<Self, GridError> {
        Self::new(grid.clone(), vec![value; grid.len()])
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, GridError> {
        Self::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }
}

/// One symmetric `n x n` matrix per node, stored row-major per node.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl MatrixField {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self, GridError> {
        let n = grid.dim();
        if values.len() != grid.len() * n * n {
            return Err(GridError::LengthMismatch { expected: grid.len() * n * n, got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    pub fn entries(&self, node: usize) -> &[f64] {
        let n = self.grid.dim();
        &self.values[node * n * n..(node + 1) * n * n]
    }

    pub fn get(&self, node: usize) -> DMatrix<f64> {
        let n = self.grid.dim();
        DMatrix::from_row_slice(n, n, self.entries(node))
    }

    pub fn trace(&self, node: usize) -> f64 {
        let n = self.grid.dim();
        let e = self.entries(node);
        (0..n).map(|k| e[k * n + k]).sum()
    }

    /// Multiplies every entry by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|v| v * a).collect() }
    }
}

/// Boolean node mask on a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    grid_shape: Vec<usize>,
    values: Vec<bool>,
}

impl Mask {
    pub fn new(grid: &PeriodicGrid, values: Vec<bool>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid_shape: grid.shape().to_vec(), values })
    }

    pub fn empty(grid: &PeriodicGrid) -> Self {
        Self { grid_shape: grid.shape().to_vec(), values: vec![false; grid.len()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.grid_shape
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, i: usize) -> bool {
        self.values[i]
    }

    pub fn set(&mut self, i: usize, v: bool) {
        self.values[i] = v;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.values.len() as f64
    }

    pub fn complement(&self) -> Self {
        Self { grid_shape: self.grid_shape.clone(), values: self.values.iter().map(|b| !b).collect() }
    }

    /// True when every node of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.values.iter().zip(&other.values).all(|(&a, &b)| !a || b)
    }

    pub fn matches(&self, grid: &PeriodicGrid) -> bool {
        self.grid_shape == grid.shape()
    }
}

fn second_difference(values: &[f64], grid: &PeriodicGrid, i: usize, k: usize) -> f64 {
    let up = values[grid.shift(i, k, 1)];
    let down = values[grid.shift(i, k, -1)];
    (up - 2.0 * values[i] + down) / grid.spacing(k).powi(2)
}

fn cross_difference(values: &[f64], grid: &PeriodicGrid, i: usize, a: usize, b: usize) -> f64 {
    let pp = values[grid.shift(grid.shift(i, a, 1), b, 1)];
    let pm = values[grid.shift(grid.shift(i, a, 1), b, -1)];
    let mp = values[grid.shift(grid.shift(i, a, -1), b, 1)];
    let mm = values[grid.shift(grid.shift(i, a, -1), b, -1)];
    (pp - pm - mp + mm) / (4.0 * grid.spacing(a) * grid.spacing(b))
}

/// Discrete Laplacian at a single node (2n+1 point stencil, periodic wrap).
pub fn laplacian_at(grid: &PeriodicGrid, values: &[f64], i: usize) -> f64 {
    (0..grid.dim()).map(|k| second_difference(values, grid, i, k)).sum()
}

/// Second-order central-difference Laplacian with periodic wrap-around.
pub fn laplacian_apply(field: &ScalarField) -> Result<ScalarField, GridError> {
    let grid = field.grid();
    grid.require_orthogonal()?;
    let values = (0..grid.len()).map(|i| laplacian_at(grid, field.values(), i)).collect();
    ScalarField::new(grid.clone(), values)
}

/// Central-difference Hessian expressed in cartesian coordinates.
///
/// Diagonal entries in the lattice frame use the same second differences as
/// [`laplacian_apply`], so the trace of every node matrix agrees with the
/// Laplacian up to rounding.
pub fn hessian(field: &ScalarField) -> Result<MatrixField, GridError> {
    let grid = field.grid();
    grid.require_orthogonal()?;
    let n = grid.dim();
    let frame = grid.frame();
    let axis_aligned = (frame.clone() - DMatrix::identity(n, n)).amax() < 1e-14;
    let mut out = Vec::with_capacity(grid.len() * n * n);
    let u = field.values();
    for i in 0..grid.len() {
        let mut local = DMatrix::zeros(n, n);
        for a in 0..n {
            local[(a, a)] = second_difference(u, grid, i, a);
            for b in (a + 1)..n {
                let c = cross_difference(u, grid, i, a, b);
                local[(a, b)] = c;
                local[(b, a)] = c;
            }
        }
        let h = if axis_aligned { local } else { &frame * local * frame.transpose() };
        for r in 0..n {
            for c in 0..n {
                out.push(h[(r, c)]);
            }
        }
    }
    MatrixField::new(grid.clone(), out)
}
