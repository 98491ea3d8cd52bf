//! Coincident sets of obstacle solutions and the identities they satisfy.
//!
//! A solved obstacle problem yields a periodic E-inclusion: on the coincident
//! set the Hessian of `u` equals one of finitely many matrices `Q_i`, and off
//! it `Δu = f`. This module extracts that set, splits it by Hessian, and checks
//! the volume-fraction law and the necessary condition on `(𝕂, Θ)`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lattice::{hessian, laplacian_at, GridError, Mask, MatrixField, PeriodicGrid, ScalarField};
use crate::linalg::{frobenius, min_eigenvalue};
use crate::vi::{solve_periodic, SolveError, SolveOptions, VISolution};

#[derive(Debug, Error)]
pub enum EincError {
    #[error("{unmatched} of {interior} interior nodes match no target matrix")]
    UnmatchedRegion { unmatched: usize, interior: usize },
    #[error("coincident mask is empty")]
    EmptyMask,
    #[error("no target matrices supplied")]
    NoTargets,
    #[error("target matrices {0} and {1} coincide")]
    DuplicateTargets(usize, usize),
    #[error("f = Tr Q makes the volume fraction undefined")]
    DivisionGuard,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("target fraction {target} not reached: {reason}")]
    TargetUnreachable { target: f64, reason: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Contact threshold: `a·10⁻³·max(1, max|φ|)·(1/N_min)²`.
///
/// Slack grows quadratically away from the free boundary, so a node one cell
/// outside the contact set has slack of order `max|φ|/N²`; the threshold sits
/// three orders of magnitude below that.
pub fn extraction_tolerance(sol: &VISolution, a: f64) -> f64 {
    let n = sol.grid().min_resolution() as f64;
    a * 1e-3 * sol.obstacle_field.max_abs().max(1.0) / (n * n)
}

/// Nodes where `|u − φ|` is below [`extraction_tolerance`].
pub fn extract_coincident(sol: &VISolution, a: f64) -> Mask {
    let tol = extraction_tolerance(sol, a);
    let values = sol.slack().iter().map(|s| s.abs() < tol).collect();
    let mut mask = Mask::new(sol.grid(), values).expect("slack has one value per node");
    if let Some(fixed) = &sol.fixed {
        for (i, &b) in fixed.values().iter().enumerate() {
            if b {
                mask.set(i, false);
            }
        }
    }
    mask
}

/// Coincident set split by Hessian: label 0 is the complement `Ω₀`,
/// label `i ≥ 1` is `Ω_i` for target `K[i − 1]`.
#[derive(Debug, Clone)]
pub struct EInclusionLabeling {
    pub grid: PeriodicGrid,
    pub labels: Vec<usize>,
    pub k: Vec<DMatrix<f64>>,
    /// `θ₀, θ₁, …, θ_N`.
    pub theta: Vec<f64>,
    /// `Tr Q_i`.
    pub p: Vec<f64>,
    /// `p₀` from `θ₀ p₀ = −Σ θ_i p_i` (`None` when `Ω₀` is empty).
    pub p0: Option<f64>,
    pub f: f64,
    pub interior_nodes: usize,
    pub unmatched_interior: usize,
}

impl EInclusionLabeling {
    pub fn mask(&self, label: usize) -> Mask {
        Mask::new(&self.grid, self.labels.iter().map(|&l| l == label).collect()).expect("labels cover the grid")
    }

    pub fn inclusion_mask(&self) -> Mask {
        Mask::new(&self.grid, self.labels.iter().map(|&l| l != 0).collect()).expect("labels cover the grid")
    }

    /// `θ₁, …, θ_N`.
    pub fn inclusion_fractions(&self) -> &[f64] {
        &self.theta[1..]
    }

    pub fn total_fraction(&self) -> f64 {
        1.0 - self.theta[0]
    }

    /// `f θ₀ + Σ p_i θ_i`.
    pub fn load_balance_residual(&self) -> f64 {
        self.f * self.theta[0] + self.p.iter().zip(&self.theta[1..]).map(|(p, t)| p * t).sum::<f64>()
    }
}

fn full_neighborhood(grid: &PeriodicGrid, i: usize) -> Vec<usize> {
    let n = grid.dim();
    let mut out = Vec::with_capacity(3usize.pow(n as u32));
    let mut offs = vec![-1isize; n];
    loop {
        let mut j = i;
        for (axis, &d) in offs.iter().enumerate() {
            j = grid.shift(j, axis, d);
        }
        out.push(j);
        let mut k = 0;
        while k < n {
            offs[k] += 1;
            if offs[k] <= 1 {
                break;
            }
            offs[k] = -1;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    out
}

/// Assigns coincident nodes to targets by Hessian.
///
/// Interior nodes (whose whole `3ⁿ` neighbourhood is in the mask) take the
/// nearest target in Frobenius norm when it is within `tol_q` (default
/// `0.05·max‖Q_i‖_F`). Labeling fails when more than 1% of interior nodes
/// are unmatched with no matched node in their neighbourhood. Remaining mask
/// nodes inherit the label of the nearest assigned node by face-adjacent
/// distance.
pub fn label_components(
    mask: &Mask,
    h: &MatrixField,
    k: &[DMatrix<f64>],
    tol_q: Option<f64>,
    f: f64,
) -> Result<EInclusionLabeling, EincError> {
    let grid = h.grid();
    if !mask.matches(grid) {
        return Err(GridError::GridMismatch.into());
    }
    if k.is_empty() {
        return Err(EincError::NoTargets);
    }
    for a in 0..k.len() {
        for b in (a + 1)..k.len() {
            if (&k[a] - &k[b]).amax() < 1e-12 {
                return Err(EincError::DuplicateTargets(a, b));
            }
        }
    }
    if mask.count() == 0 {
        return Err(EincError::EmptyMask);
    }
    let tol = tol_q.unwrap_or_else(|| 0.05 * k.iter().map(frobenius).fold(0.0, f64::max));
    let nearest = |i: usize| -> (usize, f64) {
        let m = h.get(i);
        k.iter()
            .enumerate()
            .map(|(idx, q)| (idx + 1, frobenius(&(&m - q))))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .expect("targets are nonempty")
    };

    let total = grid.len();
    let mut labels = vec![0usize; total];
    let mut interior = 0;
    let mut unmatched = 0;
    let mut queue = VecDeque::new();
    for i in 0..total {
        if !mask.get(i) {
            continue;
        }
        if full_neighborhood(grid, i).iter().all(|&j| mask.get(j)) {
            interior += 1;
            let (label, dist) = nearest(i);
            if dist <= tol {
                labels[i] = label;
                queue.push_back(i);
            } else {
                unmatched += 1;
            }
        }
    }
    // Unmatched nodes next to matched ones form interface bands between
    // rank-one connected targets; only the rest counts against the labeling.
    let bulk = (0..total)
        .filter(|&i| mask.get(i) && labels[i] == 0)
        .filter(|&i| full_neighborhood(grid, i).iter().all(|&j| mask.get(j) && labels[j] == 0))
        .count();
    if interior > 0 && bulk as f64 > 0.01 * interior as f64 {
        return Err(EincError::UnmatchedRegion { unmatched: bulk, interior });
    }
    // Breadth-first growth through the mask from matched interior nodes.
    while let Some(i) = queue.pop_front() {
        for axis in 0..grid.dim() {
            for d in [-1isize, 1] {
                let j = grid.shift(i, axis, d);
                if mask.get(j) && labels[j] == 0 {
                    labels[j] = labels[i];
                    queue.push_back(j);
                }
            }
        }
    }
    for i in 0..total {
        if mask.get(i) && labels[i] == 0 {
            labels[i] = nearest(i).0;
        }
    }

    let mut counts = vec![0usize; k.len() + 1];
    for &l in &labels {
        counts[l] += 1;
    }
    let theta: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let p: Vec<f64> = k.iter().map(|q| q.trace()).collect();
    let p0 = if theta[0] > 0.0 {
        Some(-p.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>() / theta[0])
    } else {
        None
    };
    Ok(EInclusionLabeling {
        grid: grid.clone(),
        labels,
        k: k.to_vec(),
        theta,
        p,
        p0,
        f,
        interior_nodes: interior,
        unmatched_interior: unmatched,
    })
}

/// `θ = f/(f − Tr Q)`.
pub fn predicted_theta(q: &DMatrix<f64>, f: f64) -> Result<f64, EincError> {
    let p = q.trace();
    if !(f > 0.0) {
        return Err(EincError::Invalid(format!("load must be positive (got {f})")));
    }
    if !(p < 0.0) {
        return Err(EincError::Invalid(format!("Tr Q must be negative (got {p})")));
    }
    let denom = f - p;
    if denom == 0.0 {
        return Err(EincError::DivisionGuard);
    }
    Ok(f / denom)
}

/// Inverse of [`predicted_theta`]: the load giving fraction `theta`.
pub fn load_for_theta(q: &DMatrix<f64>, theta: f64) -> Result<f64, EincError> {
    let p = q.trace();
    if !(theta > 0.0 && theta < 1.0) || !(p < 0.0) {
        return Err(EincError::Invalid(format!("need 0 < θ < 1 and Tr Q < 0 (θ = {theta}, Tr Q = {p})")));
    }
    Ok(-theta * p / (1.0 - theta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NecessaryCondition {
    pub satisfied: bool,
    pub min_eig: f64,
    pub matrix: DMatrix<f64>,
}

/// Evaluates `M = Σ_i [θ₀ Tr Q_i + Σ_j θ_j Tr Q_j] θ_i Q_i − θ₀ Σ_i θ_i Q_i² − (Σ_i θ_i Q_i)²`
/// and reports whether `M ≥ 0` (to `−1e-10`).
pub fn check_necessary_condition(k: &[DMatrix<f64>], theta: &[f64]) -> Result<NecessaryCondition, EincError> {
    if k.is_empty() || k.len() != theta.len() {
        return Err(EincError::Invalid(format!("{} matrices for {} fractions", k.len(), theta.len())));
    }
    if theta.iter().any(|&t| t < 0.0) {
        return Err(EincError::Invalid("fractions must be nonnegative".into()));
    }
    let theta0 = 1.0 - theta.iter().sum::<f64>();
    if theta0 < 0.0 {
        return Err(EincError::Invalid("fractions exceed one".into()));
    }
    let n = k[0].nrows();
    let weighted_trace: f64 = k.iter().zip(theta).map(|(q, t)| t * q.trace()).sum();
    let mean: DMatrix<f64> = k.iter().zip(theta).fold(DMatrix::zeros(n, n), |acc, (q, t)| acc + q * *t);
    let mut m = DMatrix::zeros(n, n);
    for (q, &t) in k.iter().zip(theta) {
        m += q * ((theta0 * q.trace() + weighted_trace) * t);
        m -= (q * q) * (theta0 * t);
    }
    m -= &mean * &mean;
    let m = (&m + m.transpose()) * 0.5;
    let min_eig = min_eigenvalue(&m);
    Ok(NecessaryCondition { satisfied: min_eig >= -1e-10, min_eig, matrix: m })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    /// Max `‖H − Q_i‖_F` over interior nodes of each `Ω_i`, per component.
    pub hessian_deviation: Vec<f64>,
    /// Max `|Δ_h u − f|` over interior nodes of `Ω₀` (`None` when there are none).
    pub laplacian_residual: Option<f64>,
    /// `f θ₀ + Σ p_i θ_i`.
    pub load_balance_residual: f64,
    /// RMS spread of `H` about its mean over interior nodes of each `Ω_i`.
    pub hessian_std: Vec<f64>,
    pub interior_counts: Vec<usize>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn max_hessian_deviation(&self) -> f64 {
        self.hessian_deviation.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks `∇∇u = Q_i` on each `Ω_i`, `Δu = f` on `Ω₀` and the load balance.
pub fn verify_einclusion(sol: &VISolution, labeling: &EInclusionLabeling) -> Result<VerificationReport, EincError> {
    let grid = sol.grid();
    if grid != &labeling.grid {
        return Err(GridError::GridMismatch.into());
    }
    let h = hessian(&sol.u)?;
    let labels = &labeling.labels;
    let count = labeling.k.len();
    let mut dev = vec![0.0f64; count];
    let mut sums: Vec<DMatrix<f64>> = vec![DMatrix::zeros(grid.dim(), grid.dim()); count];
    let mut sq = vec![0.0f64; count];
    let mut counts = vec![0usize; count + 1];
    let mut lap_res: Option<f64> = None;
    for i in 0..grid.len() {
        let l = labels[i];
        if l == 0 {
            let face_interior = (0..grid.dim()).all(|axis| {
                labels[grid.shift(i, axis, 1)] == 0 && labels[grid.shift(i, axis, -1)] == 0
            });
            if face_interior {
                counts[0] += 1;
                let r = (laplacian_at(grid, sol.u.values(), i) - sol.f).abs();
                lap_res = Some(lap_res.map_or(r, |m: f64| m.max(r)));
            }
            continue;
        }
        if !full_neighborhood(grid, i).iter().all(|&j| labels[j] == l) {
            continue;
        }
        counts[l] += 1;
        let m = h.get(i);
        dev[l - 1] = dev[l - 1].max(frobenius(&(&m - &labeling.k[l - 1])));
        sq[l - 1] += m.norm_squared();
        sums[l - 1] += m;
    }
    let mut std = vec![0.0; count];
    let mut notes = Vec::new();
    for c in 0..count {
        let nc = counts[c + 1];
        if nc == 0 {
            notes.push(format!("component {} has no interior nodes", c + 1));
            continue;
        }
        let mean = &sums[c] / nc as f64;
        std[c] = (sq[c] / nc as f64 - mean.norm_squared()).max(0.0).sqrt();
    }
    if labeling.theta[0] == 0.0 {
        notes.push("Ω₀ is empty: the coincident set covers the whole cell".into());
    } else if lap_res.is_none() {
        notes.push("Ω₀ has no interior nodes".into());
    }
    Ok(VerificationReport {
        hessian_deviation: dev,
        laplacian_residual: lap_res,
        load_balance_residual: labeling.load_balance_residual(),
        hessian_std: std,
        interior_counts: counts,
        notes,
    })
}

/// Largest relative deviation of the normalised Hessian `H/(f − p)` from
/// `−(1 − θ) Q/Tr Q` over interior inclusion nodes of a single-target labeling.
pub fn normalized_hessian_deviation(sol: &VISolution, labeling: &EInclusionLabeling) -> Result<f64, EincError> {
    if labeling.k.len() != 1 {
        return Err(EincError::Invalid("normalisation needs exactly one target".into()));
    }
    let q = &labeling.k[0];
    let p = q.trace();
    let theta = labeling.total_fraction();
    let target = q * (-(1.0 - theta) / p);
    let scale = 1.0 / (sol.f - p);
    let h = hessian(&sol.u)?;
    let grid = sol.grid();
    let mut worst: f64 = 0.0;
    for i in 0..grid.len() {
        if labeling.labels[i] != 1 || !full_neighborhood(grid, i).iter().all(|&j| labeling.labels[j] == 1) {
            continue;
        }
        worst = worst.max(frobenius(&(h.get(i) * scale - &target)));
    }
    Ok(worst / frobenius(&target))
}

/// Face-adjacent connected components. With `periodic`, faces across the cell
/// boundary connect. Returns one label per node (`usize::MAX` off the mask)
/// and the component count.
pub fn connected_components(grid: &PeriodicGrid, mask: &Mask, periodic: bool) -> (Vec<usize>, usize) {
    let mut comp = vec![usize::MAX; grid.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..grid.len() {
        if !mask.get(start) || comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for axis in 0..grid.dim() {
                let c = grid.coord(i, axis);
                let last = grid.shape()[axis] - 1;
                for d in [-1isize, 1] {
                    if !periodic && ((d < 0 && c == 0) || (d > 0 && c == last)) {
                        continue;
                    }
                    let j = grid.shift(i, axis, d);
                    if mask.get(j) && comp[j] == usize::MAX {
                        comp[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        next += 1;
    }
    (comp, next)
}

pub fn count_components(grid: &PeriodicGrid, mask: &Mask) -> usize {
    connected_components(grid, mask, true).1
}

/// Euler characteristic of the union of closed voxels (pixels in 2D) in the
/// cell, without periodic identification.
pub fn euler_characteristic(grid: &PeriodicGrid, mask: &Mask) -> i64 {
    let n = grid.dim();
    let shape = grid.shape();
    // Cells of every dimension are indexed by doubled coordinates on a
    // (2N+1)^n lattice: odd entries mark the open directions.
    let ext: Vec<usize> = shape.iter().map(|&s| 2 * s + 1).collect();
    let total: usize = ext.iter().product();
    let mut present = vec![false; total];
    let flat = |c: &[usize]| c.iter().zip(&ext).fold(0usize, |acc, (&v, &e)| acc * e + v);
    for i in 0..grid.len() {
        if !mask.get(i) {
            continue;
        }
        let base: Vec<usize> = grid.multi_index(i).iter().map(|&c| 2 * c + 1).collect();
        let mut offs = vec![-1isize; n];
        loop {
            let c: Vec<usize> = base.iter().zip(&offs).map(|(&b, &o)| (b as isize + o) as usize).collect();
            present[flat(&c)] = true;
            let mut k = 0;
            while k < n {
                offs[k] += 1;
                if offs[k] <= 1 {
                    break;
                }
                offs[k] = -1;
                k += 1;
            }
            if k == n {
                break;
            }
        }
    }
    let mut chi = 0i64;
    let mut c = vec![0usize; n];
    for idx in 0..total {
        let mut rem = idx;
        for k in (0..n).rev() {
            c[k] = rem % ext[k];
            rem /= ext[k];
        }
        if present[idx] {
            let dim = c.iter().filter(|&&v| v % 2 == 1).count();
            chi += if dim % 2 == 0 { 1 } else { -1 };
        }
    }
    chi
}

/// One nonperiodic component with Euler characteristic 1 whose complement in
/// the cell is connected: no handles and no cavities.
pub fn is_simply_connected(grid: &PeriodicGrid, mask: &Mask) -> bool {
    let (_, parts) = connected_components(grid, mask, false);
    if parts != 1 {
        return false;
    }
    let (_, holes) = connected_components(grid, &mask.complement(), false);
    holes <= 1 && euler_characteristic(grid, mask) == 1
}

/// Sub-cell free-boundary points of a 2D coincident set.
///
/// Along each grid direction leaving the mask, `sqrt(u − φ)` grows linearly
/// with distance from the free boundary; the zero of the line through the
/// first two outside nodes is the boundary location.
pub fn boundary_points(sol: &VISolution, mask: &Mask) -> Vec<DVector<f64>> {
    let grid = sol.grid();
    let slack = sol.slack();
    let root = |i: usize| slack[i].max(0.0).sqrt();
    let mut pts = Vec::new();
    for i in 0..grid.len() {
        if !mask.get(i) {
            continue;
        }
        let xi = grid.point(i);
        for axis in 0..grid.dim() {
            let step = grid.lattice().basis_vector(axis) / grid.shape()[axis] as f64;
            for d in [-1isize, 1] {
                let j = grid.shift(i, axis, d);
                if mask.get(j) {
                    continue;
                }
                let j2 = grid.shift(j, axis, d);
                let (w1, w2) = (root(j), root(j2));
                // Distance from node j back towards i, in units of one step.
                let back = if w2 > w1 && !mask.get(j2) { (w1 / (w2 - w1)).clamp(0.0, 1.0) } else { 0.5 };
                let t = 1.0 - back;
                pts.push(&xi + &step * (d as f64 * t));
            }
        }
    }
    pts
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircleFit {
    pub center: DVector<f64>,
    pub radius: f64,
    /// `max |r_k − R| / R`.
    pub max_relative_deviation: f64,
}

/// Algebraic least-squares circle fit.
pub fn fit_circle(points: &[DVector<f64>]) -> Option<CircleFit> {
    if points.len() < 3 || points[0].len() != 2 {
        return None;
    }
    // x² + y² + D x + E y + F = 0
    let m = points.len();
    let a = DMatrix::from_fn(m, 3, |r, c| match c {
        0 => points[r][0],
        1 => points[r][1],
        _ => 1.0,
    });
    let b = DVector::from_fn(m, |r, _| -(points[r][0].powi(2) + points[r][1].powi(2)));
    let sol = (a.transpose() * &a).lu().solve(&(a.transpose() * b))?;
    let center = DVector::from_vec(vec![-sol[0] / 2.0, -sol[1] / 2.0]);
    let r2 = center.norm_squared() - sol[2];
    if !(r2 > 0.0) {
        return None;
    }
    let radius = r2.sqrt();
    let dev = points.iter().map(|p| ((p - &center).norm() - radius).abs()).fold(0.0, f64::max) / radius;
    Some(CircleFit { center, radius, max_relative_deviation: dev })
}

/// `4π A / P²` of the polygon through the points sorted by angle about their centroid.
pub fn isoperimetric_ratio(points: &[DVector<f64>]) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let m = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / m;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / m;
    let mut sorted: Vec<(f64, f64, f64)> =
        points.iter().map(|p| ((p[1] - cy).atan2(p[0] - cx), p[0], p[1])).collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut area = 0.0;
    let mut perim = 0.0;
    for k in 0..sorted.len() {
        let (_, x0, y0) = sorted[k];
        let (_, x1, y1) = sorted[(k + 1) % sorted.len()];
        area += x0 * y1 - x1 * y0;
        perim += ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    }
    let area = 0.5 * area.abs();
    Some(4.0 * std::f64::consts::PI * area / (perim * perim))
}

/// Result of [`solve_for_theta`].
#[derive(Debug, Clone)]
pub struct FractionSearch {
    pub f: f64,
    pub solution: VISolution,
    pub labeling: EInclusionLabeling,
    pub solves: usize,
}

/// Finds a load whose coincident set has total fraction `target` within one
/// cell fraction `1/N_min`.
///
/// The coincident set grows with `f`, so the search is a bisection on `f`.
/// With a single target matrix the first guess is [`load_for_theta`].
pub fn solve_for_theta(
    phi: &ScalarField,
    k: &[DMatrix<f64>],
    target: f64,
    opts: &SolveOptions,
    a: f64,
    tol_q: Option<f64>,
) -> Result<FractionSearch, EincError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(EincError::Invalid(format!("target fraction must lie in (0, 1) (got {target})")));
    }
    let grid = phi.grid();
    let tol = 1.0 / grid.min_resolution() as f64;
    let mut solves = 0;
    let mut run = |f: f64| -> Result<(VISolution, EInclusionLabeling), EincError> {
        solves += 1;
        let sol = solve_periodic(grid, phi, f, opts)?;
        let mask = extract_coincident(&sol, a);
        let h = hessian(&sol.u)?;
        let lab = label_components(&mask, &h, k, tol_q, f)?;
        Ok((sol, lab))
    };
    let mut f = if k.len() == 1 { load_for_theta(&k[0], target)? } else { 1.0 };
    let (mut lo, mut hi): (Option<f64>, Option<f64>) = (None, None);
    let mut best: Option<(f64, VISolution, EInclusionLabeling)> = None;
    for _ in 0..60 {
        let (sol, lab) = run(f)?;
        let theta = lab.total_fraction();
        let err = theta - target;
        let closer = best.as_ref().is_none_or(|b| err.abs() < (b.2.total_fraction() - target).abs());
        if closer {
            best = Some((f, sol, lab));
        }
        if err.abs() < tol {
            break;
        }
        if err < 0.0 {
            lo = Some(f);
        } else {
            hi = Some(f);
        }
        f = match (lo, hi) {
            (Some(l), Some(h)) => 0.5 * (l + h),
            (Some(l), None) => 2.0 * l,
            (None, Some(h)) => 0.5 * h,
            (None, None) => unreachable!(),
        };
        if let (Some(l), Some(h)) = (lo, hi) {
            if h - l < 1e-12 * h {
                break;
            }
        }
    }
    let (f, solution, labeling) = best.expect("at least one solve ran");
    let miss = (labeling.total_fraction() - target).abs();
    if miss >= tol {
        return Err(EincError::TargetUnreachable {
            target,
            reason: format!("closest fraction {} at f = {f}", labeling.total_fraction()),
        });
    }
    Ok(FractionSearch { f, solution, labeling, solves })
}
