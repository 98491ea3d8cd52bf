//! Discrete obstacle problem: minimise `½|∇u|² + f u` over `u ≥ φ`.
//!
//! The discrete energy is
//! `E(u) = |cell| [ ½ Σ_edges ((u₊ − u)/h)² + f Σ u ]`
//! where `|cell|` is the node volume. We minimise `½uᵀAu + f·1ᵀu` with `A`
//! positive semi-definite; the usual stiffness matrix `K` is `−A`.

mod ball;
mod oracle;
mod report;

use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{GridError, Mask, PeriodicGrid, ScalarField};

pub use ball::{solve_dirichlet_ball, BallProblem};
pub use oracle::{oracle_qp_solve, oracle_qp_solve_fixed, ORACLE_NODE_BUDGET};
pub use report::{complementarity_report, ComplementarityReport};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("load f must be positive (got {0})")]
    NonpositiveLoad(f64),
    #[error("solver stopped after {} sweeps without meeting the tolerance", .0.iterations)]
    NotConverged(Box<VISolution>),
    #[error("invalid obstacle: {0}")]
    InvalidObstacle(String),
    #[error("problem has {nodes} nodes; the exact solver accepts at most {budget}")]
    TooLarge { nodes: usize, budget: usize },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("obstacle field does not live on the solver grid")]
    GridMismatch,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("exact solver failed: {0}")]
    Oracle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Lexicographic,
    RedBlack,
}

/// Starting iterate; every choice is projected onto `u ≥ φ`.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `max(φ, mean φ)`; `max(φ, 0)` when boundary nodes are pinned.
    Default,
    Obstacle,
    /// The constant `max φ`.
    MaxObstacle,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Stop once a sweep changes the energy by less than this fraction of it.
    pub tol_energy: f64,
    /// ...and no node moved by more than this. `None` means `1e-11·max(1, max|φ|)`.
    pub tol_step: Option<f64>,
    pub max_iters: usize,
    pub omega: f64,
    pub sweep: Sweep,
    pub init: Init,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_energy: 1e-10,
            tol_step: None,
            max_iters: 200_000,
            omega: 1.5,
            sweep: Sweep::Lexicographic,
            init: Init::Default,
        }
    }
}

impl SolveOptions {
    /// Defaults with the relaxation factor that is optimal for the unconstrained
    /// Laplacian on this grid.
    pub fn tuned(grid: &PeriodicGrid) -> Self {
        Self { omega: optimal_omega(grid), ..Self::default() }
    }

    fn validate(&self) -> Result<(), SolveError> {
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(SolveError::InvalidOptions(format!("omega = {} is outside (0, 2)", self.omega)));
        }
        if !(self.tol_energy > 0.0) {
            return Err(SolveError::InvalidOptions("tol_energy must be positive".into()));
        }
        if let Some(t) = self.tol_step {
            if !(t > 0.0) {
                return Err(SolveError::InvalidOptions("tol_step must be positive".into()));
            }
        }
        if self.max_iters == 0 {
            return Err(SolveError::InvalidOptions("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// `2 / (1 + sin(π h))` with `h` the smallest relative step; the classical
/// optimum for Dirichlet problems, which is also close for periodic cells.
pub fn optimal_omega(grid: &PeriodicGrid) -> f64 {
    let n = grid.shape().iter().copied().max().unwrap_or(4) as f64;
    let w = 2.0 / (1.0 + (std::f64::consts::PI / n).sin());
    w.min(1.99)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VISolution {
    pub u: ScalarField,
    pub f: f64,
    pub obstacle_field: ScalarField,
    pub iterations: usize,
    pub final_energy: f64,
    pub residuals: ComplementarityReport,
    /// Energy after each sweep.
    pub energy_trace: Vec<f64>,
    /// Largest energy increase seen in any sweep (never positive beyond rounding).
    pub max_energy_increase: f64,
    pub converged: bool,
    /// Nodes held at zero (ball problems).
    pub fixed: Option<Mask>,
}

impl VISolution {
    pub fn grid(&self) -> &PeriodicGrid {
        self.u.grid()
    }

    /// `u − φ` per node.
    pub fn slack(&self) -> Vec<f64> {
        self.u.values().iter().zip(self.obstacle_field.values()).map(|(u, p)| u - p).collect()
    }
}

/// Discrete energy of `u` with load `f`.
pub fn discrete_energy(grid: &PeriodicGrid, u: &[f64], f: f64) -> f64 {
    let n = grid.dim();
    let inv_h2 = grid.inverse_spacing_sq();
    let mut dirichlet = 0.0;
    let mut load = 0.0;
    for i in 0..grid.len() {
        for k in 0..n {
            let d = u[grid.shift(i, k, 1)] - u[i];
            dirichlet += d * d * inv_h2[k];
        }
        load += u[i];
    }
    grid.node_volume() * (0.5 * dirichlet + f * load)
}

pub(crate) struct Stencil {
    pub n: usize,
    pub neighbors: Vec<usize>,
    pub inv_h2: Vec<f64>,
    pub diag: f64,
}

impl Stencil {
    pub fn new(grid: &PeriodicGrid) -> Result<Self, SolveError> {
        if !grid.lattice().is_orthogonal() {
            return Err(GridError::NonOrthogonal.into());
        }
        let inv_h2 = grid.inverse_spacing_sq();
        let diag = 2.0 * inv_h2.iter().sum::<f64>();
        Ok(Self { n: grid.dim(), neighbors: grid.neighbor_table(), inv_h2, diag })
    }

    #[inline]
    pub fn neighbor_sum(&self, u: &[f64], i: usize) -> f64 {
        let base = 2 * self.n * i;
        let mut s = 0.0;
        for k in 0..self.n {
            s += (u[self.neighbors[base + 2 * k]] + u[self.neighbors[base + 2 * k + 1]]) * self.inv_h2[k];
        }
        s
    }

    /// `(A u)_i`, the negative discrete Laplacian.
    #[inline]
    pub fn apply(&self, u: &[f64], i: usize) -> f64 {
        self.diag * u[i] - self.neighbor_sum(u, i)
    }

    /// Projected over-relaxed update of node `i`: new value and energy change per node volume.
    #[inline]
    fn relax(&self, u: &[f64], phi: f64, f: f64, omega: f64, i: usize) -> (f64, f64) {
        let ui = u[i];
        let g = self.diag * ui - self.neighbor_sum(u, i) + f;
        let z = ui - omega * g / self.diag;
        let new = if z > phi { z } else { phi };
        let d = new - ui;
        (new, d * g + 0.5 * d * d * self.diag)
    }
}

fn initial_iterate(init: &Init, phi: &[f64], fixed: Option<&[bool]>) -> Result<Vec<f64>, SolveError> {
    let mut u = match init {
        Init::Default if fixed.is_some() => phi.iter().map(|&p| p.max(0.0)).collect(),
        Init::Default => {
            let mean = phi.iter().sum::<f64>() / phi.len() as f64;
            phi.iter().map(|&p| p.max(mean)).collect::<Vec<_>>()
        }
        Init::Obstacle => phi.to_vec(),
        Init::MaxObstacle => {
            let m = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            vec![m; phi.len()]
        }
        Init::Given(v) => {
            if v.len() != phi.len() {
                return Err(SolveError::InvalidOptions(format!(
                    "initial iterate has {} values for {} nodes",
                    v.len(),
                    phi.len()
                )));
            }
            v.iter().zip(phi).map(|(&a, &p)| a.max(p)).collect()
        }
    };
    if let Some(mask) = fixed {
        for (i, &b) in mask.iter().enumerate() {
            if b {
                u[i] = 0.0;
            } else if u[i] < phi[i] {
                u[i] = phi[i];
            }
        }
    }
    Ok(u)
}

/// Projected SOR on the periodic grid with optional nodes pinned to zero.
pub(crate) fn psor(
    grid: &PeriodicGrid,
    phi: &ScalarField,
    f: f64,
    fixed: Option<&Mask>,
    opts: &SolveOptions,
) -> Result<VISolution, SolveError> {
    opts.validate()?;
    if phi.grid() != grid {
        return Err(SolveError::GridMismatch);
    }
    let stencil = Stencil::new(grid)?;
    let p = phi.values();
    let fixed_flags: Option<&[bool]> = fixed.map(|m| m.values());
    let mut u = initial_iterate(&opts.init, p, fixed_flags)?;
    let vol = grid.node_volume();
    let scale = phi.max_abs().max(1.0);
    let tol_step = opts.tol_step.unwrap_or(1e-11 * scale);

    let colors: Option<[Vec<usize>; 2]> = match opts.sweep {
        Sweep::Lexicographic => None,
        Sweep::RedBlack => {
            if let Some(axis) = grid.shape().iter().position(|&n| n % 2 == 1) {
                return Err(SolveError::InvalidOptions(format!(
                    "red-black sweeps need an even node count on every axis (axis {axis} has {})",
                    grid.shape()[axis]
                )));
            }
            let mut c: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
            for i in 0..grid.len() {
                if fixed_flags.is_some_and(|m| m[i]) {
                    continue;
                }
                let parity: usize = grid.multi_index(i).iter().sum::<usize>() % 2;
                c[parity].push(i);
            }
            Some(c)
        }
    };
    let free: Vec<usize> = (0..grid.len()).filter(|&i| !fixed_flags.is_some_and(|m| m[i])).collect();

    let mut energy = discrete_energy(grid, &u, f);
    let mut trace = Vec::new();
    let mut max_increase = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut scratch: Vec<(f64, f64)> = Vec::new();

    while iterations < opts.max_iters {
        iterations += 1;
        let mut delta = 0.0;
        let mut step: f64 = 0.0;
        match &colors {
            None => {
                for &i in &free {
                    let (new, de) = stencil.relax(&u, p[i], f, opts.omega, i);
                    step = step.max((new - u[i]).abs());
                    u[i] = new;
                    delta += de;
                }
            }
            Some(groups) => {
                for group in groups {
                    group
                        .par_iter()
                        .map(|&i| stencil.relax(&u, p[i], f, opts.omega, i))
                        .collect_into_vec(&mut scratch);
                    for (&i, &(new, de)) in group.iter().zip(&scratch) {
                        step = step.max((new - u[i]).abs());
                        u[i] = new;
                        delta += de;
                    }
                }
            }
        }
        delta *= vol;
        max_increase = max_increase.max(delta);
        energy += delta;
        trace.push(energy);
        let rel = if energy != 0.0 { delta.abs() / energy.abs() } else { delta.abs() };
        if rel <= opts.tol_energy && step <= tol_step {
            converged = true;
            break;
        }
    }

    let u_field = ScalarField::new(grid.clone(), u)?;
    let final_energy = discrete_energy(grid, u_field.values(), f);
    let mut sol = VISolution {
        u: u_field,
        f,
        obstacle_field: phi.clone(),
        iterations,
        final_energy,
        residuals: ComplementarityReport::default(),
        energy_trace: trace,
        max_energy_increase: max_increase,
        converged,
        fixed: fixed.cloned(),
    };
    sol.residuals = complementarity_report(&sol);
    if converged {
        Ok(sol)
    } else {
        Err(SolveError::NotConverged(Box::new(sol)))
    }
}

/// Minimiser of the periodic discrete energy over `u ≥ φ`.
pub fn solve_periodic(
    grid: &PeriodicGrid,
    obstacle_field: &ScalarField,
    f: f64,
    opts: &SolveOptions,
) -> Result<VISolution, SolveError> {
    if !(f > 0.0) || !f.is_finite() {
        return Err(SolveError::NonpositiveLoad(f));
    }
    psor(grid, obstacle_field, f, None, opts)
}
