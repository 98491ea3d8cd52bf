//! Exact small-problem solver by policy iteration on `min(Au + f, u − φ) = 0`.
//!
//! Each step fixes the contact set, solves the resulting linear system with a
//! dense LU factorisation, and re-chooses contact nodes from the residuals.
//! The contact set can never become empty because the residuals sum to `N f > 0`.

use nalgebra::{DMatrix, DVector};

use super::{complementarity_report, discrete_energy, ComplementarityReport, SolveError, Stencil, VISolution};
use crate::lattice::{Mask, PeriodicGrid, ScalarField};

pub const ORACLE_NODE_BUDGET: usize = 128;

/// Exact discrete minimiser for problems with at most [`ORACLE_NODE_BUDGET`] nodes.
pub fn oracle_qp_solve(grid: &PeriodicGrid, obstacle_field: &ScalarField, f: f64) -> Result<VISolution, SolveError> {
    if !(f > 0.0) || !f.is_finite() {
        return Err(SolveError::NonpositiveLoad(f));
    }
    solve(grid, obstacle_field, f, None)
}

/// As [`oracle_qp_solve`], with some nodes pinned to zero and `f ≥ 0`.
pub fn oracle_qp_solve_fixed(
    grid: &PeriodicGrid,
    obstacle_field: &ScalarField,
    f: f64,
    fixed: &Mask,
) -> Result<VISolution, SolveError> {
    if !(f >= 0.0) || !f.is_finite() {
        return Err(SolveError::NonpositiveLoad(f));
    }
    if fixed.count() == 0 && f == 0.0 {
        return Err(SolveError::NonpositiveLoad(f));
    }
    solve(grid, obstacle_field, f, Some(fixed))
}

fn solve(grid: &PeriodicGrid, phi: &ScalarField, f: f64, fixed: Option<&Mask>) -> Result<VISolution, SolveError> {
    let n = grid.len();
    if n > ORACLE_NODE_BUDGET {
        return Err(SolveError::TooLarge { nodes: n, budget: ORACLE_NODE_BUDGET });
    }
    if phi.grid() != grid {
        return Err(SolveError::GridMismatch);
    }
    let stencil = Stencil::new(grid)?;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        a[(i, i)] += stencil.diag;
        for k in 0..stencil.n {
            let w = stencil.inv_h2[k];
            a[(i, stencil.neighbors[2 * stencil.n * i + 2 * k])] -= w;
            a[(i, stencil.neighbors[2 * stencil.n * i + 2 * k + 1])] -= w;
        }
    }
    let p = phi.values();
    let pinned = |i: usize| fixed.is_some_and(|m| m.get(i));
    let mut active: Vec<bool> = (0..n).map(|i| !pinned(i)).collect();
    let mut u: DVector<f64>;
    let mut rounds = 0;
    loop {
        rounds += 1;
        if rounds > 4 * n + 10 {
            return Err(SolveError::Oracle("policy iteration did not settle".into()));
        }
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for i in 0..n {
            if pinned(i) {
                m[(i, i)] = 1.0;
            } else if active[i] {
                m[(i, i)] = 1.0;
                rhs[i] = p[i];
            } else {
                m.row_mut(i).copy_from(&a.row(i));
                rhs[i] = -f;
            }
        }
        u = m.lu().solve(&rhs).ok_or_else(|| SolveError::Oracle("singular policy system".into()))?;
        let g = &a * &u;
        let next: Vec<bool> = (0..n).map(|i| !pinned(i) && u[i] - p[i] <= g[i] + f).collect();
        if next == active {
            break;
        }
        active = next;
    }
    // Contact nodes sit exactly on the obstacle.
    for i in 0..n {
        if active[i] {
            u[i] = p[i];
        }
    }
    let values: Vec<f64> = u.iter().copied().collect();
    let u_field = ScalarField::new(grid.clone(), values)?;
    let mut sol = VISolution {
        final_energy: discrete_energy(grid, u_field.values(), f),
        u: u_field,
        f,
        obstacle_field: phi.clone(),
        iterations: rounds,
        residuals: ComplementarityReport::default(),
        energy_trace: Vec::new(),
        max_energy_increase: 0.0,
        converged: true,
        fixed: fixed.cloned(),
    };
    sol.residuals = complementarity_report(&sol);
    let scale = (phi.max_abs().max(1.0)) * stencil.diag.max(1.0);
    if !sol.residuals.within(1e-9 * scale) {
        return Err(SolveError::Oracle(format!("KKT residuals too large: {:?}", sol.residuals)));
    }
    Ok(sol)
}
