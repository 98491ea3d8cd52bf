//! Obstacle problem on a ball with zero boundary values and no load.

use super::{psor, SolveError, SolveOptions, VISolution};
use crate::lattice::{BravaisLattice, Mask, PeriodicGrid, ScalarField};
use crate::obstacle::Obstacle;

#[derive(Debug, Clone)]
pub struct BallProblem {
    pub radius: f64,
    pub obstacle: Obstacle,
    pub grid: PeriodicGrid,
    pub phi: ScalarField,
    /// Nodes with `|x| ≥ r`, held at zero.
    pub boundary: Mask,
    /// Sampled radius beyond which `φ < 0`.
    pub r0: f64,
}

impl BallProblem {
    /// Grid of `resolution` nodes per axis on the box `[−r, r)ⁿ`.
    pub fn new(obstacle: Obstacle, radius: f64, resolution: usize) -> Result<Self, SolveError> {
        if !(radius > 0.0) {
            return Err(SolveError::InvalidObstacle(format!("radius must be positive (got {radius})")));
        }
        let dim = obstacle.dim();
        let lattice = BravaisLattice::cubic(dim, 2.0 * radius)?;
        let grid = PeriodicGrid::new(lattice, &vec![resolution; dim])?.with_origin(&vec![-radius; dim]);
        let phi = obstacle
            .sample(&grid)
            .map_err(|e| SolveError::InvalidObstacle(e.to_string()))?;
        let mut boundary = Mask::empty(&grid);
        let mut reach: f64 = 0.0;
        for i in 0..grid.len() {
            let r = grid.point(i).norm();
            if r >= radius * (1.0 - 1e-12) {
                boundary.set(i, true);
            }
            if phi.values()[i] >= 0.0 {
                reach = reach.max(r);
            }
        }
        let r0 = if phi.max() >= 0.0 { reach + grid.min_spacing() } else { 0.0 };
        if r0 >= radius {
            return Err(SolveError::InvalidObstacle(format!(
                "obstacle is nonnegative out to radius {r0:.4}, beyond the ball radius {radius}"
            )));
        }
        Ok(Self { radius, obstacle, grid, phi, boundary, r0 })
    }
}

/// Minimiser of `½ Σ |∇u|²` over `u ≥ φ` with `u = 0` on and outside the sphere.
pub fn solve_dirichlet_ball(problem: &BallProblem, opts: &SolveOptions) -> Result<VISolution, SolveError> {
    psor(&problem.grid, &problem.phi, 0.0, Some(&problem.boundary), opts)
}
