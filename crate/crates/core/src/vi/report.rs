//! Pointwise residuals of the discrete complementarity system.

use super::{Stencil, VISolution};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComplementarityReport {
    /// `max |min(−Δu + f, u − φ)|`.
    pub max_complementarity: f64,
    /// `max (−(−Δu + f))⁺` outside the free-boundary band.
    pub max_laplacian_violation: f64,
    /// `max (φ − u)⁺`.
    pub max_negative_slack: f64,
    /// Nodes left out of the Laplacian violation because they touch the free boundary.
    pub band_nodes: usize,
}

impl ComplementarityReport {
    pub fn within(&self, tol: f64) -> bool {
        self.max_complementarity <= tol && self.max_laplacian_violation <= tol && self.max_negative_slack <= tol
    }
}

/// Residuals of `−Δ_h u + f ≥ 0`, `u ≥ φ` and their complementarity.
///
/// Contact is decided with the extraction-style threshold `1e-9·max(1, max|φ|)`;
/// nodes whose stencil reaches across a contact change form the excluded band.
pub fn complementarity_report(sol: &VISolution) -> ComplementarityReport {
    let grid = sol.grid();
    let stencil = match Stencil::new(grid) {
        Ok(s) => s,
        Err(_) => return ComplementarityReport::default(),
    };
    let u = sol.u.values();
    let phi = sol.obstacle_field.values();
    let fixed = sol.fixed.as_ref().map(|m| m.values());
    let scale = sol.obstacle_field.max_abs().max(1.0);
    let contact: Vec<bool> = u.iter().zip(phi).map(|(a, b)| a - b <= 1e-9 * scale).collect();
    let mut rep = ComplementarityReport::default();
    for i in 0..grid.len() {
        if fixed.is_some_and(|m| m[i]) {
            continue;
        }
        let lap_res = stencil.apply(u, i) + sol.f;
        let slack = u[i] - phi[i];
        rep.max_complementarity = rep.max_complementarity.max(lap_res.min(slack).abs());
        rep.max_negative_slack = rep.max_negative_slack.max(-slack);
        let base = 2 * stencil.n * i;
        let band = stencil.neighbors[base..base + 2 * stencil.n].iter().any(|&j| contact[j] != contact[i]);
        if band {
            rep.band_nodes += 1;
        } else {
            rep.max_laplacian_violation = rep.max_laplacian_violation.max(-lap_res);
        }
    }
    rep.max_negative_slack = rep.max_negative_slack.max(0.0);
    rep.max_laplacian_violation = rep.max_laplacian_violation.max(0.0);
    rep
}
