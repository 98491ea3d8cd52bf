//! Periodic cell problem `min ⨍ (∇v + F)·L(x)(∇v + F)` on the nodal grid.
//!
//! Multilinear elements span the grid cells; a cell with `k` of its `2ⁿ`
//! corners in `Ω` takes the blend `L₀ + (k/2ⁿ)(L₁ − L₀)`, so the inclusion
//! volume seen by the elements equals the node fraction. The linear system is
//! solved matrix-free by Jacobi-preconditioned conjugate gradients.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::HomogenizeError;
use crate::lattice::{GridError, PeriodicGrid};
use crate::spectral::CharacteristicFunction;
use crate::tensor::{matrix_basis, symmetric_basis, Tensor4};

#[derive(Debug, Clone, PartialEq)]
pub struct CellOptions {
    /// Stop when `‖r‖ ≤ rel_tol ‖b‖`.
    pub rel_tol: f64,
    /// Defaults to `10⁴ + 100·N_max`.
    pub max_iters: Option<usize>,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, max_iters: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSolution {
    /// `2J* = F·L^eF`.
    pub form: f64,
    /// `⨍ L(∇v + F)`.
    pub mean_flux: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeBasis {
    /// `n(n+1)/2` symmetric probes; the result acts on symmetric matrices only.
    Symmetric,
    /// All `n²` unit matrices.
    Full,
}

struct Fem {
    grid: PeriodicGrid,
    n: usize,
    m: usize,
    corners: usize,
    /// Element blend level `k` (corners inside `Ω`), indexed by lower-corner node.
    level: Vec<u8>,
    /// Blended tensors per level, `(m n) × (m n)`.
    tensors: Vec<DMatrix<f64>>,
    /// Local stiffness per level, `(m 2ⁿ) × (m 2ⁿ)`, per unit element volume.
    stiffness: Vec<DMatrix<f64>>,
    /// Gauss weights and gradient operators `(m n) × (m 2ⁿ)`.
    gauss: Vec<(f64, DMatrix<f64>)>,
}

impl Fem {
    fn new(chi: &CharacteristicFunction, l1: &DMatrix<f64>, l0: &DMatrix<f64>, m: usize) -> Result<Self, HomogenizeError> {
        let grid = chi.grid().clone();
        if !grid.lattice().is_orthogonal() {
            return Err(GridError::NonOrthogonal.into());
        }
        let n = grid.dim();
        if l1.nrows() != m * n || l0.nrows() != m * n || !l1.is_square() || !l0.is_square() {
            return Err(HomogenizeError::Dimension(format!("tensors must be {0}x{0}", m * n)));
        }
        let corners = 1usize << n;
        if m * corners > 24 {
            return Err(HomogenizeError::Dimension(format!("cell problems support n ≤ 3, got {n}")));
        }
        let h: Vec<f64> = (0..n).map(|k| grid.spacing(k)).collect();
        let g = 0.5 / 3f64.sqrt();
        let mut gauss = Vec::with_capacity(corners);
        for gp in 0..corners {
            let xi: Vec<f64> = (0..n).map(|k| if gp >> k & 1 == 1 { 0.5 + g } else { 0.5 - g }).collect();
            let mut b = DMatrix::zeros(m * n, m * corners);
            for c in 0..corners {
                for i in 0..n {
                    let mut d = 1.0;
                    for k in 0..n {
                        let hi = c >> k & 1 == 1;
                        d *= if k == i {
                            if hi { 1.0 / h[k] } else { -1.0 / h[k] }
                        } else if hi {
                            xi[k]
                        } else {
                            1.0 - xi[k]
                        };
                    }
                    for p in 0..m {
                        b[(p * n + i, c * m + p)] = d;
                    }
                }
            }
            gauss.push((1.0 / corners as f64, b));
        }
        let tensors: Vec<DMatrix<f64>> = (0..=corners)
            .map(|k| {
                let s = k as f64 / corners as f64;
                l0 + (l1 - l0) * s
            })
            .collect();
        let stiffness = tensors
            .iter()
            .map(|l| gauss.iter().fold(DMatrix::zeros(m * corners, m * corners), |acc, (w, b)| acc + b.transpose() * l * b * *w))
            .collect();
        let mask = chi.mask();
        let level = (0..grid.len())
            .map(|e| (0..corners).filter(|&c| mask.get(corner_node(&grid, e, c))).count() as u8)
            .collect();
        Ok(Self { grid, n, m, corners, level, tensors, stiffness, gauss })
    }

    fn gather(&self, x: &[f64], e: usize) -> DVector<f64> {
        let m = self.m;
        let mut local = DVector::zeros(m * self.corners);
        for c in 0..self.corners {
            let node = corner_node(&self.grid, e, c);
            for p in 0..m {
                local[c * m + p] = x[node * m + p];
            }
        }
        local
    }

    /// Element owning `node` as corner `c`.
    fn element_of(&self, node: usize, c: usize) -> usize {
        let mut e = node;
        for k in 0..self.n {
            if c >> k & 1 == 1 {
                e = self.grid.shift(e, k, -1);
            }
        }
        e
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let m = self.m;
        let width = m * self.corners;
        y.par_chunks_mut(m).enumerate().for_each(|(node, out)| {
            let mut local = [0.0f64; 24];
            out.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..self.corners {
                let e = self.element_of(node, c);
                for c2 in 0..self.corners {
                    let nb = corner_node(&self.grid, e, c2);
                    local[c2 * m..(c2 + 1) * m].copy_from_slice(&x[nb * m..(nb + 1) * m]);
                }
                let k = &self.stiffness[self.level[e] as usize];
                for p in 0..m {
                    let row = c * m + p;
                    out[p] += (0..width).map(|j| k[(row, j)] * local[j]).sum::<f64>();
                }
            }
        });
    }

    fn diagonal(&self) -> Vec<f64> {
        let m = self.m;
        (0..self.grid.len() * m)
            .into_par_iter()
            .map(|dof| {
                let (node, p) = (dof / m, dof % m);
                (0..self.corners)
                    .map(|c| self.stiffness[self.level[self.element_of(node, c)] as usize][(c * m + p, c * m + p)])
                    .sum()
            })
            .collect()
    }

    /// Global load and a magnitude scale for rounding-level cancellation.
    fn load(&self, f: &DVector<f64>) -> (Vec<f64>, f64) {
        let m = self.m;
        // b_ℓ = −Σ_gp w Bᵀ L_ℓ F
        let per_level: Vec<DVector<f64>> = self
            .tensors
            .iter()
            .map(|l| {
                let flux = l * f;
                self.gauss.iter().fold(DVector::zeros(m * self.corners), |acc, (w, b)| acc - b.transpose() * &flux * *w)
            })
            .collect();
        let scale = per_level.iter().map(|v| v.norm()).fold(0.0, f64::max) * (self.grid.len() as f64).sqrt();
        let mut out = vec![0.0; self.grid.len() * m];
        out.par_chunks_mut(m).enumerate().for_each(|(node, slot)| {
            for c in 0..self.corners {
                let e = self.element_of(node, c);
                let v = &per_level[self.level[e] as usize];
                for p in 0..m {
                    slot[p] += v[c * m + p];
                }
            }
        });
        (out, scale)
    }

    /// `(⨍ (G + F)·L(G + F), ⨍ L(G + F))` for nodal values `x`.
    fn averages(&self, x: &[f64], f: &DVector<f64>) -> (f64, DVector<f64>) {
        let mn = self.m * self.n;
        let (energy, flux) = (0..self.grid.len())
            .into_par_iter()
            .map(|e| {
                let local = self.gather(x, e);
                let l = &self.tensors[self.level[e] as usize];
                let mut en = 0.0;
                let mut fl = DVector::zeros(mn);
                for (w, b) in &self.gauss {
                    let g = b * &local + f;
                    let lg = l * &g;
                    en += w * g.dot(&lg);
                    fl += lg * *w;
                }
                (en, fl)
            })
            .reduce(|| (0.0, DVector::zeros(mn)), |a, b| (a.0 + b.0, a.1 + b.1));
        let count = self.grid.len() as f64;
        (energy / count, flux / count)
    }

    fn solve(&self, f: &DVector<f64>, opts: &CellOptions) -> Result<(Vec<f64>, usize, f64), HomogenizeError> {
        let dofs = self.grid.len() * self.m;
        let (b, scale) = self.load(f);
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = vec![0.0; dofs];
        if bnorm <= 1e-13 * scale {
            return Ok((x, 0, 0.0));
        }
        let max_iters = opts.max_iters.unwrap_or(10_000 + 100 * self.grid.shape().iter().copied().max().unwrap_or(1));
        let inv_diag: Vec<f64> = self.diagonal().into_iter().map(|d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();
        let mut r = b;
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; dofs];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut rel = 1.0;
        for it in 1..=max_iters {
            self.apply(&p, &mut ap);
            let pap: f64 = p.par_iter().zip(ap.par_iter()).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                return Err(HomogenizeError::NotConverged { iterations: it, residual: rel });
            }
            let alpha = rz / pap;
            x.par_iter_mut().zip(p.par_iter()).for_each(|(xi, pi)| *xi += alpha * pi);
            r.par_iter_mut().zip(ap.par_iter()).for_each(|(ri, api)| *ri -= alpha * api);
            rel = r.par_iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
            if rel <= opts.rel_tol {
                return Ok((x, it, rel));
            }
            z.par_iter_mut().zip(r.par_iter().zip(inv_diag.par_iter())).for_each(|(zi, (ri, di))| *zi = ri * di);
            let rz_new: f64 = r.par_iter().zip(z.par_iter()).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        }
        Err(HomogenizeError::NotConverged { iterations: max_iters, residual: rel })
    }

    fn probe(&self, f: &DVector<f64>, opts: &CellOptions) -> Result<CellSolution, HomogenizeError> {
        let (x, iterations, residual) = self.solve(f, opts)?;
        let (form, flux) = self.averages(&x, f);
        let mean_flux = DMatrix::from_row_slice(self.m, self.n, flux.as_slice());
        Ok(CellSolution { form, mean_flux, iterations, residual })
    }
}

fn corner_node(grid: &PeriodicGrid, e: usize, c: usize) -> usize {
    let mut node = e;
    for k in 0..grid.dim() {
        if c >> k & 1 == 1 {
            node = grid.shift(node, k, 1);
        }
    }
    node
}

fn flatten(f: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(f.nrows() * f.ncols(), (0..f.nrows()).flat_map(|p| (0..f.ncols()).map(move |i| f[(p, i)])))
}

/// `F·L^eF` from the cell problem with `L₁` on `Ω` and `L₀` elsewhere.
pub fn effective_form_numeric(
    chi: &CharacteristicFunction,
    l1: &Tensor4,
    l0: &Tensor4,
    f: &DMatrix<f64>,
    opts: &CellOptions,
) -> Result<CellSolution, HomogenizeError> {
    let n = chi.grid().dim();
    if f.nrows() != n || f.ncols() != n {
        return Err(HomogenizeError::Dimension(format!("F must be {n}x{n}")));
    }
    Fem::new(chi, l1.matrix(), l0.matrix(), n)?.probe(&flatten(f), opts)
}

/// `L^e` assembled from probes: `L^e E_a = ⨍ L(∇v_a + E_a)` for each basis
/// matrix `E_a`. With [`ProbeBasis::Symmetric`] the result vanishes on skew
/// matrices.
pub fn effective_tensor_numeric(
    chi: &CharacteristicFunction,
    l1: &Tensor4,
    l0: &Tensor4,
    basis: ProbeBasis,
    opts: &CellOptions,
) -> Result<Tensor4, HomogenizeError> {
    let n = chi.grid().dim();
    let fem = Fem::new(chi, l1.matrix(), l0.matrix(), n)?;
    let probes = match basis {
        ProbeBasis::Symmetric => symmetric_basis(n),
        ProbeBasis::Full => matrix_basis(n),
    };
    let mut rep = DMatrix::zeros(n * n, n * n);
    for e in &probes {
        let sol = fem.probe(&flatten(e), opts)?;
        rep += flatten(&sol.mean_flux) * flatten(e).transpose();
    }
    Ok(Tensor4::from_matrix(n, rep)?)
}

/// Effective conductivity for `A₁` on `Ω` and `A₀` elsewhere (scalar potential).
pub fn effective_conductivity_numeric(
    chi: &CharacteristicFunction,
    a1: &DMatrix<f64>,
    a0: &DMatrix<f64>,
    opts: &CellOptions,
) -> Result<DMatrix<f64>, HomogenizeError> {
    let n = chi.grid().dim();
    let fem = Fem::new(chi, a1, a0, 1)?;
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        let sol = fem.probe(&e, opts)?;
        for i in 0..n {
            out[(i, j)] = sol.mean_flux[(0, i)];
        }
    }
    Ok(out)
}
