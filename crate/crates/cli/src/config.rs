//! Run configuration, read from TOML.
//!
//! Matrices are row-major arrays of arrays. Validation errors carry the dotted
//! key path of the offending entry.

use std::path::{Path, PathBuf};

use einc::obstacle::{Curvature, Obstacle, Piece, QuadraticPiece, Translations};
use einc::spectral::IsoTensor4;
use einc::tensor::Tensor4;
use einc::vi::{SolveOptions, Sweep};
use einc::{BravaisLattice, PeriodicGrid};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    pub grid: GridConfig,
    pub obstacle: ObstacleConfig,
    pub load: LoadConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub tasks: Vec<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homogenize: Option<HomogenizeConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// Lattice vectors, one per row.
    pub basis: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub shape: Vec<usize>,
    /// Put the cell centre at the origin instead of a corner.
    #[serde(default)]
    pub centered: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub pieces: Vec<PieceConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslationsConfig {
    Full,
    Range,
    None,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Matrix>,
    /// With `normal`, the curvature switches to `q_above` where `(x − d)·normal ≥ 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_above: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<f64>>,
    #[serde(default)]
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translations: Option<TranslationsConfig>,
    /// A flat piece `φ = constant`; excludes every other key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_theta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepConfig {
    Lexicographic,
    RedBlack,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Defaults to the optimal value for the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default = "default_sweep")]
    pub sweep: SweepConfig,
    #[serde(default = "default_tol_energy")]
    pub tol_energy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_step: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_sweep() -> SweepConfig {
    SweepConfig::RedBlack
}

fn default_tol_energy() -> f64 {
    1e-10
}

fn default_max_iters() -> usize {
    200_000
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            omega: None,
            sweep: default_sweep(),
            tol_energy: default_tol_energy(),
            tol_step: None,
            max_iters: default_max_iters(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_q: Option<f64>,
    /// Target Hessians; defaults to the distinct obstacle curvatures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<Matrix>>,
}

fn one() -> f64 {
    1.0
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self { a: 1.0, tol_q: None, k: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Verify,
    Homogenize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionConfig {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsoConfig {
    pub mu1: f64,
    #[serde(default)]
    pub mu2: f64,
    #[serde(default)]
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MaterialsConfig {
    /// `a1` fills the inclusion, `a2` the matrix phase.
    Conductivity { a1: Matrix, a2: Matrix },
    /// `l1` fills the inclusion, `l0` the matrix phase.
    Elastic { l1: IsoConfig, l0: IsoConfig },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogenizeConfig {
    /// Inclusion mask (PGM, or a JSON slice index in 3D). Without it the
    /// configured solve runs first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub materials: MaterialsConfig,
    #[serde(default)]
    pub fields: Vec<Matrix>,
    #[serde(default = "default_direction")]
    pub direction: DirectionConfig,
    #[serde(default = "yes")]
    pub numeric: bool,
    /// Target matrix for the closed form; defaults to `κ R I` of the mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Matrix>,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
}

fn default_direction() -> DirectionConfig {
    DirectionConfig::Lower
}

fn yes() -> bool {
    true
}

fn default_cg_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Multiplies `u`, `φ`, `f` and `K` before checking.
    #[serde(default = "one")]
    pub scale: f64,
    /// Complementarity residual relative to `max|φ|`.
    #[serde(default = "default_complementarity")]
    pub complementarity_tol: f64,
    /// Interior Hessian deviation relative to `‖K_i‖_F`.
    #[serde(default = "default_hessian")]
    pub hessian_tol: f64,
    /// Load balance relative to `f + Σ|Tr K_i|`, in units of `1/N_min`.
    #[serde(default = "default_balance")]
    pub balance_cells: f64,
}

fn default_complementarity() -> f64 {
    1e-6
}

fn default_hessian() -> f64 {
    0.05
}

fn default_balance() -> f64 {
    3.0
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            complementarity_tol: default_complementarity(),
            hessian_tol: default_hessian(),
            balance_cells: default_balance(),
        }
    }
}

/// Requested load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Load {
    F(f64),
    TargetTheta(f64),
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::config("<document>", e.to_string().trim().to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let key = if key == "." { "<document>".to_string() } else { key };
        CliError::config(key, e.into_inner().to_string().trim().to_string())
    })
}

fn to_matrix(key: &str, m: &Matrix, n: usize) -> Result<DMatrix<f64>, CliError> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(CliError::config(key, format!("expected a {n}x{n} matrix")));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::config(key, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| m[i][j]))
}

fn to_symmetric(key: &str, m: &Matrix, n: usize) -> Result<DMatrix<f64>, CliError> {
    let a = to_matrix(key, m, n)?;
    let asym = (&a - a.transpose()).amax();
    if asym > 1e-12 * a.amax().max(1.0) {
        return Err(CliError::config(key, format!("matrix must be symmetric (asymmetry {asym:e})")));
    }
    Ok(a)
}

fn to_vector(key: &str, v: &[f64], n: usize) -> Result<DVector<f64>, CliError> {
    if v.len() != n {
        return Err(CliError::config(key, format!("expected {n} entries, got {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

impl RunConfig {
    pub fn dim(&self) -> usize {
        self.lattice.basis.len()
    }

    fn validate(&self) -> Result<(), CliError> {
        let n = self.dim();
        if n == 0 {
            return Err(CliError::config("lattice.basis", "needs at least one vector"));
        }
        self.lattice()?;
        if self.grid.shape.len() != n {
            return Err(CliError::config("grid.shape", format!("expected {n} entries")));
        }
        self.grid()?;
        self.load()?;
        self.obstacle()?;
        self.targets()?;
        if !(self.extraction.a > 0.0) {
            return Err(CliError::config("extraction.a", "must be positive"));
        }
        if let Some(t) = self.extraction.tol_q {
            if !(t > 0.0) {
                return Err(CliError::config("extraction.tol_q", "must be positive"));
            }
        }
        self.solve_options(&self.grid()?)?;
        if let Some(h) = &self.homogenize {
            self.materials(h)?;
            for (i, f) in h.fields.iter().enumerate() {
                to_matrix(&format!("homogenize.fields[{i}]"), f, n)?;
            }
            if let Some(q) = &h.q {
                to_symmetric("homogenize.q", q, n)?;
            }
            if !(h.cg_tol > 0.0) {
                return Err(CliError::config("homogenize.cg_tol", "must be positive"));
            }
        } else if self.tasks.contains(&Task::Homogenize) {
            return Err(CliError::config("homogenize", "the homogenize task needs a [homogenize] table"));
        }
        if !(self.verify.scale > 0.0) {
            return Err(CliError::config("verify.scale", "must be positive"));
        }
        Ok(())
    }

    pub fn lattice(&self) -> Result<BravaisLattice, CliError> {
        BravaisLattice::new(&self.lattice.basis).map_err(|e| CliError::from_grid("lattice.basis", e))
    }

    pub fn grid(&self) -> Result<PeriodicGrid, CliError> {
        let lattice = self.lattice()?;
        let grid = if self.grid.centered {
            PeriodicGrid::centered(lattice, &self.grid.shape)
        } else {
            PeriodicGrid::new(lattice, &self.grid.shape)
        };
        grid.map_err(|e| CliError::from_grid("grid.shape", e))
    }

    pub fn load(&self) -> Result<Load, CliError> {
        match (self.load.f, self.load.target_theta) {
            (Some(f), None) if f > 0.0 && f.is_finite() => Ok(Load::F(f)),
            (Some(_), None) => Err(CliError::config("load.f", "must be positive and finite")),
            (None, Some(t)) if t > 0.0 && t < 1.0 => Ok(Load::TargetTheta(t)),
            (None, Some(_)) => Err(CliError::config("load.target_theta", "must lie strictly between 0 and 1")),
            _ => Err(CliError::config("load", "set exactly one of f and target_theta")),
        }
    }

    pub fn obstacle(&self) -> Result<Obstacle, CliError> {
        let n = self.dim();
        if self.obstacle.pieces.is_empty() {
            return Err(CliError::config("obstacle.pieces", "needs at least one piece"));
        }
        let mut pieces = Vec::with_capacity(self.obstacle.pieces.len());
        for (i, p) in self.obstacle.pieces.iter().enumerate() {
            let key = format!("obstacle.pieces[{i}]");
            if let Some(c) = p.constant {
                if p.q.is_some() || p.q_above.is_some() || p.normal.is_some() || p.d.is_some() || p.translations.is_some() {
                    return Err(CliError::config(&key, "a constant piece takes no other keys"));
                }
                if !c.is_finite() {
                    return Err(CliError::config(format!("{key}.constant"), "must be finite"));
                }
                pieces.push(Piece::Constant(c));
                continue;
            }
            let q = p.q.as_ref().ok_or_else(|| CliError::config(&key, "needs q or constant"))?;
            let q = to_symmetric(&format!("{key}.q"), q, n)?;
            let curvature = match (&p.q_above, &p.normal) {
                (None, None) => Curvature::Uniform(q),
                (Some(above), Some(normal)) => Curvature::Joined {
                    below: q,
                    above: to_symmetric(&format!("{key}.q_above"), above, n)?,
                    normal: to_vector(&format!("{key}.normal"), normal, n)?,
                },
                _ => return Err(CliError::config(&key, "q_above and normal go together")),
            };
            let center = match &p.d {
                Some(d) => to_vector(&format!("{key}.d"), d, n)?,
                None => DVector::zeros(n),
            };
            if !p.h.is_finite() {
                return Err(CliError::config(format!("{key}.h"), "must be finite"));
            }
            let translations = match p.translations.unwrap_or(TranslationsConfig::Full) {
                TranslationsConfig::Full => Translations::Full,
                TranslationsConfig::Range => Translations::Range,
                TranslationsConfig::None => Translations::None,
            };
            pieces.push(Piece::Quadratic(QuadraticPiece { curvature, center, offset: p.h, translations }));
        }
        Obstacle::new(pieces, Some(self.lattice()?), n).map_err(|e| CliError::from_obstacle("obstacle.pieces", e))
    }

    /// Target Hessians for labeling.
    pub fn targets(&self) -> Result<Vec<DMatrix<f64>>, CliError> {
        match &self.extraction.k {
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(i, m)| to_symmetric(&format!("extraction.k[{i}]"), m, self.dim()))
                .collect(),
            None => Ok(self.obstacle()?.curvatures()),
        }
    }

    pub fn solve_options(&self, grid: &PeriodicGrid) -> Result<SolveOptions, CliError> {
        let mut opts = SolveOptions::tuned(grid);
        if let Some(w) = self.solver.omega {
            if !(w > 0.0 && w < 2.0) {
                return Err(CliError::config("solver.omega", "must lie in (0, 2)"));
            }
            opts.omega = w;
        }
        opts.sweep = match self.solver.sweep {
            SweepConfig::Lexicographic => Sweep::Lexicographic,
            SweepConfig::RedBlack => Sweep::RedBlack,
        };
        if !(self.solver.tol_energy > 0.0) {
            return Err(CliError::config("solver.tol_energy", "must be positive"));
        }
        opts.tol_energy = self.solver.tol_energy;
        if let Some(t) = self.solver.tol_step {
            if !(t > 0.0) {
                return Err(CliError::config("solver.tol_step", "must be positive"));
            }
        }
        opts.tol_step = self.solver.tol_step;
        if self.solver.max_iters == 0 {
            return Err(CliError::config("solver.max_iters", "must be at least 1"));
        }
        opts.max_iters = self.solver.max_iters;
        Ok(opts)
    }

    pub fn materials(&self, h: &HomogenizeConfig) -> Result<Materials, CliError> {
        let n = self.dim();
        match &h.materials {
            MaterialsConfig::Conductivity { a1, a2 } => Ok(Materials::Conductivity {
                a1: to_symmetric("homogenize.materials.a1", a1, n)?,
                a2: to_symmetric("homogenize.materials.a2", a2, n)?,
            }),
            MaterialsConfig::Elastic { l1, l0 } => {
                let iso = |key: &str, c: &IsoConfig| {
                    IsoTensor4::new(n, c.mu1, c.mu2, c.lambda).map_err(|e| CliError::config(key, e.to_string()))
                };
                let l1 = iso("homogenize.materials.l1", l1)?;
                Ok(Materials::Elastic { l1: l1.tensor(), l0: iso("homogenize.materials.l0", l0)? })
            }
        }
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

#[derive(Debug, Clone)]
pub enum Materials {
    Conductivity { a1: DMatrix<f64>, a2: DMatrix<f64> },
    Elastic { l1: Tensor4, l0: IsoTensor4 },
}
