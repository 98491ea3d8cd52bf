use std::fs;
use std::path::{Path, PathBuf};

use einc::einclusion::{
    check_necessary_condition, extract_coincident, extraction_tolerance, label_components, predicted_theta,
    solve_for_theta, verify_einclusion, EInclusionLabeling,
};
use einc::homogenize::{
    effective_conductivity_numeric, effective_form_general, effective_tensor_closed, effective_tensor_numeric, hs_bound,
    trace_bounds, BoundDirection, BoundReport, CellOptions, HomogenizeError, ProbeBasis,
};
use einc::lattice::hessian;
use einc::spectral::{bitter_crum, r_matrix_q, CharacteristicFunction, IsoTensor4};
use einc::tensor::Tensor4;
use einc::vi::{complementarity_report, discrete_energy, solve_periodic, VISolution};
use einc::{Mask, PeriodicGrid, ScalarField};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::Value;

use crate::config::{DirectionConfig, HomogenizeConfig, Load, Materials, RunConfig, Task};
use crate::error::CliError;
use crate::io;

type Matrix = Vec<Vec<f64>>;

fn rows(m: &DMatrix<f64>) -> Matrix {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("summaries serialise")
}

/// Result of the configured solve.
pub struct Solved {
    pub grid: PeriodicGrid,
    pub sol: VISolution,
    pub coincident: Mask,
    pub labeling: Option<EInclusionLabeling>,
    pub solves: usize,
    pub warnings: Vec<String>,
}

pub fn run_solve(cfg: &RunConfig) -> Result<Solved, CliError> {
    let grid = cfg.grid()?;
    let phi = cfg.obstacle()?.sample(&grid).map_err(|e| CliError::from_obstacle("obstacle.pieces", e))?;
    let opts = cfg.solve_options(&grid)?;
    let k = cfg.targets()?;
    let (a, tol_q) = (cfg.extraction.a, cfg.extraction.tol_q);
    let mut warnings = Vec::new();
    match cfg.load()? {
        Load::TargetTheta(t) => {
            if k.is_empty() {
                return Err(CliError::config("extraction.k", "target_theta needs at least one target matrix"));
            }
            let s = solve_for_theta(&phi, &k, t, &opts, a, tol_q).map_err(|e| CliError::from_einc("load.target_theta", e))?;
            let coincident = extract_coincident(&s.solution, a);
            Ok(Solved { grid, sol: s.solution, coincident, labeling: Some(s.labeling), solves: s.solves, warnings })
        }
        Load::F(f) => {
            let sol = solve_periodic(&grid, &phi, f, &opts).map_err(|e| CliError::from_solve("solver", e))?;
            let coincident = extract_coincident(&sol, a);
            let labeling = if coincident.count() == grid.len() {
                warnings.push("degenerate: the coincident set fills the cell".to_string());
                None
            } else if k.is_empty() {
                warnings.push("no target matrices; labeling skipped".to_string());
                None
            } else {
                let h = hessian(&sol.u).map_err(|e| CliError::from_grid("grid", e))?;
                Some(label_components(&coincident, &h, &k, tol_q, f).map_err(|e| CliError::from_einc("extraction", e))?)
            };
            Ok(Solved { grid, sol, coincident, labeling, solves: 1, warnings })
        }
    }
}

#[derive(Debug, Serialize)]
struct SolverSummary {
    iterations: usize,
    solves: usize,
    converged: bool,
    final_energy: f64,
    max_complementarity: f64,
    max_laplacian_violation: f64,
    max_negative_slack: f64,
}

#[derive(Debug, Serialize)]
struct ThetaSummary {
    measured: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicted: Option<f64>,
    components: Vec<f64>,
    matrix_phase: f64,
}

#[derive(Debug, Serialize)]
struct NecessarySummary {
    min_eig: f64,
    satisfied: bool,
}

#[derive(Debug, Serialize)]
pub struct Check {
    name: String,
    passed: bool,
    value: f64,
    tolerance: f64,
}

#[derive(Debug, Serialize)]
pub struct VerifySummary {
    passed: bool,
    checks: Vec<Check>,
}

impl VerifySummary {
    fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

fn mask_stem(label: usize) -> String {
    format!("component_{label}")
}

fn mask_file(dir: &Path, stem: &str, dim: usize) -> PathBuf {
    dir.join(if dim <= 2 { format!("{stem}.pgm") } else { format!("{stem}.json") })
}

/// Builds a labeling from per-component masks.
fn labeling_from_masks(grid: &PeriodicGrid, k: &[DMatrix<f64>], masks: &[Mask], f: f64) -> Result<EInclusionLabeling, CliError> {
    let mut labels = vec![0usize; grid.len()];
    for (l, m) in masks.iter().enumerate() {
        for (i, &b) in m.values().iter().enumerate() {
            if b {
                if labels[i] != 0 {
                    return Err(CliError::Invariant(format!("node {i} lies in components {} and {}", labels[i], l + 1)));
                }
                labels[i] = l + 1;
            }
        }
    }
    let mut counts = vec![0usize; k.len() + 1];
    for &l in &labels {
        counts[l] += 1;
    }
    let theta: Vec<f64> = counts.iter().map(|&c| c as f64 / grid.len() as f64).collect();
    let p: Vec<f64> = k.iter().map(|q| q.trace()).collect();
    let weighted: f64 = p.iter().zip(&theta[1..]).map(|(p, t)| p * t).sum();
    let p0 = (theta[0] > 0.0).then(|| -weighted / theta[0]);
    Ok(EInclusionLabeling {
        grid: grid.clone(),
        labels,
        k: k.to_vec(),
        theta,
        p,
        p0,
        f,
        interior_nodes: 0,
        unmatched_interior: 0,
    })
}

/// Invariant checks on a solution against stored coincident and component masks.
fn check_invariants(
    cfg: &RunConfig,
    sol: &VISolution,
    k: &[DMatrix<f64>],
    stored_coincident: &Mask,
    stored_components: &[Mask],
    a: f64,
    tol_q: Option<f64>,
) -> Result<VerifySummary, CliError> {
    let grid = sol.grid();
    let mut checks = Vec::new();
    let rep = complementarity_report(sol);
    let worst = rep.max_complementarity.max(rep.max_laplacian_violation).max(rep.max_negative_slack);
    let tol = cfg.verify.complementarity_tol;
    checks.push(Check { name: "complementarity".into(), passed: worst <= tol * sol.f, value: worst / sol.f, tolerance: tol });

    let coincident = extract_coincident(sol, a);
    let differ = |x: &Mask, y: &Mask| x.values().iter().zip(y.values()).filter(|(a, b)| a != b).count();
    let d = differ(&coincident, stored_coincident);
    checks.push(Check { name: "coincident_mask".into(), passed: d == 0, value: d as f64, tolerance: 0.0 });

    if coincident.count() == grid.len() || k.is_empty() {
        return Ok(VerifySummary { passed: checks.iter().all(|c| c.passed), checks });
    }
    let h = hessian(&sol.u).map_err(|e| CliError::from_grid("grid", e))?;
    let relabeled = label_components(&coincident, &h, k, tol_q, sol.f);
    let mismatch = match &relabeled {
        Ok(lab) => (1..=k.len()).map(|l| differ(&lab.mask(l), &stored_components[l - 1])).sum::<usize>(),
        Err(_) => grid.len(),
    };
    checks.push(Check { name: "labeling".into(), passed: mismatch == 0, value: mismatch as f64, tolerance: 0.0 });

    let stored = labeling_from_masks(grid, k, stored_components, sol.f)?;
    let report = verify_einclusion(sol, &stored).map_err(|e| CliError::from_einc("verify", e))?;
    let htol = cfg.verify.hessian_tol;
    let k_norm = k.iter().map(|q| q.norm()).fold(0.0, f64::max);
    for (i, dev) in report.hessian_deviation.iter().enumerate() {
        let rel = dev / k_norm;
        checks.push(Check { name: format!("hessian_{}", i + 1), passed: rel <= htol, value: rel, tolerance: htol });
    }
    let nc = check_necessary_condition(k, stored.inclusion_fractions()).map_err(|e| CliError::from_einc("verify", e))?;
    checks.push(Check { name: "necessary_condition".into(), passed: nc.min_eig >= -1e-10, value: nc.min_eig, tolerance: -1e-10 });
    let denom = sol.f + stored.p.iter().map(|p| p.abs()).sum::<f64>();
    let balance = stored.load_balance_residual().abs() / denom;
    let btol = cfg.verify.balance_cells / grid.min_resolution() as f64;
    checks.push(Check { name: "load_balance".into(), passed: balance <= btol, value: balance, tolerance: btol });
    Ok(VerifySummary { passed: checks.iter().all(|c| c.passed), checks })
}

fn component_masks(lab: &EInclusionLabeling) -> Vec<Mask> {
    (1..=lab.k.len()).map(|l| lab.mask(l)).collect()
}

pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let solved = run_solve(cfg)?;
    fs::create_dir_all(out)?;
    let grid = &solved.grid;
    let shape = grid.shape().to_vec();
    let mut artifacts = Vec::new();
    let rel = |p: &Path| p.strip_prefix(out).unwrap_or(p).display().to_string();

    let u_path = out.join("u.csv");
    io::write_field(&u_path, &shape, solved.sol.u.values())?;
    artifacts.push(rel(&u_path));
    let phi_path = out.join("phi.csv");
    io::write_field(&phi_path, &shape, solved.sol.obstacle_field.values())?;
    artifacts.push(rel(&phi_path));
    artifacts.push(rel(&io::write_mask(out, "coincident", &shape, solved.coincident.values())?));

    let mut summary = serde_json::Map::new();
    if let Some(lab) = &solved.labeling {
        for (l, m) in component_masks(lab).iter().enumerate() {
            artifacts.push(rel(&io::write_mask(out, &mask_stem(l + 1), &shape, m.values())?));
        }
        artifacts.push(rel(&io::write_mask(out, "inclusion", &shape, lab.inclusion_mask().values())?));
        let predicted = if lab.k.len() == 1 { predicted_theta(&lab.k[0], lab.f).ok() } else { None };
        let theta = ThetaSummary {
            measured: lab.total_fraction(),
            predicted,
            components: lab.inclusion_fractions().to_vec(),
            matrix_phase: lab.theta[0],
        };
        summary.insert("theta".into(), to_value(&theta));
        let nc = check_necessary_condition(&lab.k, lab.inclusion_fractions()).map_err(|e| CliError::from_einc("extraction", e))?;
        summary.insert("necessary_condition".into(), to_value(&NecessarySummary { min_eig: nc.min_eig, satisfied: nc.satisfied }));
        summary.insert("load_balance_residual".into(), to_value(&lab.load_balance_residual()));
        summary.insert("targets".into(), to_value(&lab.k.iter().map(rows).collect::<Vec<_>>()));
    } else {
        let t = solved.coincident.fraction();
        let theta = ThetaSummary { measured: t, predicted: None, components: vec![], matrix_phase: 1.0 - t };
        summary.insert("theta".into(), to_value(&theta));
    }

    let res = &solved.sol.residuals;
    let solver = SolverSummary {
        iterations: solved.sol.iterations,
        solves: solved.solves,
        converged: solved.sol.converged,
        final_energy: solved.sol.final_energy,
        max_complementarity: res.max_complementarity,
        max_laplacian_violation: res.max_laplacian_violation,
        max_negative_slack: res.max_negative_slack,
    };
    summary.insert("solver".into(), to_value(&solver));
    summary.insert("f".into(), to_value(&solved.sol.f));
    summary.insert(
        "extraction".into(),
        serde_json::json!({
            "tolerance": extraction_tolerance(&solved.sol, cfg.extraction.a),
            "coincident_fraction": solved.coincident.fraction(),
        }),
    );

    let mut failure = None;
    if cfg.tasks.contains(&Task::Verify) {
        let k = solved.labeling.as_ref().map(|l| l.k.clone()).unwrap_or_default();
        let comps = solved.labeling.as_ref().map(component_masks).unwrap_or_default();
        let v = check_invariants(cfg, &solved.sol, &k, &solved.coincident, &comps, cfg.extraction.a, cfg.extraction.tol_q)?;
        if !v.passed {
            failure = Some(format!("verification failed: {}", v.failures().join(", ")));
        }
        summary.insert("verification".into(), to_value(&v));
    }
    if cfg.tasks.contains(&Task::Homogenize) {
        let h = cfg.homogenize.as_ref().expect("validated");
        let mask = solved.labeling.as_ref().map(|l| l.inclusion_mask()).unwrap_or_else(|| solved.coincident.clone());
        let chi = CharacteristicFunction::new(grid, mask).map_err(|e| CliError::from_spectral("homogenize", e))?;
        summary.insert("homogenization".into(), run_homogenize(cfg, h, &chi)?);
    }
    summary.insert("command".into(), Value::from("solve"));
    summary.insert("config".into(), to_value(cfg));
    summary.insert("warnings".into(), to_value(&solved.warnings));
    artifacts.push("summary.json".into());
    summary.insert("artifacts".into(), to_value(&artifacts));
    let value = Value::Object(summary);
    io::ensure_finite(&value, "summary")?;
    io::write_json(&out.join("summary.json"), &value)?;
    match failure {
        Some(msg) => Err(CliError::Invariant(msg)),
        None => Ok(value),
    }
}

fn read_stored_mask(path: &Path, grid: &PeriodicGrid) -> Result<Mask, CliError> {
    let (shape, values) = io::read_mask(path)?;
    let expect: Vec<usize> = if grid.dim() == 1 { vec![1, grid.shape()[0]] } else { grid.shape().to_vec() };
    if shape != expect {
        return Err(CliError::artifact(path, format!("shape {shape:?} does not match grid {:?}", grid.shape())));
    }
    Mask::new(grid, values).map_err(|e| CliError::artifact(path, e))
}

fn read_stored_field(path: &Path, grid: &PeriodicGrid, scale: f64) -> Result<ScalarField, CliError> {
    let (shape, values) = io::read_field(path)?;
    if shape != grid.shape() {
        return Err(CliError::artifact(path, format!("shape {shape:?} does not match grid {:?}", grid.shape())));
    }
    ScalarField::new(grid.clone(), values.into_iter().map(|v| v * scale).collect()).map_err(|e| CliError::artifact(path, e))
}

pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let grid = cfg.grid()?;
    let scale = cfg.verify.scale;
    let summary_path = out.join("summary.json");
    let text = fs::read_to_string(&summary_path).map_err(|e| CliError::artifact(&summary_path, e))?;
    let stored: Value = serde_json::from_str(&text).map_err(|e| CliError::artifact(&summary_path, e))?;
    let f = stored.get("f").and_then(Value::as_f64).ok_or_else(|| CliError::artifact(&summary_path, "missing f"))? * scale;

    let u = read_stored_field(&out.join("u.csv"), &grid, scale)?;
    let phi = read_stored_field(&out.join("phi.csv"), &grid, scale)?;
    let expected_phi = cfg.obstacle()?.sample(&grid).map_err(|e| CliError::from_obstacle("obstacle.pieces", e))?;
    let drift = phi.values().iter().zip(expected_phi.values()).map(|(a, b)| (a - scale * b).abs()).fold(0.0, f64::max);
    if drift > 1e-12 * scale * expected_phi.max_abs().max(1.0) {
        return Err(CliError::artifact(out.join("phi.csv"), "obstacle does not match the config"));
    }
    let coincident = read_stored_mask(&mask_file(out, "coincident", grid.dim()), &grid)?;
    let degenerate = coincident.count() == grid.len();
    let k: Vec<DMatrix<f64>> = if degenerate { vec![] } else { cfg.targets()?.into_iter().map(|q| q * scale).collect() };
    let components = (1..=k.len())
        .map(|l| read_stored_mask(&mask_file(out, &mask_stem(l), grid.dim()), &grid))
        .collect::<Result<Vec<_>, _>>()?;

    let mut sol = VISolution {
        final_energy: discrete_energy(&grid, u.values(), f),
        u,
        f,
        obstacle_field: phi,
        iterations: 0,
        residuals: Default::default(),
        energy_trace: vec![],
        max_energy_increase: 0.0,
        converged: true,
        fixed: None,
    };
    sol.residuals = complementarity_report(&sol);
    let tol_q = cfg.extraction.tol_q.map(|t| t * scale);
    let v = check_invariants(cfg, &sol, &k, &coincident, &components, cfg.extraction.a * scale, tol_q)?;
    let value = serde_json::json!({
        "command": "verify",
        "scale": scale,
        "degenerate": degenerate,
        "verification": to_value(&v),
    });
    io::ensure_finite(&value, "verification")?;
    io::write_json(&out.join("verify.json"), &value)?;
    if v.passed {
        Ok(value)
    } else {
        Err(CliError::Invariant(format!("verification failed: {}", v.failures().join(", "))))
    }
}

#[derive(Debug, Serialize)]
struct BitterCrumSummary {
    energy: f64,
    predicted: f64,
    relative_error: f64,
}

#[derive(Debug, Serialize)]
struct TraceBoundSummary {
    b1_lhs: f64,
    b1_rhs: f64,
    b1_gap: f64,
    b2_lhs: f64,
    b2_rhs: f64,
    b2_gap: f64,
    satisfied: bool,
}

#[derive(Debug, Serialize)]
struct FieldReport {
    field: Matrix,
    bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    numeric_form: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<f64>,
    /// `F·L^eF − F·L₀F − bound` relative to the bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attained: Option<bool>,
    /// Case-2 form, present when `F` satisfies the compatibility constraint.
    #[serde(skip_serializing_if = "Option::is_none")]
    compatible_form: Option<f64>,
}

#[derive(Debug, Serialize)]
struct HomogenizeSummary {
    theta: f64,
    q: Matrix,
    q_source: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    bitter_crum: Option<BitterCrumSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<Matrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    numeric: Option<Matrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_vs_numeric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_bounds: Option<TraceBoundSummary>,
    direction: DirectionConfig,
    fields: Vec<FieldReport>,
    notes: Vec<String>,
}

/// Scalar multiple of the identity, if `a` is one.
fn scalar_of(a: &DMatrix<f64>) -> Option<f64> {
    let c = a[(0, 0)];
    let n = a.nrows();
    ((a - DMatrix::identity(n, n) * c).amax() <= 1e-14 * c.abs().max(1.0)).then_some(c)
}

fn run_homogenize(cfg: &RunConfig, h: &HomogenizeConfig, chi: &CharacteristicFunction) -> Result<Value, CliError> {
    let n = chi.grid().dim();
    let theta = chi.theta();
    let direction = match h.direction {
        DirectionConfig::Lower => BoundDirection::Lower,
        DirectionConfig::Upper => BoundDirection::Upper,
    };
    let materials = cfg.materials(h)?;
    let mut notes = Vec::new();
    // Tensor forms of both phases and the isotropic matrix phase when it exists.
    let (l1, l0t, l0_iso): (Tensor4, Tensor4, Option<IsoTensor4>) = match &materials {
        Materials::Conductivity { a1, a2 } => {
            let iso = scalar_of(a2).and_then(|c| IsoTensor4::scalar(n, c).ok());
            if iso.is_none() {
                notes.push("a2 is not a multiple of the identity: closed form and bounds skipped".into());
            }
            (Tensor4::conductivity(a1), Tensor4::conductivity(a2), iso)
        }
        Materials::Elastic { l1, l0 } => (l1.clone(), l0.tensor(), Some(*l0)),
    };
    let kappa = l0_iso.map_or(1.0, |l| l.kappa());
    let (q, q_source) = match &h.q {
        Some(q) => (DMatrix::from_fn(n, n, |i, j| q[i][j]), "config"),
        None => (r_matrix_q(chi, kappa).map_err(|e| CliError::from_spectral("homogenize", e))?, "mask"),
    };
    let bc = match l0_iso {
        Some(l0) => {
            let b = bitter_crum(chi, l0.kappa(), &l0.tensor()).map_err(|e| CliError::from_spectral("homogenize", e))?;
            Some(BitterCrumSummary { energy: b.energy, predicted: b.predicted, relative_error: b.relative_error() })
        }
        None => None,
    };

    let closed = match l0_iso {
        Some(l0) => match effective_tensor_closed(&l1, &l0, &q, theta) {
            Ok(t) => Some(t),
            Err(e @ (HomogenizeError::NotScalarCase(_) | HomogenizeError::NotInQ(_))) => {
                notes.push(format!("closed form unavailable: {e}"));
                None
            }
            Err(e) => return Err(CliError::from_homogenize("homogenize", e)),
        },
        None => None,
    };

    let opts = CellOptions { rel_tol: h.cg_tol, max_iters: None };
    let numeric = if h.numeric {
        Some(match &materials {
            Materials::Conductivity { a1, a2 } => {
                let ae = effective_conductivity_numeric(chi, a1, a2, &opts).map_err(|e| CliError::from_homogenize("homogenize", e))?;
                Tensor4::conductivity(&ae)
            }
            Materials::Elastic { .. } => effective_tensor_numeric(chi, &l1, &l0t, ProbeBasis::Full, &opts)
                .map_err(|e| CliError::from_homogenize("homogenize", e))?,
        })
    } else {
        None
    };
    let closed_vs_numeric = match (&closed, &numeric) {
        (Some(c), Some(m)) => Some((c - m).max_abs() / c.max_abs()),
        _ => None,
    };

    let trace = match (&materials, &numeric) {
        (Materials::Conductivity { a1, a2 }, Some(num)) if direction == BoundDirection::Lower && a1 != a2 => {
            let ae = DMatrix::from_fn(n, n, |i, j| num.get(0, i, 0, j));
            let tb = trace_bounds(a1, a2, &ae, theta).map_err(|e| CliError::from_homogenize("homogenize.materials", e))?;
            Some(TraceBoundSummary {
                b1_lhs: tb.b1_lhs,
                b1_rhs: tb.b1_rhs,
                b1_gap: tb.b1_gap(),
                b2_lhs: tb.b2_lhs,
                b2_rhs: tb.b2_rhs,
                b2_gap: tb.b2_gap(),
                satisfied: tb.satisfied,
            })
        }
        _ => None,
    };

    let mut fields = Vec::new();
    if let Some(l0) = l0_iso {
        for (i, f) in h.fields.iter().enumerate() {
            let key = format!("homogenize.fields[{i}]");
            let fm = DMatrix::from_fn(n, n, |a, b| f[a][b]);
            let bound = hs_bound(&l1, &l0, theta, &fm, direction).map_err(|e| CliError::from_homogenize(&key, e))?;
            let numeric_form = numeric.as_ref().map(|t| t.form(&fm, &fm));
            let report = numeric_form.map(|form| BoundReport::new(form, &l0, &fm, bound, direction, 0.02));
            let gap = report.map(|r| if r.rhs == 0.0 { r.gap } else { r.gap / r.rhs.abs() });
            let compatible_form = effective_form_general(&l1, &l0, &q, theta, &fm).ok();
            fields.push(FieldReport {
                field: f.clone(),
                bound,
                numeric_form,
                closed_form: closed.as_ref().map(|t| t.form(&fm, &fm)),
                gap,
                attained: report.map(|r| r.attained),
                compatible_form,
            });
        }
    }

    let summary = HomogenizeSummary {
        theta,
        q: rows(&q),
        q_source,
        bitter_crum: bc,
        closed_form: closed.as_ref().map(|t| rows(t.matrix())),
        numeric: numeric.as_ref().map(|t| rows(t.matrix())),
        closed_vs_numeric,
        trace_bounds: trace,
        direction: h.direction,
        fields,
        notes,
    };
    Ok(to_value(&summary))
}

pub fn cmd_homogenize(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let h = cfg.homogenize.as_ref().ok_or_else(|| CliError::config("homogenize", "missing [homogenize] table"))?;
    let grid = cfg.grid()?;
    let (mask, source) = match &h.mask {
        Some(p) => {
            let path = cfg.resolve(p);
            (read_stored_mask(&path, &grid)?, p.clone())
        }
        None => {
            let solved = run_solve(cfg)?;
            let mask = solved.labeling.as_ref().map(|l| l.inclusion_mask()).unwrap_or(solved.coincident);
            (mask, "solve".to_string())
        }
    };
    let chi = CharacteristicFunction::new(&grid, mask).map_err(|e| CliError::from_spectral("homogenize.mask", e))?;
    let value = serde_json::json!({
        "command": "homogenize",
        "mask": source,
        "homogenization": run_homogenize(cfg, h, &chi)?,
    });
    io::ensure_finite(&value, "homogenization")?;
    fs::create_dir_all(out)?;
    io::write_json(&out.join("homogenize.json"), &value)?;
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Pgm,
    Json,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "pgm" => Ok(Self::Pgm),
            "json" => Ok(Self::Json),
            _ => Err(CliError::Format(s.to_string())),
        }
    }
}

fn as_mask(values: &[f64]) -> Vec<bool> {
    values.iter().map(|&v| v == 1.0).collect()
}

pub fn cmd_export(artifact: &Path, format: ExportFormat, out: &Path) -> Result<PathBuf, CliError> {
    let ext = artifact.extension().and_then(|e| e.to_str()).unwrap_or("");
    let stem = artifact.file_stem().and_then(|s| s.to_str()).ok_or_else(|| CliError::artifact(artifact, "no file name"))?;
    fs::create_dir_all(out)?;
    match (ext, format) {
        ("csv", ExportFormat::Csv) => {
            let (shape, values) = io::read_field(artifact)?;
            let path = out.join(format!("{stem}.csv"));
            io::write_field(&path, &shape, &values)?;
            Ok(path)
        }
        ("csv", ExportFormat::Pgm) => {
            let (shape, values) = io::read_field(artifact)?;
            if values.iter().all(|&v| v == 0.0 || v == 1.0) {
                return io::write_mask(out, stem, &shape, &as_mask(&values));
            }
            if shape.len() > 2 {
                return Err(CliError::Format("pgm for 3D non-mask fields".into()));
            }
            let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            let span = if hi > lo { hi - lo } else { 1.0 };
            let px: Vec<u8> = values.iter().map(|v| ((v - lo) / span * 255.0).round() as u8).collect();
            let (w, h) = if shape.len() == 1 { (shape[0], 1) } else { (shape[1], shape[0]) };
            let path = out.join(format!("{stem}.pgm"));
            io::write_pgm(&path, w, h, &px)?;
            Ok(path)
        }
        ("pgm", ExportFormat::Pgm) | ("json", ExportFormat::Pgm) => {
            let (shape, inside) = io::read_mask(artifact)?;
            io::write_mask(out, stem, &shape, &inside)
        }
        ("pgm", ExportFormat::Csv) | ("json", ExportFormat::Csv) if ext == "pgm" || is_slice_index(artifact) => {
            let (shape, inside) = io::read_mask(artifact)?;
            let shape = if shape.len() == 2 && shape[0] == 1 { vec![shape[1]] } else { shape };
            let values: Vec<f64> = inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let path = out.join(format!("{stem}.csv"));
            io::write_field(&path, &shape, &values)?;
            Ok(path)
        }
        ("json", ExportFormat::Json) => {
            let text = fs::read_to_string(artifact).map_err(|e| CliError::artifact(artifact, e))?;
            let value: Value = serde_json::from_str(&text).map_err(|e| CliError::artifact(artifact, e))?;
            let path = out.join(format!("{stem}.json"));
            io::write_json(&path, &value)?;
            Ok(path)
        }
        _ => Err(CliError::Format(format!("cannot export .{ext} as {format:?}"))),
    }
}

fn is_slice_index(path: &Path) -> bool {
    fs::read_to_string(path)
        .ok()
        .and_then(|t| serde_json::from_str::<Value>(&t).ok())
        .is_some_and(|v| v.get("slices").is_some())
}
