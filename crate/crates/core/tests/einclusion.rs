use einc::einclusion::{
    check_necessary_condition, count_components, extract_coincident, label_components, predicted_theta,
    solve_for_theta, verify_einclusion, EincError,
};
use einc::lattice::{hessian, BravaisLattice, Mask, PeriodicGrid, ScalarField};
use einc::obstacle::{build_laminate, build_multi, build_single};
use einc::vi::{complementarity_report, solve_periodic, ComplementarityReport, SolveOptions, Sweep, VISolution};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

fn fast(grid: &PeriodicGrid) -> SolveOptions {
    SolveOptions { sweep: Sweep::RedBlack, ..SolveOptions::tuned(grid) }
}

fn square(n: usize) -> PeriodicGrid {
    PeriodicGrid::centered(BravaisLattice::cubic(2, 1.0).unwrap(), &[n, n]).unwrap()
}

fn perimeter_nodes(grid: &PeriodicGrid, mask: &Mask) -> usize {
    (0..grid.len())
        .filter(|&i| {
            mask.get(i)
                && (0..grid.dim()).any(|a| !mask.get(grid.shift(i, a, 1)) || !mask.get(grid.shift(i, a, -1)))
        })
        .count()
}

#[test]
fn laminate_mask_fraction() {
    let n = 256;
    let grid = PeriodicGrid::new(BravaisLattice::cubic(1, 1.0).unwrap(), &[n]).unwrap();
    let phi = build_laminate(-1.0, DVector::from_vec(vec![1.0])).unwrap().sample(&grid).unwrap();
    let sol = solve_periodic(&grid, &phi, 1.0, &SolveOptions::tuned(&grid)).unwrap();
    let mask = extract_coincident(&sol, 1.0);
    assert!((mask.fraction() - 0.5).abs() <= 2.0 / n as f64, "{}", mask.fraction());
}

#[test]
fn sampled_laminate_profile_has_exact_residuals() {
    let n = 64;
    let grid = PeriodicGrid::new(BravaisLattice::cubic(1, 1.0).unwrap(), &[n]).unwrap();
    let phi = build_laminate(-1.0, DVector::from_vec(vec![1.0])).unwrap().sample(&grid).unwrap();
    let u = ScalarField::from_fn(&grid, |x| {
        let t = x[0] - x[0].floor();
        let d = t.min(1.0 - t);
        if d <= 0.25 {
            -0.5 * d * d
        } else {
            0.5 * (d - 0.5).powi(2) - 1.0 / 16.0
        }
    })
    .unwrap();
    let mut sol = VISolution {
        u,
        f: 1.0,
        obstacle_field: phi,
        iterations: 0,
        final_energy: 0.0,
        residuals: ComplementarityReport::default(),
        energy_trace: Vec::new(),
        max_energy_increase: 0.0,
        converged: true,
        fixed: None,
    };
    sol.residuals = complementarity_report(&sol);
    let mask = extract_coincident(&sol, 1.0);
    let h = hessian(&sol.u).unwrap();
    let lab = label_components(&mask, &h, &[-diag(&[1.0])], None, 1.0).unwrap();
    let rep = verify_einclusion(&sol, &lab).unwrap();
    assert!(rep.max_hessian_deviation() < 1e-8);
    assert!(rep.laplacian_residual.unwrap() < 1e-8);
    assert!(rep.hessian_std[0] < 1e-8);
    // The node count includes the two contact nodes on the interface.
    assert!(rep.load_balance_residual.abs() <= 2.0 * 2.0 / n as f64);
}

#[test]
fn single_matrix_vigdergauz_labeling() {
    let grid = square(128);
    let q = -diag(&[1.0, 1.0]);
    let phi = build_single(q.clone(), grid.lattice().clone()).unwrap().sample(&grid).unwrap();
    let f = 1.0;
    let sol = solve_periodic(&grid, &phi, f, &fast(&grid)).unwrap();
    let mask = extract_coincident(&sol, 1.0);
    let h = hessian(&sol.u).unwrap();
    let lab = label_components(&mask, &h, std::slice::from_ref(&q), None, f).unwrap();
    assert_eq!(count_components(&grid, &lab.mask(1)), 1);
    let counts: usize = (0..=1).map(|l| lab.mask(l).count()).sum();
    assert_eq!(counts, grid.len());
    let rep = verify_einclusion(&sol, &lab).unwrap();
    assert!(rep.max_hessian_deviation() < 0.02 * q.norm());
    assert!(rep.laplacian_residual.unwrap() < 1e-4);
    let pred = predicted_theta(&q, f).unwrap();
    let bound = 3.0 * perimeter_nodes(&grid, &lab.mask(1)) as f64 / grid.len() as f64;
    assert!((lab.total_fraction() - pred).abs() <= bound);
    assert!((lab.total_fraction() - pred).abs() <= 3.0 / 128.0);
    assert!(check_necessary_condition(&lab.k, lab.inclusion_fractions()).unwrap().satisfied);
}

#[test]
fn wrong_target_is_unmatched() {
    let grid = square(64);
    let q = -diag(&[1.0, 1.0]);
    let phi = build_single(q, grid.lattice().clone()).unwrap().sample(&grid).unwrap();
    let sol = solve_periodic(&grid, &phi, 1.0, &fast(&grid)).unwrap();
    let mask = extract_coincident(&sol, 1.0);
    let h = hessian(&sol.u).unwrap();
    let err = label_components(&mask, &h, &[-diag(&[2.0, 1.0])], None, 1.0).unwrap_err();
    assert!(matches!(err, EincError::UnmatchedRegion { .. }));
}

#[test]
fn rank_one_interface_does_not_block_labeling() {
    use einc::obstacle::{Curvature, Obstacle, Piece, QuadraticPiece, Translations};
    let grid = PeriodicGrid::centered(BravaisLattice::cubic(2, 2.0).unwrap(), &[128, 128]).unwrap();
    let (q1, q2) = (-diag(&[1.0, 1.0]), -diag(&[2.0, 1.0]));
    let curvature = Curvature::Joined { below: q1.clone(), above: q2.clone(), normal: DVector::from_vec(vec![1.0, 0.0]) };
    let piece = QuadraticPiece { curvature, center: DVector::zeros(2), offset: 0.0, translations: Translations::Full };
    let obstacle = Obstacle::new(vec![Piece::Quadratic(piece)], Some(grid.lattice().clone()), 2).unwrap();
    let phi = obstacle.sample(&grid).unwrap();
    let search = solve_for_theta(&phi, &[q1, q2], 0.31, &fast(&grid), 1.0, None).unwrap();
    let lab = &search.labeling;
    assert!(lab.unmatched_interior > 0);
    let theta = lab.inclusion_fractions();
    assert!((theta[0] - 0.19).abs() < 0.02 && (theta[1] - 0.12).abs() < 0.02, "{theta:?}");
    // The two parts share one connected component.
    assert_eq!(count_components(&grid, &lab.inclusion_mask()), 1);
}

#[test]
fn anisotropic_rectangle_fraction() {
    let grid = PeriodicGrid::centered(BravaisLattice::rectangular(&[2.0, 1.0]).unwrap(), &[128, 64]).unwrap();
    let q = -diag(&[1.0, 2.0]);
    let phi = build_single(q.clone(), grid.lattice().clone()).unwrap().sample(&grid).unwrap();
    let sol = solve_periodic(&grid, &phi, 1.5, &fast(&grid)).unwrap();
    let mask = extract_coincident(&sol, 1.0);
    let lab = label_components(&mask, &hessian(&sol.u).unwrap(), std::slice::from_ref(&q), None, 1.5).unwrap();
    let pred = predicted_theta(&q, 1.5).unwrap();
    assert!((lab.total_fraction() - pred).abs() <= 3.0 / 64.0, "{} vs {pred}", lab.total_fraction());
}

#[test]
fn two_matrix_coated_structure() {
    let lat = BravaisLattice::cubic(2, 2.0).unwrap();
    let grid = PeriodicGrid::new(lat.clone(), &[128, 128]).unwrap();
    let d = DVector::from_vec(vec![1.0, 1.0]);
    let k = vec![-diag(&[1.0, 1.0]), -diag(&[2.0, 3.0])];
    let phi = build_multi(&[(k[0].clone(), d.clone(), 0.0), (k[1].clone(), d, 0.2)], lat).unwrap().sample(&grid).unwrap();
    let search = solve_for_theta(&phi, &k, 0.84, &fast(&grid), 1.0, None).unwrap();
    let lab = &search.labeling;
    let mut fractions = lab.inclusion_fractions().to_vec();
    fractions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!((fractions[0] - 0.19).abs() < 0.03, "{fractions:?}");
    assert!((fractions[1] - 0.65).abs() < 0.03, "{fractions:?}");
    for l in 1..=2 {
        assert_eq!(count_components(&grid, &lab.mask(l)), 1);
    }
    let rep = verify_einclusion(&search.solution, lab).unwrap();
    for (dev, q) in rep.hessian_deviation.iter().zip(&k) {
        assert!(*dev < 0.05 * q.norm());
    }
    assert!(check_necessary_condition(&lab.k, lab.inclusion_fractions()).unwrap().satisfied);
}

#[test]
fn coincident_set_grows_with_load() {
    let grid = square(128);
    let q = -diag(&[1.0, 1.0]);
    let phi = build_single(q, grid.lattice().clone()).unwrap().sample(&grid).unwrap();
    let m1 = extract_coincident(&solve_periodic(&grid, &phi, 1.0, &fast(&grid)).unwrap(), 1.0);
    let m2 = extract_coincident(&solve_periodic(&grid, &phi, 2.0, &fast(&grid)).unwrap(), 1.0);
    let mut grown = m2.clone();
    for i in 0..grid.len() {
        if (0..2).any(|a| m2.get(grid.shift(i, a, 1)) || m2.get(grid.shift(i, a, -1))) {
            grown.set(i, true);
        }
    }
    assert!(m1.is_subset_of(&grown));
    assert!(m1.count() < m2.count());
}

#[test]
fn degenerate_constant_obstacle() {
    let grid = square(16);
    let phi = ScalarField::constant(&grid, -1.0).unwrap();
    let sol = solve_periodic(&grid, &phi, 1.0, &SolveOptions::default()).unwrap();
    let mask = extract_coincident(&sol, 1.0);
    assert_eq!(mask.fraction(), 1.0);
    let lab = label_components(&mask, &hessian(&sol.u).unwrap(), &[DMatrix::zeros(2, 2)], None, 1.0).unwrap();
    assert_eq!(lab.total_fraction(), 1.0);
    assert!(lab.p0.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]
    #[test]
    fn scaling_keeps_masks(a in 0.3f64..5.0) {
        let grid = square(32);
        let q = -diag(&[1.0, 1.5]);
        let phi = build_single(q.clone(), grid.lattice().clone()).unwrap().sample(&grid).unwrap();
        let base = solve_periodic(&grid, &phi, 1.0, &fast(&grid)).unwrap();
        let scaled_phi = phi.map(|v| a * v).unwrap();
        let scaled = solve_periodic(&grid, &scaled_phi, a, &fast(&grid)).unwrap();
        let m1 = extract_coincident(&base, 1.0);
        let m2 = extract_coincident(&scaled, 1.0);
        prop_assert_eq!(m1.values(), m2.values());
        let l1 = label_components(&m1, &hessian(&base.u).unwrap(), std::slice::from_ref(&q), None, 1.0).unwrap();
        let l2 = label_components(&m2, &hessian(&scaled.u).unwrap(), &[&q * a], None, a).unwrap();
        prop_assert_eq!(l1.labels, l2.labels);
    }
}
