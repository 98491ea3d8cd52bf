use einc::lattice::{BravaisLattice, Mask, PeriodicGrid};
use einc::spectral::{
    bitter_crum, compute_r, r_matrix_q, solve_eshelby, solve_poisson, CharacteristicFunction, IsoTensor4,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn disk(n: usize, r: f64) -> CharacteristicFunction {
    let grid = PeriodicGrid::centered(BravaisLattice::cubic(2, 1.0).unwrap(), &[n, n]).unwrap();
    CharacteristicFunction::from_fn(&grid, |x| x.norm() < r).unwrap()
}

fn ellipse(n: usize) -> CharacteristicFunction {
    let grid = PeriodicGrid::centered(BravaisLattice::rectangular(&[1.0, 1.3]).unwrap(), &[n, n + 6]).unwrap();
    CharacteristicFunction::from_fn(&grid, |x| (x[0] / 0.35).powi(2) + (x[1] / 0.2).powi(2) < 1.0).unwrap()
}

fn stripes(n: usize, dim: usize) -> CharacteristicFunction {
    let shape = vec![n; dim];
    let grid = PeriodicGrid::new(BravaisLattice::cubic(dim, 1.0).unwrap(), &shape).unwrap();
    CharacteristicFunction::from_fn(&grid, |x| x[0] < 0.5).unwrap()
}

fn random_matrix(rng: &mut StdRng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn laminate_poisson_profile() {
    let chi = stripes(64, 1);
    let sol = solve_poisson(&chi).unwrap();
    for i in 0..64 {
        let h = sol.hessian.get(i)[(0, 0)];
        if chi.mask().get(i) {
            assert!((h + 0.5).abs() < 0.005);
        } else {
            assert!((h - 0.5).abs() < 0.005);
        }
    }
}

#[test]
fn hessian_and_gradients_have_zero_mean() {
    let chi = ellipse(48);
    let sol = solve_poisson(&chi).unwrap();
    let n = 2;
    for e in 0..n * n {
        let mean: f64 = (0..chi.grid().len()).map(|i| sol.hessian.entries(i)[e]).sum::<f64>() / chi.grid().len() as f64;
        assert!(mean.abs() < 1e-12);
    }
    let g = solve_eshelby(&chi, &IsoTensor4::new(2, 1.0, 0.4, 0.3).unwrap(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.5, 2.0]))
        .unwrap();
    assert!(g.mean().amax() < 1e-12);
}

#[test]
fn scalar_and_vector_solvers_agree() {
    let chi = ellipse(40);
    let h = solve_poisson(&chi).unwrap().hessian;
    let l0 = IsoTensor4::new(2, 2.0, 0.5, -0.5).unwrap();
    let a = 1.7;
    let g = solve_eshelby(&chi, &l0, &(DMatrix::identity(2, 2) * a)).unwrap();
    let expect: Vec<f64> = h.raw().iter().map(|v| v * a / 2.0).collect();
    assert!(max_diff(g.field.raw(), &expect) < 1e-12);
}

#[test]
fn laminate_eshelby_closed_form() {
    // Layers normal to e₁: ∇v = −(χ − θ) (N(e₁) P e₁) ⊗ e₁.
    let chi = stripes(32, 2);
    let l0 = IsoTensor4::new(2, 1.5, 0.5, 0.25).unwrap();
    let p = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 2.0, 0.7]);
    let g = solve_eshelby(&chi, &l0, &p).unwrap();
    let t = l0.tensor();
    let acoustic = DMatrix::from_fn(2, 2, |a, b| t.get(a, 0, b, 0));
    let w = acoustic.try_inverse().unwrap() * p.column(0);
    for i in 0..chi.grid().len() {
        let s = if chi.mask().get(i) { 1.0 } else { 0.0 } - chi.theta();
        let m = g.field.get(i);
        for q in 0..2 {
            assert!((m[(q, 0)] + s * w[q]).abs() < 1e-12);
            assert!(m[(q, 1)].abs() < 1e-12);
        }
    }
    let one_d = stripes(32, 1);
    let l1 = IsoTensor4::new(1, 1.0, 0.5, 0.5).unwrap();
    let g = solve_eshelby(&one_d, &l1, &DMatrix::from_element(1, 1, 3.0)).unwrap();
    for i in 0..32 {
        let s = if one_d.mask().get(i) { 1.0 } else { 0.0 } - 0.5;
        assert!((g.field.get(i)[(0, 0)] + 3.0 * s / 2.0).abs() < 1e-12);
    }
}

#[test]
fn laminate_r_matrix_is_the_normal_projection() {
    let chi = stripes(32, 2);
    let r = compute_r(&chi, &IsoTensor4::scalar(2, 1.0).unwrap()).unwrap();
    let ri = r.apply(&DMatrix::identity(2, 2));
    assert!((ri.clone() - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax() < 1e-12, "{ri}");
    let q = r_matrix_q(&chi, 3.0).unwrap();
    assert!((q - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax() < 1e-12);
}

#[test]
fn r_tensor_properties() {
    let mut rng = StdRng::seed_from_u64(3);
    let grid = PeriodicGrid::new(BravaisLattice::cubic(2, 1.0).unwrap(), &[24, 24]).unwrap();
    let values: Vec<bool> = (0..grid.len()).map(|_| rng.gen_bool(0.3)).collect();
    let chi = CharacteristicFunction::new(&grid, Mask::new(&grid, values).unwrap()).unwrap();
    let l0 = IsoTensor4::new(2, 1.0, 0.6, 0.4).unwrap();
    let r = compute_r(&chi, &l0).unwrap();
    let id = DMatrix::identity(2, 2);
    assert!((id.dot(&r.apply(&id)) - 1.0 / l0.kappa()).abs() < 1e-12);
    for _ in 0..20 {
        let p = random_matrix(&mut rng, 2);
        let p2 = random_matrix(&mut rng, 2);
        assert!(r.form(&p, &p) >= -1e-12);
        assert!((r.form(&p, &p2) - r.form(&p2, &p)).abs() < 1e-12);
    }
}

#[test]
fn r_tensor_matches_nodal_average() {
    let chi = ellipse(32);
    let l0 = IsoTensor4::new(2, 1.0, 0.2, 0.1).unwrap();
    let r = compute_r(&chi, &l0).unwrap();
    let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 0.2]);
    let g = solve_eshelby(&chi, &l0, &p).unwrap();
    let avg = g.mean_over(chi.mask()) * (-1.0 / (1.0 - chi.theta()));
    assert!((avg - r.apply(&p)).amax() < 1e-12);
}

#[test]
fn energy_identity_on_odd_grids() {
    let grid = PeriodicGrid::centered(BravaisLattice::rectangular(&[1.0, 0.8]).unwrap(), &[33, 27]).unwrap();
    let chi = CharacteristicFunction::from_fn(&grid, |x| x[0].abs() + 1.4 * x[1].abs() < 0.3).unwrap();
    let l0 = IsoTensor4::new(2, 1.0, 0.7, 0.5).unwrap();
    let r = compute_r(&chi, &l0).unwrap();
    let t = l0.tensor();
    let mut rng = StdRng::seed_from_u64(9);
    let theta = chi.theta();
    for _ in 0..5 {
        let p = random_matrix(&mut rng, 2);
        let energy = solve_eshelby(&chi, &l0, &p).unwrap().energy(&t);
        let identity = theta * (1.0 - theta) * r.form(&p, &p);
        assert!((energy - identity).abs() < 1e-8 * identity.abs(), "{energy} vs {identity}");
    }
}

#[test]
fn bitter_crum_values() {
    let half = stripes(16, 2);
    let l0 = IsoTensor4::scalar(2, 1.0).unwrap().tensor();
    let bc = bitter_crum(&half, 1.0, &l0).unwrap();
    assert!((bc.predicted - 0.25).abs() < 1e-15);
    assert!(bc.relative_error() < 1e-12);

    let tiny = disk(64, 0.03);
    let bc = bitter_crum(&tiny, 1.0, &l0).unwrap();
    assert!(bc.energy < 0.005 && bc.predicted < 0.005);

    let d = disk(128, 0.3);
    let l = IsoTensor4::new(2, 1.0, 0.5, 0.5).unwrap();
    let bc = bitter_crum(&d, l.kappa(), &l.tensor()).unwrap();
    assert!(bc.relative_error() < 0.01, "{bc:?}");
}

#[test]
fn three_dimensional_r_matrix() {
    let grid = PeriodicGrid::centered(BravaisLattice::cubic(3, 1.0).unwrap(), &[16, 16, 16]).unwrap();
    let chi = CharacteristicFunction::from_fn(&grid, |x| (x[0] / 0.3).powi(2) + (x[1] / 0.3).powi(2) + (x[2] / 0.15).powi(2) < 1.0)
        .unwrap();
    let q = r_matrix_q(&chi, 2.0).unwrap();
    assert!((q.trace() - 1.0).abs() < 1e-10);
    // A flattened inclusion concentrates Q along its short axis.
    assert!(q[(2, 2)] > q[(0, 0)] && (q[(0, 0)] - q[(1, 1)]).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]
    #[test]
    fn random_masks_give_unit_trace(seed in 0u64..1000, n in 6usize..20, density in 0.1f64..0.9) {
        let mut rng = StdRng::seed_from_u64(seed);
        let grid = PeriodicGrid::new(BravaisLattice::rectangular(&[1.0, rng.gen_range(0.5..2.0)]).unwrap(), &[n, n + 3]).unwrap();
        let values: Vec<bool> = (0..grid.len()).map(|_| rng.gen_bool(density)).collect();
        let mask = Mask::new(&grid, values).unwrap();
        prop_assume!(mask.count() > 0 && mask.count() < grid.len());
        let chi = CharacteristicFunction::new(&grid, mask).unwrap();
        let q = r_matrix_q(&chi, rng.gen_range(0.5..3.0)).unwrap();
        prop_assert!((q.trace() - 1.0).abs() < 1e-6);
        let v = DVector::from_vec(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        prop_assert!(v.dot(&(&q * &v)) >= -1e-12);
    }
}
