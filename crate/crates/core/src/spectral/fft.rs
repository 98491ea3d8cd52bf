use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use nalgebra::DVector;

use crate::lattice::PeriodicGrid;

/// Separable n-dimensional DFT over a row-major grid.
pub(crate) struct NdFft {
    shape: Vec<usize>,
    strides: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl NdFft {
    pub(crate) fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let mut strides = vec![1; shape.len()];
        for k in (0..shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * shape[k + 1];
        }
        Self {
            shape: shape.to_vec(),
            strides,
            forward: shape.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inverse: shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
        }
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        let total: usize = self.shape.iter().product();
        let mut line = Vec::new();
        for (axis, plan) in plans.iter().enumerate() {
            let n = self.shape[axis];
            let stride = self.strides[axis];
            line.resize(n, Complex64::new(0.0, 0.0));
            for start in 0..total {
                if !(start / stride).is_multiple_of(n) {
                    continue;
                }
                for (t, slot) in line.iter_mut().enumerate() {
                    *slot = data[start + t * stride];
                }
                plan.process(&mut line);
                for (t, v) in line.iter().enumerate() {
                    data[start + t * stride] = *v;
                }
            }
        }
    }

    /// Normalised coefficients `c(k) = (1/M) Σ_x g(x) e^{−ik·x}`.
    pub(crate) fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.run(&mut data, &self.forward);
        let scale = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|v| *v *= scale);
        data
    }

    /// Synthesis `Σ_k c(k) e^{ik·x}`, keeping the real part.
    pub(crate) fn inverse_real(&self, coeffs: Vec<Complex64>) -> Vec<f64> {
        let mut data = coeffs;
        self.run(&mut data, &self.inverse);
        data.iter().map(|v| v.re).collect()
    }
}

/// Wave vector of one DFT mode.
#[derive(Debug, Clone)]
pub(crate) struct Mode {
    /// Signed frequency index per axis.
    pub(crate) nu: Vec<i64>,
    /// Axes whose index is the Nyquist frequency of an even axis.
    pub(crate) nyquist: Vec<usize>,
}

pub(crate) fn mode(grid: &PeriodicGrid, flat: usize) -> Mode {
    let mut nu = Vec::with_capacity(grid.dim());
    let mut nyquist = Vec::new();
    for (axis, &n) in grid.shape().iter().enumerate() {
        let m = grid.coord(flat, axis) as i64;
        let n = n as i64;
        if n % 2 == 0 && m == n / 2 {
            nyquist.push(axis);
        }
        nu.push(if 2 * m > n { m - n } else { m });
    }
    Mode { nu, nyquist }
}

/// Averages `f(k)` over the `2^s` aliases obtained by flipping the sign of
/// Nyquist components, which keeps real fields real.
pub(crate) fn alias_average<T>(
    recip: &[DVector<f64>],
    mode: &Mode,
    zero: T,
    mut f: impl FnMut(&DVector<f64>) -> T,
) -> T
where
    T: std::ops::AddAssign + std::ops::Mul<f64, Output = T>,
{
    let s = mode.nyquist.len();
    let mut acc = zero;
    for flips in 0..(1usize << s) {
        let mut nu = mode.nu.clone();
        for (b, &axis) in mode.nyquist.iter().enumerate() {
            if flips >> b & 1 == 1 {
                nu[axis] = -nu[axis];
            }
        }
        let mut k = DVector::zeros(recip[0].len());
        for (g, &v) in recip.iter().zip(&nu) {
            k += g * v as f64;
        }
        acc += f(&k);
    }
    acc * (1.0 / (1usize << s) as f64)
}
