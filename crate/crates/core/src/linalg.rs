//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric square root of a positive semidefinite matrix; negative
/// eigenvalues from rounding are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Composite trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        len => {
            let interior: f64 = values[1..len - 1].iter().sum();
            dt * (0.5 * (values[0] + values[len - 1]) + interior)
        }
    }
}

/// Discrete L²(0, T) norm of a grid sequence of vectors: sqrt(Δt Σ_v |x_v|²).
pub fn l2_time_norm(seq: &[DVector<f64>], dt: f64) -> f64 {
    (dt * seq.iter().map(|x| x.norm_squared()).sum::<f64>()).sqrt()
}

/// L²(0, T) distance between two grid sequences of equal length.
pub fn l2_time_distance(a: &[DVector<f64>], b: &[DVector<f64>], dt: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum();
    (dt * sq).sqrt()
}

// Error-free transformations for compensated dot products.

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let z = s - a;
    (s, (a - (s - z)) + (b - z))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Accumulator that sums products in roughly twice the working precision.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    hi: f64,
    lo: f64,
}

impl CompensatedSum {
    pub fn new(start: f64) -> Self {
        Self { hi: start, lo: 0.0 }
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        self.hi = s;
        self.lo += e;
    }

    #[inline]
    pub fn add_product(&mut self, a: f64, b: f64) {
        let (p, pe) = two_prod(a, b);
        let (s, se) = two_sum(self.hi, p);
        self.hi = s;
        self.lo += pe + se;
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let dt = 0.1;
        let vals: Vec<f64> = (0..=10).map(|v| 2.0 * v as f64 * dt + 1.0).collect();
        assert!((trapezoid(&vals, dt) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let mut acc = CompensatedSum::new(1e16);
        acc.add(1.0);
        acc.add(-1e16);
        assert_eq!(acc.value(), 1.0);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = psd_sqrt(&m);
        assert!((&s * &s - m).abs().max() < 1e-12);
    }
}
