//! Dense complex linear-algebra helpers shared by the estimators.
//!
//! All matrix products used inside the estimation loops go through the
//! counted wrappers here, so tests can check how the per-iteration work
//! scales with the problem size. The counter is per thread and counts
//! complex multiply-accumulates.

use std::borrow::Cow;
use std::cell::Cell;

use matrixmultiply::{zgemm, CGemmOption};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::{Error, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;
pub type RVector = DVector<f64>;

thread_local! {
    static MAC_COUNT: Cell<u64> = const { Cell::new(0) };
}

/// Resets this thread's multiply-accumulate counter.
pub fn reset_op_count() {
    MAC_COUNT.with(|c| c.set(0));
}

/// Complex multiply-accumulates issued by counted products on this thread
/// since the last [`reset_op_count`].
pub fn op_count() -> u64 {
    MAC_COUNT.with(|c| c.get())
}

pub(crate) fn record_ops(n: usize) {
    MAC_COUNT.with(|c| c.set(c.get() + n as u64));
}

/// Column-major operand for [`gemm`]; adjoints carry a conjugated copy.
struct Operand<'a> {
    data: Cow<'a, [Complex64]>,
    row_stride: isize,
    col_stride: isize,
}

impl<'a> Operand<'a> {
    fn plain(m: &'a CMatrix) -> Self {
        Self {
            data: Cow::Borrowed(m.as_slice()),
            row_stride: 1,
            col_stride: m.nrows() as isize,
        }
    }

    fn adjoint(m: &'a CMatrix) -> Self {
        Self {
            data: Cow::Owned(m.iter().map(|z| z.conj()).collect()),
            row_stride: m.nrows() as isize,
            col_stride: 1,
        }
    }
}

fn gemm(m: usize, k: usize, n: usize, a: Operand, b: Operand) -> CMatrix {
    record_ops(m * k * n);
    let mut c = CMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: Complex64 is #[repr(C)] { re, im }, layout-compatible with
    // [f64; 2]; the strides describe in-bounds column-major views of the
    // operand buffers and `c` is a fresh m × n column-major buffer.
    unsafe {
        zgemm(
            CGemmOption::Standard,
            CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.data.as_ptr() as *const [f64; 2],
            a.row_stride,
            a.col_stride,
            b.data.as_ptr() as *const [f64; 2],
            b.row_stride,
            b.col_stride,
            [0.0, 0.0],
            c.as_mut_slice().as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
    c
}

/// `a * b`
pub fn mul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.nrows(), "mul: inner dimensions differ");
    gemm(a.nrows(), a.ncols(), b.ncols(), Operand::plain(a), Operand::plain(b))
}

/// `aᴴ * b`
pub fn ad_mul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.nrows(), b.nrows(), "ad_mul: inner dimensions differ");
    gemm(a.ncols(), a.nrows(), b.ncols(), Operand::adjoint(a), Operand::plain(b))
}

/// `a * bᴴ`
pub fn mul_ad(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.ncols(), "mul_ad: inner dimensions differ");
    gemm(a.nrows(), a.ncols(), b.nrows(), Operand::plain(a), Operand::adjoint(b))
}

/// `a * v`
pub fn mul_vec(a: &CMatrix, v: &CVector) -> CVector {
    record_ops(a.nrows() * a.ncols());
    a * v
}

/// `aᴴ * v`
pub fn ad_mul_vec(a: &CMatrix, v: &CVector) -> CVector {
    record_ops(a.nrows() * a.ncols());
    a.ad_mul(v)
}

/// Hermitian positive-definite factorization with a single jittered retry.
///
/// On failure the diagonal is loaded with `1e-12 * max|diag|` and the
/// factorization is attempted once more.
pub fn hpd_factor(m: CMatrix, context: &str) -> Result<Cholesky<Complex64, Dyn>> {
    let n = m.nrows();
    record_ops(n * n * n / 6);
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::numerical(format!("{context}: non-finite matrix")));
    }
    let max_diag = (0..n).map(|i| m[(i, i)].re.abs()).fold(0.0, f64::max);
    let mut jittered = m.clone();
    match Cholesky::new(m).filter(pivots_ok) {
        Some(c) => Ok(c),
        None => {
            let jitter = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
            for i in 0..n {
                jittered[(i, i)] += Complex64::new(jitter, 0.0);
            }
            Cholesky::new(jittered).filter(pivots_ok).ok_or_else(|| {
                Error::numerical(format!("{context}: matrix is not positive definite"))
            })
        }
    }
}

// The complex factorization takes square roots of complex pivots, so a
// negative pivot shows up as an imaginary diagonal entry rather than a failure.
fn pivots_ok(c: &Cholesky<Complex64, Dyn>) -> bool {
    let l = c.l_dirty();
    (0..l.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-8 * d.re
    })
}

/// `ln det` of the factored matrix.
pub fn chol_log_det(chol: &Cholesky<Complex64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>() * 2.0
}

/// Replaces `m` by `(m + mᴴ) / 2`.
pub fn hermitize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

/// Least-squares solution `a⁺ b` via the SVD.
pub fn lstsq(a: &CMatrix, b: &CVector) -> Result<CVector> {
    record_ops(a.nrows() * a.ncols() * a.ncols());
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    svd.solve(b, eps)
        .map_err(|e| Error::numerical(format!("least squares: {e}")))
}

/// Numerical rank with the usual `max(m, n) · ε · σ_max` cutoff.
pub fn numerical_rank(a: &CMatrix) -> usize {
    let sv = a.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

pub fn norm_sq(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `sign` with `sign(0) = 0`.
pub fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermitize_makes_hermitian() {
        let mut m = CMatrix::from_fn(3, 3, |i, j| Complex64::new(i as f64, j as f64));
        hermitize(&mut m);
        assert_eq!(m, m.adjoint());
    }

    #[test]
    fn jitter_rescues_semidefinite_matrix() {
        // rank-one, PSD but singular
        let v = CVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]);
        let m = &v * v.adjoint();
        let chol = hpd_factor(m, "test");
        assert!(chol.is_ok());
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(-1.0, 0.0),
        ]));
        assert!(matches!(hpd_factor(m, "x"), Err(Error::Numerical { .. })));
    }

    #[test]
    fn counted_products_accumulate() {
        reset_op_count();
        let a = CMatrix::zeros(3, 4);
        let b = CMatrix::zeros(4, 5);
        let _ = mul(&a, &b);
        assert_eq!(op_count(), 60);
    }

    #[test]
    fn products_match_nalgebra() {
        let a = CMatrix::from_fn(5, 3, |i, j| Complex64::new(i as f64 - 1.5, (j * j) as f64 * 0.3));
        let b = CMatrix::from_fn(3, 4, |i, j| Complex64::new((i + j) as f64, -(i as f64)));
        let c = CMatrix::from_fn(5, 4, |i, j| Complex64::new(0.2 * j as f64, i as f64 - j as f64));
        assert!((mul(&a, &b) - &a * &b).norm() < 1e-12);
        assert!((ad_mul(&a, &c) - a.adjoint() * &c).norm() < 1e-12);
        assert!((mul_ad(&b.transpose(), &a) - b.transpose() * a.adjoint()).norm() < 1e-12);
        assert_eq!(mul(&CMatrix::zeros(2, 0), &CMatrix::zeros(0, 3)), CMatrix::zeros(2, 3));
    }

    #[test]
    fn signum_of_zero_is_zero() {
        assert_eq!(signum0(0.0), 0.0);
        assert_eq!(signum0(-2.0), -1.0);
        assert_eq!(signum0(1e-300), 1.0);
    }
}
