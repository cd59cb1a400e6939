//! Structured builders for the companion, observability-stack, Toeplitz and
//! numerator matrices used by the filter and the coordinate change.

use super::DenseMatrix;
use crate::error::{Error, Result};

/// `(A_i, B_i)`: the `i×i` up-shift matrix and the `i×1` last unit vector.
pub fn build_companion(i: usize) -> Result<(DenseMatrix, DenseMatrix)> {
    if i == 0 {
        return Err(Error::InvalidArgument("companion order must be >= 1".into()));
    }
    Ok((shift(i), DenseMatrix::unit_col(i, i)))
}

pub(crate) fn shift(i: usize) -> DenseMatrix {
    let mut a = DenseMatrix::zeros(i, i);
    for r in 0..i.saturating_sub(1) {
        a[(r, r + 1)] = 1.0;
    }
    a
}

/// Stack `[C; C A_i; …; C A_i^{j−1}]` for a `1×i` row `C`.
pub fn build_m(c: &DenseMatrix, i: usize, j: usize) -> Result<DenseMatrix> {
    if c.rows() != 1 || c.cols() != i {
        return Err(Error::Shape(format!(
            "expected 1x{i} row, got {}x{}",
            c.rows(),
            c.cols()
        )));
    }
    if j == 0 {
        return Err(Error::InvalidArgument("stack height must be >= 1".into()));
    }
    let mut out = DenseMatrix::zeros(j, i);
    // C A_i^k is C shifted right by k places
    for k in 0..j {
        for col in k..i {
            out[(k, col)] = c[(0, col - k)];
        }
    }
    Ok(out)
}

/// Unit upper-triangular Toeplitz matrix with `(r, r+k)` entry `a_k τ^k / a_0`.
pub fn build_t(a: &[f64], tau: f64) -> Result<DenseMatrix> {
    let l = a.len();
    if l == 0 {
        return Err(Error::InvalidArgument("empty coefficient list".into()));
    }
    if !(a[0] > 0.0) {
        return Err(Error::InvalidArgument(format!("a0 must be positive, got {}", a[0])));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let diag: Vec<f64> = (0..l).map(|k| a[k] * tau.powi(k as i32) / a[0]).collect();
    let mut t = DenseMatrix::zeros(l, l);
    for r in 0..l {
        for k in 0..l - r {
            t[(r, r + k)] = diag[k];
        }
    }
    Ok(t)
}

/// Inverse of a unit upper-triangular matrix by back-substitution.
pub fn unit_upper_inverse(t: &DenseMatrix) -> DenseMatrix {
    let n = t.rows();
    let mut inv = DenseMatrix::identity(n);
    for c in 0..n {
        for r in (0..c).rev() {
            let s: f64 = (r + 1..=c).map(|k| t[(r, k)] * inv[(k, c)]).sum();
            inv[(r, c)] = -s;
        }
    }
    inv
}

/// Numerator row `[1, c_1 τ/a_0, …, c_{l−m} τ^{l−m}/a_0, 0, …, 0]` of width `l`.
pub fn build_cq(a0: f64, c: &[f64], tau: f64, l: usize, m: usize) -> Result<DenseMatrix> {
    if m == 0 || m > l {
        return Err(Error::InvalidArgument(format!("need l >= m > 0, got l={l}, m={m}")));
    }
    if c.len() != l - m {
        return Err(Error::Shape(format!(
            "numerator has {} coefficients, expected l-m = {}",
            c.len(),
            l - m
        )));
    }
    if !(a0 > 0.0) {
        return Err(Error::InvalidArgument(format!("a0 must be positive, got {a0}")));
    }
    let mut row = DenseMatrix::zeros(1, l);
    row[(0, 0)] = 1.0;
    for (k, ck) in c.iter().enumerate() {
        row[(0, k + 1)] = ck * tau.powi(k as i32 + 1) / a0;
    }
    Ok(row)
}

/// `diag(τ, τ², …, τ^l)`.
pub fn tau_powers_diag(tau: f64, l: usize) -> DenseMatrix {
    let powers: Vec<f64> = (1..=l).map(|k| tau.powi(k as i32)).collect();
    DenseMatrix::diag(&powers)
}
