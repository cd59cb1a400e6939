//! Small dense linear algebra: matrix type, eigenvalues, Lyapunov solver and
//! the structured builders used across the crate.

mod eigen;
mod lyapunov;
mod matrix;
mod structured;

pub use eigen::{
    eigenvalues, is_hurwitz, spd_extremal_eigs, sym_eigenvalues, sym_extremal_eigs, HurwitzVerdict,
    SpectrumSummary,
};
pub use lyapunov::{lyapunov_residual, solve_lyapunov};
pub use matrix::{DenseMatrix, Lu};
pub use structured::{
    build_companion, build_cq, build_m, build_t, tau_powers_diag, unit_upper_inverse,
};
pub(crate) use structured::shift;

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
