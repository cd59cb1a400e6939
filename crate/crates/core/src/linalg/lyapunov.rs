use super::{is_hurwitz, DenseMatrix};
use crate::error::{Error, Result};

const RESIDUAL_TOL: f64 = 1e-10;

/// Solves `AᵀP + PA = −I` for a Hurwitz `A`.
///
/// The equation is vectorised into `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = −vec(I)` and
/// solved densely, followed by a few steps of iterative refinement.
pub fn solve_lyapunov(a: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::Shape(format!("Lyapunov solve for {}x{} matrix", a.rows(), a.cols())));
    }
    let verdict = is_hurwitz(a)?;
    if !verdict.hurwitz {
        return Err(Error::NotHurwitz {
            max_real_part: verdict.margin,
        });
    }
    let n = a.rows();
    let at = a.transpose();
    let id = DenseMatrix::identity(n);
    // row-major vec: vec(AᵀP) = (Aᵀ ⊗ I) vec(P), vec(PA) = (I ⊗ Aᵀ) vec(P)
    let big = &at.kron(&id) + &id.kron(&at);
    let lu = big.lu()?;
    let rhs: Vec<f64> = id.scale(-1.0).as_slice().to_vec();
    let mut x = lu.solve(&rhs);
    for _ in 0..3 {
        let bx = big.matvec(&x);
        let res: Vec<f64> = rhs.iter().zip(&bx).map(|(r, b)| r - b).collect();
        if res.iter().all(|v| v.abs() < 1e-15) {
            break;
        }
        let dx = lu.solve(&res);
        x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
    }
    let p = DenseMatrix::from_vec(n, n, x)?.symmetrized();
    let residual = lyapunov_residual(a, &p);
    if !residual.is_finite() || residual >= RESIDUAL_TOL * p.max_abs().max(1.0) {
        return Err(Error::Numerical(format!("Lyapunov residual {residual:.3e} too large")));
    }
    Ok(p)
}

/// Max-abs entry of `AᵀP + PA + I`.
pub fn lyapunov_residual(a: &DenseMatrix, p: &DenseMatrix) -> f64 {
    let r = &(&(&a.transpose() * p) + &(p * a)) + &DenseMatrix::identity(a.rows());
    r.max_abs()
}
