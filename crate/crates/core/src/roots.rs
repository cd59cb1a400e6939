//! Bracketing and bisection for monotone scalar functions.

use crate::error::{Error, Result};

pub const REL_TOL: f64 = 1e-10;
pub const MAX_ITER: usize = 200;

/// Bisection on `[lo, hi]` where `f(lo)` and `f(hi)` differ in sign.
/// Halves geometrically when both ends are positive, which gives relative
/// accuracy across many decades.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::Numerical(format!(
            "no sign change on [{lo:e}, {hi:e}]: f = {f_lo:e}, {f_hi:e}"
        )));
    }
    for _ in 0..MAX_ITER {
        let mid = if lo > 0.0 && hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= REL_TOL * hi.abs().max(lo.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Smallest `x = start·factor^k < limit` at which `pred` holds, together with
/// the previous scan point. `None` when the scan reaches `limit`.
pub fn geometric_scan<P: Fn(f64) -> bool>(start: f64, factor: f64, limit: f64, pred: P) -> Option<(f64, f64)> {
    let mut prev = start;
    if pred(start) {
        return Some((start, start));
    }
    let mut x = start * factor;
    while x < limit {
        if pred(x) {
            return Some((prev, x));
        }
        prev = x;
        x *= factor;
    }
    None
}

/// Doubles `x` from `start` until `pred` holds (at most [`MAX_ITER`] times).
pub fn expand_up<P: Fn(f64) -> bool>(start: f64, pred: P) -> Result<f64> {
    let mut x = start;
    for _ in 0..MAX_ITER {
        if pred(x) {
            return Ok(x);
        }
        x *= 2.0;
    }
    Err(Error::Numerical(format!("bracket expansion from {start:e} failed after {MAX_ITER} doublings")))
}

/// Halves `x` from `start` until `pred` holds (at most [`MAX_ITER`] times).
pub fn expand_down<P: Fn(f64) -> bool>(start: f64, pred: P) -> Result<f64> {
    let mut x = start;
    for _ in 0..MAX_ITER {
        if pred(x) {
            return Ok(x);
        }
        x *= 0.5;
    }
    Err(Error::Numerical(format!("bracket contraction from {start:e} failed after {MAX_ITER} halvings")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_square_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn relative_accuracy_over_decades() {
        let target = 3.7e-26;
        let r = bisect(|x| x - target, 1e-60, 1.0).unwrap();
        assert!((r / target - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_missing_sign_change() {
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn scan_and_expand() {
        let (a, b) = geometric_scan(1e-6, 1.2, 1e3, |x| x > 0.5).unwrap();
        assert!(a <= 0.5 && b > 0.5 && b / a < 1.21);
        assert!(geometric_scan(1e-6, 1.2, 1e3, |x| x > 1e4).is_none());
        assert_eq!(expand_up(1.0, |x| x >= 8.0).unwrap(), 8.0);
        assert!(expand_down(1.0, |_| false).is_err());
    }
}
