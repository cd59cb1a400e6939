use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Extremal eigenvalues of a symmetric positive definite matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Verdict of a Hurwitz test: `margin` is the largest eigenvalue real part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurwitzVerdict {
    pub hurwitz: bool,
    pub margin: f64,
}

const SYM_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, in
/// ascending order.
pub fn sym_eigenvalues(p: &DenseMatrix) -> Result<Vec<f64>> {
    if !p.is_square() {
        return Err(Error::Shape(format!("eigenvalues of {}x{} matrix", p.rows(), p.cols())));
    }
    let scale = p.max_abs().max(1.0);
    let asym = p.max_asymmetry();
    if asym > SYM_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let n = p.rows();
    let mut a = p.symmetrized();
    let off = |a: &DenseMatrix| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&a) > SYM_TOL * scale {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Numerical("Jacobi sweeps did not converge".into()));
        }
        sweeps += 1;
        for pi in 0..n {
            for qi in pi + 1..n {
                let apq = a[(pi, qi)];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(qi, qi)] - a[(pi, pi)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, pi)];
                    let akq = a[(k, qi)];
                    a[(k, pi)] = c * akp - s * akq;
                    a[(k, qi)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(pi, k)];
                    let aqk = a[(qi, k)];
                    a[(pi, k)] = c * apk - s * aqk;
                    a[(qi, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eigs.sort_by(|x, y| x.total_cmp(y));
    Ok(eigs)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_extremal_eigs(p: &DenseMatrix) -> Result<SpectrumSummary> {
    let eigs = sym_eigenvalues(p)?;
    Ok(SpectrumSummary {
        lambda_min: eigs[0],
        lambda_max: eigs[eigs.len() - 1],
    })
}

/// Like [`sym_extremal_eigs`] but rejects matrices that are not positive
/// definite.
pub fn spd_extremal_eigs(p: &DenseMatrix) -> Result<SpectrumSummary> {
    let s = sym_extremal_eigs(p)?;
    if s.lambda_min <= 0.0 {
        return Err(Error::NotPositiveDefinite(s.lambda_min));
    }
    Ok(s)
}

/// Eigenvalues of a general real square matrix as `(re, im)` pairs.
///
/// Householder reduction to upper Hessenberg form followed by the
/// Francis double-shift QR iteration.
pub fn eigenvalues(a: &DenseMatrix) -> Result<Vec<(f64, f64)>> {
    if !a.is_square() {
        return Err(Error::Shape(format!("eigenvalues of {}x{} matrix", a.rows(), a.cols())));
    }
    let n = a.rows();
    let mut h: Vec<Vec<f64>> = a.to_nested();
    hessenberg(&mut h);
    hqr(&mut h, n)
}

/// Hurwitz test with the largest real part as margin.
pub fn is_hurwitz(a: &DenseMatrix) -> Result<HurwitzVerdict> {
    let margin = eigenvalues(a)?
        .iter()
        .fold(f64::NEG_INFINITY, |m, (re, _)| m.max(*re));
    Ok(HurwitzVerdict {
        hurwitz: margin < 0.0,
        margin,
    })
}

fn hessenberg(h: &mut [Vec<f64>]) {
    let n = h.len();
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let alpha_norm: f64 = (k + 1..n).map(|i| h[i][k] * h[i][k]).sum::<f64>().sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let alpha = if h[k + 1][k] > 0.0 { -alpha_norm } else { alpha_norm };
        let mut v = vec![0.0; n];
        v[k + 1] = h[k + 1][k] - alpha;
        for i in k + 2..n {
            v[i] = h[i][k];
        }
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // H <- (I - 2vv^T/|v|^2) H (I - 2vv^T/|v|^2)
        for j in 0..n {
            let s: f64 = (k + 1..n).map(|i| v[i] * h[i][j]).sum::<f64>() * 2.0 / vnorm2;
            for i in k + 1..n {
                h[i][j] -= s * v[i];
            }
        }
        for row in h.iter_mut() {
            let s: f64 = (k + 1..n).map(|j| row[j] * v[j]).sum::<f64>() * 2.0 / vnorm2;
            for j in k + 1..n {
                row[j] -= s * v[j];
            }
        }
        for i in k + 2..n {
            h[i][k] = 0.0;
        }
    }
}

fn hqr(a: &mut [Vec<f64>], n: usize) -> Result<Vec<(f64, f64)>> {
    const EPS: f64 = 1e-12;
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }
    let cap = 100 * n.max(1);
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let (mut p, mut q, mut r) = (0.0f64, 0.0f64, 0.0f64);
    while nn >= 0 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 1 {
                let lu = l as usize;
                let s = a[lu - 1][lu - 1].abs() + a[lu][lu].abs();
                let s = if s == 0.0 { anorm } else { s };
                if a[lu][lu - 1].abs() <= EPS * s {
                    a[lu][lu - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let nu_ = nn as usize;
            let x = a[nu_][nu_];
            if l == nn {
                wr[nu_] = x + t;
                wi[nu_] = 0.0;
                nn -= 1;
                break;
            }
            let y = a[nu_ - 1][nu_ - 1];
            let w = a[nu_][nu_ - 1] * a[nu_ - 1][nu_];
            if l == nn - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                let z = q.abs().sqrt();
                let xx = x + t;
                if q >= 0.0 {
                    let z = p + z.copysign(p);
                    wr[nu_ - 1] = xx + z;
                    wr[nu_] = if z != 0.0 { xx - w / z } else { xx + z };
                    wi[nu_ - 1] = 0.0;
                    wi[nu_] = 0.0;
                } else {
                    wr[nu_ - 1] = xx + p;
                    wr[nu_] = xx + p;
                    wi[nu_ - 1] = -z;
                    wi[nu_] = z;
                }
                nn -= 2;
                break;
            }
            if its == cap {
                return Err(Error::Numerical(format!(
                    "QR iteration did not converge after {cap} iterations"
                )));
            }
            let (mut x, mut y, mut w) = (x, y, w);
            if its == 10 || its == 20 {
                t += x;
                for i in 0..=nu_ {
                    a[i][i] -= x;
                }
                let s = a[nu_][nu_ - 1].abs() + a[nu_ - 1][nu_ - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let lu = l as usize;
            let mut m = nu_ as isize - 2;
            while m >= l {
                let mu = m as usize;
                let z = a[mu][mu];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[mu + 1][mu] + a[mu][mu + 1];
                q = a[mu + 1][mu + 1] - z - rr - ss;
                r = a[mu + 2][mu + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[mu][mu - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[mu - 1][mu - 1].abs() + z.abs() + a[mu + 1][mu + 1].abs());
                if u <= EPS * v {
                    break;
                }
                m -= 1;
            }
            let mu = m as usize;
            for i in mu + 2..=nu_ {
                a[i][i - 2] = 0.0;
                if i != mu + 2 {
                    a[i][i - 3] = 0.0;
                }
            }
            let mut k = mu;
            while k < nu_ {
                if k != mu {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = if k + 1 != nu_ { a[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == mu {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu_ {
                        let mut pp = a[k][j] + q * a[k + 1][j];
                        if k + 1 != nu_ {
                            pp += r * a[k + 2][j];
                            a[k + 2][j] -= pp * z;
                        }
                        a[k + 1][j] -= pp * y;
                        a[k][j] -= pp * x;
                    }
                    let mmin = if nu_ < k + 3 { nu_ } else { k + 3 };
                    for i in lu..=mmin {
                        let mut pp = x * a[i][k] + y * a[i][k + 1];
                        if k + 1 != nu_ {
                            pp += z * a[i][k + 2];
                            a[i][k + 2] -= pp * r;
                        }
                        a[i][k + 1] -= pp * q;
                        a[i][k] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: usize, cols: usize, e: &[f64]) -> DenseMatrix {
        DenseMatrix::from_rows(rows, cols, e).unwrap()
    }

    #[test]
    fn extremal_eigs_examples() {
        let s = sym_extremal_eigs(&DenseMatrix::diag(&[1.0, 4.0])).unwrap();
        assert_eq!((s.lambda_min, s.lambda_max), (1.0, 4.0));
        let s = sym_extremal_eigs(&m(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert!((s.lambda_min - 1.0).abs() < 1e-12 && (s.lambda_max - 3.0).abs() < 1e-12);
        let s = sym_extremal_eigs(&DenseMatrix::identity(3).scale(0.5)).unwrap();
        assert_eq!((s.lambda_min, s.lambda_max), (0.5, 0.5));
    }

    #[test]
    fn asymmetric_rejected() {
        let err = sym_extremal_eigs(&m(2, 2, &[1.0, 2.0, 0.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::NotSymmetric(_)));
    }

    #[test]
    fn indefinite_flagged_when_required() {
        let p = DenseMatrix::diag(&[-1.0, 2.0]);
        assert!(sym_extremal_eigs(&p).is_ok());
        assert!(matches!(spd_extremal_eigs(&p), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn hurwitz_examples() {
        let v = is_hurwitz(&m(2, 2, &[0.0, 1.0, -2.0, -3.0])).unwrap();
        assert!(v.hurwitz);
        assert!((v.margin + 1.0).abs() < 1e-12);
        let v = is_hurwitz(&m(2, 2, &[0.0, 1.0, 0.0, 0.0])).unwrap();
        assert!(!v.hurwitz);
        assert_eq!(v.margin, 0.0);
        let v = is_hurwitz(&DenseMatrix::identity(2).scale(-1.0)).unwrap();
        assert!(v.hurwitz && (v.margin + 1.0).abs() < 1e-15);
    }

    #[test]
    fn complex_pair_and_larger_matrix() {
        // rotation generator with damping: eigenvalues -0.5 +- 2i
        let e = eigenvalues(&m(2, 2, &[-0.5, 2.0, -2.0, -0.5])).unwrap();
        for (re, im) in e {
            assert!((re + 0.5).abs() < 1e-12 && (im.abs() - 2.0).abs() < 1e-12);
        }
        // companion of (s+1)(s+2)(s+3)(s+4) = s^4 + 10 s^3 + 35 s^2 + 50 s + 24
        let c = m(
            4,
            4,
            &[
                0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -24.0, -50.0, -35.0, -10.0,
            ],
        );
        let mut re: Vec<f64> = eigenvalues(&c).unwrap().iter().map(|e| e.0).collect();
        re.sort_by(|a, b| a.total_cmp(b));
        for (got, want) in re.iter().zip([-4.0, -3.0, -2.0, -1.0]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    fn closed_form_2x2(a: f64, b: f64, d: f64) -> (f64, f64) {
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        (mean - rad, mean + rad)
    }

    proptest! {
        #[test]
        fn jacobi_matches_closed_form_2x2(a in -5.0..5.0f64, b in -5.0..5.0f64, d in -5.0..5.0f64) {
            let s = sym_extremal_eigs(&m(2, 2, &[a, b, b, d])).unwrap();
            let (lo, hi) = closed_form_2x2(a, b, d);
            prop_assert!((s.lambda_min - lo).abs() < 1e-10);
            prop_assert!((s.lambda_max - hi).abs() < 1e-10);
        }

        #[test]
        fn jacobi_matches_trigonometric_3x3(e in proptest::collection::vec(-3.0..3.0f64, 6)) {
            let p = m(3, 3, &[e[0], e[1], e[2], e[1], e[3], e[4], e[2], e[4], e[5]]);
            // closed-form eigenvalues of a symmetric 3x3 (trigonometric method)
            let q = (e[0] + e[3] + e[5]) / 3.0;
            let p1 = e[1] * e[1] + e[2] * e[2] + e[4] * e[4];
            let p2 = (e[0] - q).powi(2) + (e[3] - q).powi(2) + (e[5] - q).powi(2) + 2.0 * p1;
            let pp = (p2 / 6.0).sqrt();
            prop_assume!(pp > 1e-6);
            let bm = &(&p - &DenseMatrix::identity(3).scale(q)).scale(1.0 / pp);
            let det = bm[(0, 0)] * (bm[(1, 1)] * bm[(2, 2)] - bm[(1, 2)] * bm[(2, 1)])
                - bm[(0, 1)] * (bm[(1, 0)] * bm[(2, 2)] - bm[(1, 2)] * bm[(2, 0)])
                + bm[(0, 2)] * (bm[(1, 0)] * bm[(2, 1)] - bm[(1, 1)] * bm[(2, 0)]);
            let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
            let hi = q + 2.0 * pp * phi.cos();
            let lo = q + 2.0 * pp * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
            let s = sym_extremal_eigs(&p).unwrap();
            prop_assert!((s.lambda_min - lo).abs() < 1e-10);
            prop_assert!((s.lambda_max - hi).abs() < 1e-10);
        }

        #[test]
        fn hurwitz_matches_2x2_trace_det(a in -4.0..4.0f64, b in -4.0..4.0f64, c in -4.0..4.0f64, d in -4.0..4.0f64) {
            let tr = a + d;
            let det = a * d - b * c;
            prop_assume!(tr.abs() > 1e-6 && det.abs() > 1e-6);
            let v = is_hurwitz(&m(2, 2, &[a, b, c, d])).unwrap();
            prop_assert_eq!(v.hurwitz, tr < 0.0 && det > 0.0);
        }
    }
}
