//! Q-filter disturbance observer: inverse nominal model with filter `Q_q`,
//! input filter `Q_p`, and the saturated disturbance estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{build_cq, build_m, build_t, dot, shift, unit_upper_inverse, DenseMatrix};
use crate::model::NominalModel;

/// Q-filter parameters: order `l`, relative degree `m`, denominator
/// coefficients `a`, numerator coefficients `c`, time constant `tau` and
/// saturation level `s_bar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QFilterConfig {
    pub l: usize,
    pub m: usize,
    pub a: Vec<f64>,
    #[serde(default)]
    pub c: Vec<f64>,
    pub tau: f64,
    pub s_bar: f64,
}

impl QFilterConfig {
    pub fn validate(&self, nu: usize) -> Result<()> {
        if !(self.l >= self.m && self.m > nu) {
            return Err(Error::Config(format!(
                "Q-filter needs l >= m > nu, got l={}, m={}, nu={nu}",
                self.l, self.m
            )));
        }
        if self.a.len() != self.l {
            return Err(Error::Config(format!(
                "Q-filter has {} denominator coefficients, expected l = {}",
                self.a.len(),
                self.l
            )));
        }
        if self.a.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("Q-filter denominator coefficients must be positive".into()));
        }
        if self.c.len() != self.l - self.m {
            return Err(Error::Config(format!(
                "Q-filter has {} numerator coefficients, expected l - m = {}",
                self.c.len(),
                self.l - self.m
            )));
        }
        if self.c.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("Q-filter numerator coefficients must be nonnegative".into()));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.s_bar > 0.0) {
            return Err(Error::Config(format!("saturation level must be positive, got {}", self.s_bar)));
        }
        Ok(())
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        Self { tau, ..self.clone() }
    }

    pub fn a0(&self) -> f64 {
        self.a[0]
    }

    /// `T_τ`.
    pub fn t_matrix(&self, tau: f64) -> Result<DenseMatrix> {
        build_t(&self.a, tau)
    }

    /// `C_τ`.
    pub fn c_row(&self, tau: f64) -> Result<DenseMatrix> {
        build_cq(self.a0(), &self.c, tau, self.l, self.m)
    }
}

/// Observer internal states `z̄`, `q`, `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DobState {
    pub z_bar: Vec<f64>,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl DobState {
    /// Zero initial condition.
    pub fn zeros(nz: usize, l: usize) -> Self {
        Self {
            z_bar: vec![0.0; nz],
            q: vec![0.0; l],
            p: vec![0.0; l],
        }
    }
}

/// Result of the saturation: estimate and whether the clamp was active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub dhat: f64,
    pub active: bool,
}

/// Observer with every τ-dependent row precomputed.
#[derive(Debug, Clone)]
pub struct Dob {
    pub cfg: QFilterConfig,
    pub s_bar_matrix: DenseMatrix,
    pub coupling_bar: Vec<f64>,
    /// Coefficients of `q` in `w`.
    pub w_q: Vec<f64>,
    /// Coefficients of `z̄` in `w`.
    pub w_zbar: Vec<f64>,
    /// `(a₀/τˡ) C_τ`.
    pub yp_row: Vec<f64>,
    /// `(a₀/τˡ) T_τ ê_l`.
    pub q_inject: Vec<f64>,
    /// `(a₀/τˡ) ê₁ᵀ T_τ`.
    pub p_feedback: Vec<f64>,
}

impl Dob {
    pub fn new(cfg: &QFilterConfig, nom: &NominalModel) -> Result<Self> {
        let nu = nom.phi.len();
        cfg.validate(nu)?;
        let l = cfg.l;
        let tau = cfg.tau;
        let t = cfg.t_matrix(tau)?;
        let t_inv = unit_upper_inverse(&t);
        let c = cfg.c_row(tau)?;
        let scale = cfg.a0() / tau.powi(l as i32);

        let stack = &build_m(&c, l, nu)? * &t_inv;
        let phi_part = &DenseMatrix::row_vector(&nom.phi) * &stack;
        let chain = &(&c * &shift(l).pow(nu as u32)) * &t_inv;
        let w_q: Vec<f64> = (0..l)
            .map(|k| (chain[(0, k)] - phi_part[(0, k)]) / nom.gain)
            .collect();
        let w_zbar: Vec<f64> = nom.psi.iter().map(|p| -p / nom.gain).collect();

        Ok(Self {
            cfg: cfg.clone(),
            s_bar_matrix: nom.s.clone(),
            coupling_bar: nom.coupling.clone(),
            w_q,
            w_zbar,
            yp_row: c.as_slice().iter().map(|v| v * scale).collect(),
            q_inject: t.column(l - 1).iter().map(|v| v * scale).collect(),
            p_feedback: t.row(0).iter().map(|v| v * scale).collect(),
        })
    }

    pub fn l(&self) -> usize {
        self.cfg.l
    }

    /// `w = −(ψ̄ᵀz̄ + φ̄ᵀM_l^ν(C_τ)T_τ⁻¹q)/ḡ + C_τA_l^νT_τ⁻¹q/ḡ`.
    pub fn compute_w(&self, z_bar: &[f64], q: &[f64]) -> f64 {
        dot(&self.w_zbar, z_bar) + dot(&self.w_q, q)
    }

    /// `y_p = (a₀/τˡ) C_τ p`.
    pub fn compute_yp(&self, p: &[f64]) -> f64 {
        dot(&self.yp_row, p)
    }

    /// Symmetric saturation of `w − y_p` at `s̄`.
    pub fn dhat(&self, w: f64, y_p: f64) -> Estimate {
        saturate(w - y_p, self.cfg.s_bar)
    }

    /// Observer derivatives `(ż̄, q̇, ṗ)` for measured output `y_meas` and
    /// plant input `u`.
    pub fn deriv(&self, state: &DobState, y_meas: f64, u: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = self.l();
        let mut zb_dot = self.s_bar_matrix.matvec(&state.z_bar);
        zb_dot
            .iter_mut()
            .zip(&self.coupling_bar)
            .for_each(|(z, g)| *z += g * y_meas);
        let innov = state.q[0] - y_meas;
        let mut q_dot: Vec<f64> = (0..l)
            .map(|i| if i + 1 < l { state.q[i + 1] } else { 0.0 })
            .collect();
        q_dot.iter_mut().zip(&self.q_inject).for_each(|(qd, k)| *qd -= k * innov);
        let mut p_dot: Vec<f64> = (0..l)
            .map(|i| if i + 1 < l { state.p[i + 1] } else { 0.0 })
            .collect();
        p_dot[l - 1] = -dot(&self.p_feedback, &state.p) + u;
        (zb_dot, q_dot, p_dot)
    }
}

/// `Π(x)`: identity inside `[−s̄, s̄]`, `sgn(x)·s̄` outside.
pub fn saturate(x: f64, s_bar: f64) -> Estimate {
    if x.abs() <= s_bar {
        Estimate { dhat: x, active: false }
    } else {
        Estimate {
            dhat: s_bar.copysign(x),
            active: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nominal(nu: usize, phi: Vec<f64>, psi: f64) -> NominalModel {
        assert_eq!(phi.len(), nu);
        NominalModel::new(phi, vec![psi], 1.0, DenseMatrix::from_rows(1, 1, &[-1.0]).unwrap(), vec![1.0]).unwrap()
    }

    fn cfg(l: usize, m: usize, a: Vec<f64>, tau: f64) -> QFilterConfig {
        QFilterConfig {
            l,
            m,
            a,
            c: vec![],
            tau,
            s_bar: 10.0,
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(2, 2, vec![1.0, 2.0], 1.0).validate(1).is_ok());
        assert!(cfg(2, 2, vec![1.0, 2.0], 1.0).validate(2).is_err());
        assert!(cfg(2, 2, vec![1.0, -2.0], 1.0).validate(1).is_err());
        assert!(cfg(2, 2, vec![1.0, 2.0], 0.0).validate(1).is_err());
        let mut c = cfg(3, 2, vec![1.0, 2.0, 1.0], 1.0);
        assert!(c.validate(1).is_err());
        c.c = vec![0.5];
        assert!(c.validate(1).is_ok());
    }

    #[test]
    fn zero_state_is_stationary() {
        let dob = Dob::new(&cfg(2, 2, vec![1.0, 2.0], 1.0), &nominal(1, vec![0.0], 0.0)).unwrap();
        let (a, b, c) = dob.deriv(&DobState::zeros(1, 2), 0.0, 0.0);
        assert!(a.iter().chain(&b).chain(&c).all(|v| *v == 0.0));
    }

    #[test]
    fn q_and_p_dynamics_examples() {
        let dob = Dob::new(&cfg(2, 2, vec![1.0, 2.0], 1.0), &nominal(1, vec![0.0], 0.0)).unwrap();
        let st = DobState {
            z_bar: vec![0.0],
            q: vec![1.0, 0.0],
            p: vec![0.0, 0.0],
        };
        let (_, qd, pd) = dob.deriv(&st, 0.0, 1.0);
        assert_eq!(qd, vec![-2.0, -1.0]);
        assert_eq!(pd, vec![0.0, 1.0]);
    }

    #[test]
    fn w_examples() {
        let dob = Dob::new(&cfg(3, 3, vec![1.0, 1.0, 1.0], 1.0), &nominal(2, vec![0.0, 0.0], 0.0)).unwrap();
        assert_eq!(dob.compute_w(&[0.0], &[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(dob.compute_w(&[0.0], &[1.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn yp_example() {
        let dob = Dob::new(&cfg(2, 2, vec![1.0, 3.0], 0.5), &nominal(1, vec![0.0], 0.0)).unwrap();
        assert_eq!(dob.compute_yp(&[1.0, 0.0]), 4.0);
        assert_eq!(dob.compute_yp(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn saturation_examples() {
        assert_eq!(saturate(0.5, 1.0), Estimate { dhat: 0.5, active: false });
        assert_eq!(saturate(2.0, 1.0), Estimate { dhat: 1.0, active: true });
        assert_eq!(saturate(-3.0, 1.0), Estimate { dhat: -1.0, active: true });
    }

    #[test]
    fn q_filter_has_unit_dc_gain() {
        // integrate q̇ under constant y_meas until it settles
        let dob = Dob::new(&cfg(3, 3, vec![1.0, 3.0, 3.0], 0.2), &nominal(2, vec![-1.0, -2.0], 0.4)).unwrap();
        let y = 0.37;
        let mut st = DobState::zeros(1, 3);
        let h = 1e-3;
        for _ in 0..40_000 {
            let k1 = dob.deriv(&st, y, 0.0).1;
            let mid: Vec<f64> = st.q.iter().zip(&k1).map(|(q, k)| q + 0.5 * h * k).collect();
            let k2 = dob.deriv(&DobState { q: mid, ..st.clone() }, y, 0.0).1;
            let mid: Vec<f64> = st.q.iter().zip(&k2).map(|(q, k)| q + 0.5 * h * k).collect();
            let k3 = dob.deriv(&DobState { q: mid, ..st.clone() }, y, 0.0).1;
            let end: Vec<f64> = st.q.iter().zip(&k3).map(|(q, k)| q + h * k).collect();
            let k4 = dob.deriv(&DobState { q: end, ..st.clone() }, y, 0.0).1;
            for i in 0..3 {
                st.q[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        assert!((st.q[0] - y).abs() < 1e-9, "q1 = {}", st.q[0]);
    }

    proptest! {
        #[test]
        fn estimate_never_exceeds_saturation(x in -1e6..1e6f64, s in 1e-3..1e3f64) {
            prop_assert!(saturate(x, s).dhat.abs() <= s);
        }

        #[test]
        fn w_and_yp_are_linear(q in proptest::collection::vec(-5.0..5.0f64, 3), zb in -5.0..5.0f64, alpha in -3.0..3.0f64) {
            let dob = Dob::new(&cfg(3, 3, vec![1.0, 3.0, 3.0], 0.3), &nominal(2, vec![-1.0, -2.0], 0.4)).unwrap();
            let scaled: Vec<f64> = q.iter().map(|v| alpha * v).collect();
            let lhs = dob.compute_w(&[alpha * zb], &scaled);
            let rhs = alpha * dob.compute_w(&[zb], &q);
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
            let lhs = dob.compute_yp(&scaled);
            let rhs = alpha * dob.compute_yp(&q);
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
        }
    }
}
