//! Coordinate change to fast observer coordinates `(ξ, ζ)` and slow error
//! `e`, the block matrices of the transformed loop, and residual checks.

use crate::dob::QFilterConfig;
use crate::error::{Error, Result};
use crate::linalg::{build_m, dot, is_hurwitz, shift, tau_powers_diag, unit_upper_inverse, DenseMatrix};
use crate::model::{AugmentedNominal, NominalModel, OuterController, PlantModel};
use crate::signals::Signal;

/// Every matrix of the transformed loop at a given `(τ, g)`.
#[derive(Debug, Clone)]
pub struct BlockMatrices {
    pub tau: f64,
    pub gain: f64,
    pub a11: DenseMatrix,
    pub a12: DenseMatrix,
    pub a21: DenseMatrix,
    pub a22: DenseMatrix,
    pub a_f: DenseMatrix,
    /// Row multiplying `ξ` in the `τ`-perturbation (length `l`).
    pub cq_bold: Vec<f64>,
    /// Row multiplying `Ξ*_ξ` in the `τ`-perturbation (length `n_e`).
    pub cbar_bold: Vec<f64>,
    pub f1: DenseMatrix,
    pub f2: DenseMatrix,
    pub f: DenseMatrix,
    pub n_xi: Vec<f64>,
    pub n_zeta: Vec<f64>,
    pub n_eta: Vec<f64>,
    pub n_vec: Vec<f64>,
    pub n_e: Vec<f64>,
    pub check_e: Vec<f64>,
    pub alpha: Vec<f64>,
    pub cq_check: Vec<f64>,
    pub c1: DenseMatrix,
    pub t1: DenseMatrix,
    pub cbar1: DenseMatrix,
    pub delta: DenseMatrix,
    /// `C₁A_l^νT₁⁻¹`.
    pub chain_row: Vec<f64>,
    /// Largest eigenvalue real part of `A_f`.
    pub fast_margin: f64,
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i - 1] = 1.0;
    v
}

fn outer(col: &[f64], row: &[f64]) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(col.len(), row.len());
    for (i, c) in col.iter().enumerate() {
        for (j, r) in row.iter().enumerate() {
            m[(i, j)] = c * r;
        }
    }
    m
}

/// `A₁₁`, `A₁₂`, `A₂₁`, `A₂₂` and `A_f` at gain `g` (independent of `τ`).
pub fn fast_matrix(nom: &NominalModel, qcfg: &QFilterConfig, g: f64) -> Result<DenseMatrix> {
    Ok(fast_blocks(nom, qcfg, g)?.4)
}

#[allow(clippy::type_complexity)]
fn fast_blocks(
    nom: &NominalModel,
    qcfg: &QFilterConfig,
    g: f64,
) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix, DenseMatrix, DenseMatrix)> {
    let nu = nom.phi.len();
    qcfg.validate(nu)?;
    let l = qcfg.l;
    let a0 = qcfg.a0();
    let gb = nom.gain;
    let t1 = qcfg.t_matrix(1.0)?;
    let t1_inv = unit_upper_inverse(&t1);
    let c1 = qcfg.c_row(1.0)?;
    let al = shift(l);
    let chain = &(&c1 * &al.pow(nu as u32)) * &t1_inv;
    let e_l = unit(l, l);
    let e_1 = unit(l, 1);
    let e_nu = unit(l, nu);
    let t1_el = t1.column(l - 1);
    let cbar1: Vec<f64> = (0..l).map(|k| c1[(0, k)] - t1[(0, k)]).collect();

    let a11 = &(&al - &outer(&t1_el, &e_1).scale(a0)) + &outer(&e_nu, chain.as_slice()).scale(g / gb);
    let a12 = outer(&e_nu, c1.as_slice()).scale(-g * a0);
    let a21 = outer(&e_l, chain.as_slice()).scale(-1.0 / gb);
    let a22 = &al + &outer(&e_l, &cbar1).scale(a0);
    let a_f = a11.hstack(&a12).vstack(&a21.hstack(&a22));
    Ok((a11, a12, a21, a22, a_f))
}

/// Rows whose `τ^{ν−1−k}`-weighted sum is `𝐂_τ`: row `k` is
/// `φ̄_k ê_kᵀ M_l^ν(C₁) T₁⁻¹ / ḡ`.
pub fn cq_bold_terms(nom: &NominalModel, qcfg: &QFilterConfig) -> Result<Vec<Vec<f64>>> {
    let nu = nom.phi.len();
    let l = qcfg.l;
    let t1_inv = unit_upper_inverse(&qcfg.t_matrix(1.0)?);
    let stack = &build_m(&qcfg.c_row(1.0)?, l, nu)? * &t1_inv;
    Ok((0..nu)
        .map(|k| stack.row(k).iter().map(|v| v * nom.phi[k] / nom.gain).collect())
        .collect())
}

/// Evaluates `𝐂_τ` from [`cq_bold_terms`].
pub fn cq_from_terms(terms: &[Vec<f64>], tau: f64) -> Vec<f64> {
    let nu = terms.len();
    let l = terms.first().map_or(0, |r| r.len());
    let mut row = vec![0.0; l];
    for (k, term) in terms.iter().enumerate() {
        let w = tau.powi((nu - 1 - k) as i32);
        for (dst, v) in row.iter_mut().zip(term) {
            *dst += w * v;
        }
    }
    row
}

/// `𝐂_τ = φ̄ᵀ diag(τ^{ν−1},…,1) M_l^ν(C₁) T₁⁻¹ / ḡ`.
pub fn cq_bold(nom: &NominalModel, qcfg: &QFilterConfig, tau: f64) -> Result<Vec<f64>> {
    Ok(cq_from_terms(&cq_bold_terms(nom, qcfg)?, tau))
}

/// `𝐂̄_τ = φ̄ᵀ M_l^ν(τ⁻¹C̄_τ) T_τ⁻¹ [ê₂ … ê_{ν+1} 0] / ḡ`, a row of length `n_e`.
pub fn cbar_bold(nom: &NominalModel, qcfg: &QFilterConfig, tau: f64, n_e: usize) -> Result<Vec<f64>> {
    let nu = nom.phi.len();
    let l = qcfg.l;
    let a0 = qcfg.a0();
    // τ⁻¹(C_τ − ê₁ᵀT_τ), formed without cancellation
    let mut scaled = DenseMatrix::zeros(1, l);
    for k in 1..l {
        let ck = if k <= qcfg.c.len() { qcfg.c[k - 1] } else { 0.0 };
        scaled[(0, k)] = (ck - qcfg.a[k]) * tau.powi(k as i32 - 1) / a0;
    }
    let t_inv = unit_upper_inverse(&qcfg.t_matrix(tau)?);
    let stack = &build_m(&scaled, l, nu)? * &t_inv;
    let mut row = vec![0.0; n_e];
    for (j, slot) in row.iter_mut().enumerate().take(nu) {
        // selector column j is ê_{j+2}
        *slot = (0..nu).map(|k| nom.phi[k] * stack[(k, j + 1)]).sum::<f64>() / nom.gain;
    }
    Ok(row)
}

/// Builds the block matrices at gain `g` and time constant `τ`.
pub fn build_blocks(
    plant: &PlantModel,
    nom: &NominalModel,
    ctrl: &OuterController,
    qcfg: &QFilterConfig,
    aug: &AugmentedNominal,
    g: f64,
    tau: f64,
) -> Result<BlockMatrices> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let nu = plant.nu;
    let l = qcfg.l;
    let n_e = aug.n_e();
    let a0 = qcfg.a0();
    let gb = nom.gain;
    let (a11, a12, a21, a22, a_f) = fast_blocks(nom, qcfg, g)?;
    let verdict = is_hurwitz(&a_f)?;
    if !verdict.hurwitz {
        return Err(Error::FastSubsystemUnstable {
            gain: g,
            max_real_part: verdict.margin,
        });
    }
    let t1 = qcfg.t_matrix(1.0)?;
    let t1_inv = unit_upper_inverse(&t1);
    let c1 = qcfg.c_row(1.0)?;
    let chain = &(&c1 * &shift(l).pow(nu as u32)) * &t1_inv;
    let cbar1 = DenseMatrix::row_vector(&(0..l).map(|k| c1[(0, k)] - t1[(0, k)]).collect::<Vec<_>>());

    let e_nu_ne = unit(n_e, nu);
    let f1 = outer(&e_nu_ne, chain.as_slice()).scale(-g / gb);
    let f2 = outer(&e_nu_ne, c1.as_slice()).scale(g * a0);
    let f = f1.hstack(&f2);

    let n_xi: Vec<f64> = unit(l, nu).iter().map(|v| v * g * ctrl.d).collect();
    let n_zeta: Vec<f64> = unit(l, l).iter().map(|v| -v * ctrl.d).collect();
    let n_eta = [n_xi.clone(), n_zeta.clone()].concat();

    let lay = aug.layout;
    let mut n_vec = vec![0.0; n_e];
    n_vec[nu - 1] = gb * ctrl.d;
    for (i, gi) in nom.coupling.iter().enumerate() {
        n_vec[lay.z_bar().start + i] = -gi;
    }
    for (i, ki) in ctrl.k.iter().enumerate() {
        n_vec[lay.theta().start + i] = *ki;
    }
    let mut n_err: Vec<f64> = n_vec.iter().map(|v| -v).collect();
    n_err[nu - 1] += (gb - g) * ctrl.d;

    let mut check_e = vec![0.0; 2 * l];
    check_e[nu - 1] = -g;
    check_e[2 * l - 1] += 1.0;
    let mut alpha = vec![0.0; 2 * l];
    for (i, v) in t1.column(l - 1).iter().enumerate() {
        alpha[i] = a0 * v;
    }
    let cq = cq_bold(nom, qcfg, tau)?;
    let mut cq_check = cq.clone();
    cq_check.extend(std::iter::repeat_n(0.0, l));

    Ok(BlockMatrices {
        tau,
        gain: g,
        a11,
        a12,
        a21,
        a22,
        a_f,
        cq_bold: cq,
        cbar_bold: cbar_bold(nom, qcfg, tau, n_e)?,
        f1,
        f2,
        f,
        n_xi,
        n_zeta,
        n_eta,
        n_vec,
        n_e: n_err,
        check_e,
        alpha,
        cq_check,
        c1,
        t1,
        cbar1,
        delta: tau_powers_diag(tau, l),
        chain_row: chain.as_slice().to_vec(),
        fast_margin: verdict.margin,
    })
}

/// Checks that `A_f` is Hurwitz on every gain of `grid`; returns the worst
/// margin.
pub fn check_fast_stability(nom: &NominalModel, qcfg: &QFilterConfig, grid: &[f64]) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for &g in grid {
        let verdict = is_hurwitz(&fast_matrix(nom, qcfg, g)?)?;
        if !verdict.hurwitz {
            return Err(Error::FastSubsystemUnstable {
                gain: g,
                max_real_part: verdict.margin,
            });
        }
        worst = worst.max(verdict.margin);
    }
    Ok(worst)
}

/// Fast coordinates and slow error.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedState {
    pub xi: Vec<f64>,
    pub zeta: Vec<f64>,
    pub eta: Vec<f64>,
    pub e: Vec<f64>,
}

/// Model data needed to move between original and transformed coordinates.
#[derive(Debug, Clone)]
pub struct TransformContext {
    pub plant: PlantModel,
    pub nom: NominalModel,
    pub ctrl: OuterController,
    pub qcfg: QFilterConfig,
    pub aug: AugmentedNominal,
    pub blocks: BlockMatrices,
}

impl TransformContext {
    /// Context at the true plant gain and the filter's own `τ`.
    pub fn new(
        plant: &PlantModel,
        nom: &NominalModel,
        ctrl: &OuterController,
        qcfg: &QFilterConfig,
        aug: &AugmentedNominal,
    ) -> Result<Self> {
        let blocks = build_blocks(plant, nom, ctrl, qcfg, aug, plant.gain, qcfg.tau)?;
        Ok(Self {
            plant: plant.clone(),
            nom: nom.clone(),
            ctrl: ctrl.clone(),
            qcfg: qcfg.clone(),
            aug: aug.clone(),
            blocks,
        })
    }

    pub fn tau(&self) -> f64 {
        self.qcfg.tau
    }

    /// `Ξ*_ξ = A_s χ + B r`.
    pub fn xi_star(&self, chi: &[f64], r: f64) -> Vec<f64> {
        self.aug.flow(chi, r)
    }

    /// `a₀Ξ*_ζ = (ḡ/g)(Lθ + D(r − x₁)) − ((φ−φ̄)ᵀx + ψᵀz − ψ̄ᵀz̄ + f_d + g·d)/g`,
    /// the noise-free form of `(u_r − 𝐝 + ḡDv/g)/a₀`.
    pub fn zeta_star(&self, chi: &[f64], r: f64, d: f64, t: f64) -> f64 {
        let lay = self.aug.layout;
        let (x, zb, th, z) = (&chi[lay.x()], &chi[lay.z_bar()], &chi[lay.theta()], &chi[lay.z()]);
        let g = self.plant.gain;
        let u_clean = dot(&self.ctrl.l, th) + self.ctrl.d * (r - x[0]);
        let mismatch: f64 = self.plant.phi.iter().zip(&self.nom.phi).zip(x).map(|((p, pb), xi)| (p - pb) * xi).sum();
        let rest = mismatch + dot(&self.plant.psi, z) - dot(&self.nom.psi, zb) + self.plant.nonlinearity.value(x, z, t) + g * d;
        ((self.nom.gain / g) * u_clean - rest / g) / self.qcfg.a0()
    }

    /// Time derivative of `Ξ*_ζ` along `χ̇` with signal rates `ṙ`, `ḋ`.
    #[allow(clippy::too_many_arguments)]
    pub fn zeta_star_rate(&self, chi: &[f64], chi_dot: &[f64], r_dot: f64, d_dot: f64, t: f64) -> f64 {
        let lay = self.aug.layout;
        let (x, z) = (&chi[lay.x()], &chi[lay.z()]);
        let (xd, zbd, thd, zd) = (&chi_dot[lay.x()], &chi_dot[lay.z_bar()], &chi_dot[lay.theta()], &chi_dot[lay.z()]);
        let g = self.plant.gain;
        let u_rate = dot(&self.ctrl.l, thd) + self.ctrl.d * (r_dot - xd[0]);
        let mismatch: f64 = self.plant.phi.iter().zip(&self.nom.phi).zip(xd).map(|((p, pb), v)| (p - pb) * v).sum();
        let (_, fd_rate) = self.plant.nonlinearity.value_and_rate(x, z, t, xd, zd);
        let rest = mismatch + dot(&self.plant.psi, zd) - dot(&self.nom.psi, zbd) + fd_rate + g * d_dot;
        ((self.nom.gain / g) * u_rate - rest / g) / self.qcfg.a0()
    }

    /// Maps original coordinates to `(ξ, ζ, e)`.
    ///
    /// `u_r` and `bfd` are the noisy controller output and lumped disturbance
    /// at the same instant, `v` the noise sample.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_transform(
        &self,
        q: &[f64],
        p: &[f64],
        chi: &[f64],
        chi_n: &[f64],
        r: f64,
        u_r: f64,
        bfd: f64,
        v: f64,
    ) -> TransformedState {
        let nu = self.plant.nu;
        let l = self.qcfg.l;
        let tau = self.tau();
        let xs = self.xi_star(chi, r);
        let zs = (u_r - bfd + self.nom.gain * self.ctrl.d * v / self.plant.gain) / self.qcfg.a0();
        let mut xi: Vec<f64> = (0..l)
            .map(|k| {
                let shifted = if k < nu { q[k] - chi[k] } else { q[k] };
                shifted * tau.powi(k as i32 - nu as i32)
            })
            .collect();
        xi[nu] -= xs[nu - 1];
        let mut zeta: Vec<f64> = (0..l).map(|k| p[k] * tau.powi(k as i32 - l as i32)).collect();
        zeta[0] -= zs;
        let eta = [xi.clone(), zeta.clone()].concat();
        let e = chi.iter().zip(chi_n).map(|(a, b)| a - b).collect();
        TransformedState { xi, zeta, eta, e }
    }

    /// Inverse of [`forward_transform`](Self::forward_transform) for the
    /// observer states: returns `(q, p)`.
    pub fn inverse_observer(&self, xi: &[f64], zeta: &[f64], chi: &[f64], r: f64, zeta_star: f64) -> (Vec<f64>, Vec<f64>) {
        let nu = self.plant.nu;
        let l = self.qcfg.l;
        let tau = self.tau();
        let xs = self.xi_star(chi, r);
        let q = (0..l)
            .map(|k| {
                let mut v = xi[k];
                if k == nu {
                    v += xs[nu - 1];
                }
                let base = if k < nu { chi[k] } else { 0.0 };
                base + v * tau.powi(nu as i32 - k as i32)
            })
            .collect();
        let p = (0..l)
            .map(|k| {
                let v = if k == 0 { zeta[0] + zeta_star } else { zeta[k] };
                v * tau.powi(l as i32 - k as i32)
            })
            .collect();
        (q, p)
    }

    /// Right-hand sides `(τξ̇, τζ̇, ė)` of the transformed loop.
    pub fn transformed_deriv(
        &self,
        ts: &TransformedState,
        xi_star: &[f64],
        xi_star_dot_nu: f64,
        zeta_star_dot: f64,
        v: f64,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let b = &self.blocks;
        let nu = self.plant.nu;
        let l = self.qcfg.l;
        let tau = self.tau();
        let g = self.plant.gain;
        let pert = dot(&b.cq_bold, &ts.xi) + dot(&b.cbar_bold, xi_star);

        let mut xi_rate = b.a11.matvec(&ts.xi);
        let a12z = b.a12.matvec(&ts.zeta);
        let noise_gain = self.qcfg.a0() / tau.powi(nu as i32);
        for k in 0..l {
            xi_rate[k] += a12z[k] + noise_gain * b.t1[(k, l - 1)] * v + b.n_xi[k] * v;
        }
        xi_rate[nu - 1] -= tau * g * pert;
        xi_rate[nu] -= tau * xi_star_dot_nu;

        let mut zeta_rate = b.a21.matvec(&ts.xi);
        let a22z = b.a22.matvec(&ts.zeta);
        for k in 0..l {
            zeta_rate[k] += a22z[k] + b.n_zeta[k] * v;
        }
        zeta_rate[l - 1] += tau * pert;
        zeta_rate[0] -= tau * zeta_star_dot;

        let mut e_rate = self.aug.a_s.matvec(&ts.e);
        let f1x = b.f1.matvec(&ts.xi);
        let f2z = b.f2.matvec(&ts.zeta);
        for k in 0..e_rate.len() {
            e_rate[k] += f1x[k] + f2z[k] + b.n_e[k] * v;
        }
        e_rate[nu - 1] += tau * g * pert;
        (xi_rate, zeta_rate, e_rate)
    }

    /// The right-hand side of the `w − y_p` expansion in fast coordinates.
    pub fn dhat_expansion(&self, ts: &TransformedState, xi_star: &[f64], bfd: f64, v: f64) -> f64 {
        let b = &self.blocks;
        let g = self.plant.gain;
        bfd + dot(&b.chain_row, &ts.xi) / self.nom.gain - self.qcfg.a0() * dot(b.c1.as_slice(), &ts.zeta)
            + (g - self.nom.gain) / g * self.ctrl.d * v
            - self.tau() * (dot(&b.cq_bold, &ts.xi) + dot(&b.cbar_bold, xi_star))
    }

    /// Relative residual `|(w − y_p) − expansion| / (1 + |w − y_p|)`.
    pub fn dhat_identity_residual(&self, w_minus_yp: f64, ts: &TransformedState, xi_star: &[f64], bfd: f64, v: f64) -> f64 {
        (w_minus_yp - self.dhat_expansion(ts, xi_star, bfd, v)).abs() / (1.0 + w_minus_yp.abs())
    }
}

/// State of the directly integrated transformed loop: `[ξ; ζ; e; χ_n]`.
#[derive(Debug, Clone)]
pub struct TransformedSystem<'a> {
    pub ctx: &'a TransformContext,
    pub reference: &'a Signal,
    pub disturbance: &'a Signal,
}

impl<'a> TransformedSystem<'a> {
    pub fn dim(&self) -> usize {
        2 * self.ctx.qcfg.l + 2 * self.ctx.aug.n_e()
    }

    /// Derivative of the stacked state at time `t` with held noise `v`.
    pub fn deriv(&self, t: f64, state: &[f64], v: f64) -> Vec<f64> {
        let ctx = self.ctx;
        let l = ctx.qcfg.l;
        let n_e = ctx.aug.n_e();
        let tau = ctx.tau();
        let nu = ctx.plant.nu;
        let xi = &state[..l];
        let zeta = &state[l..2 * l];
        let e = &state[2 * l..2 * l + n_e];
        let chi_n = &state[2 * l + n_e..];
        let (r, r_dot) = self.reference.eval(t);
        let (_, d_dot) = self.disturbance.eval(t);
        let chi: Vec<f64> = e.iter().zip(chi_n).map(|(a, b)| a + b).collect();
        let xs = ctx.xi_star(&chi, r);
        let ts = TransformedState {
            xi: xi.to_vec(),
            zeta: zeta.to_vec(),
            eta: state[..2 * l].to_vec(),
            e: e.to_vec(),
        };
        // ė does not depend on Ξ̇*, so compute it first to recover χ̇
        let (_, _, e_rate) = ctx.transformed_deriv(&ts, &xs, 0.0, 0.0, v);
        let chi_n_rate = ctx.aug.flow(chi_n, r);
        let chi_dot: Vec<f64> = e_rate.iter().zip(&chi_n_rate).map(|(a, b)| a + b).collect();
        let xs_dot_nu = dot(ctx.aug.a_s.row(nu - 1), &chi_dot) + ctx.aug.b[nu - 1] * r_dot;
        let zs_dot = ctx.zeta_star_rate(&chi, &chi_dot, r_dot, d_dot, t);
        let (xi_rate, zeta_rate, _) = ctx.transformed_deriv(&ts, &xs, xs_dot_nu, zs_dot, v);
        let mut out = Vec::with_capacity(self.dim());
        out.extend(xi_rate.iter().map(|v| v / tau));
        out.extend(zeta_rate.iter().map(|v| v / tau));
        out.extend(e_rate);
        out.extend(chi_n_rate);
        out
    }
}
