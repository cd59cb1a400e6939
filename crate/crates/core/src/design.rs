//! Constants of the performance guarantee and the noise-aware choice of the
//! Q-filter time constant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inf_float;
use crate::linalg::{dot, norm, solve_lyapunov, spd_extremal_eigs, lyapunov_residual, DenseMatrix, SpectrumSummary};
use crate::model::lumped_disturbance;
use crate::roots::{bisect, expand_down, expand_up, geometric_scan};
use crate::scenario::Scenario;
use crate::sim::Rk4Workspace;
use crate::transform::{build_blocks, cbar_bold, check_fast_stability, cq_bold_terms, cq_from_terms, fast_matrix, TransformContext};

/// Inflation applied to every sampled supremum.
pub const SAFETY_FACTOR: f64 = 1.2;
/// Growth between half and full budget that flags an unbounded estimate.
pub const UNBOUNDED_RATIO: f64 = 1.5;
const STREAMS: usize = 16;
const TAU_GRID_POINTS: usize = 200;
const KF_GRID_POINTS: usize = 100;
const SCAN_START: f64 = 1e-6;
const SCAN_FACTOR: f64 = 1.2;
const SCAN_LIMIT: f64 = 1e3;

/// Which Lyapunov spectrum enters the settling-time logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettleEig {
    /// `λ_max` of the slow Lyapunov matrix.
    #[default]
    S,
    /// `λ_max` of the fast Lyapunov matrix.
    F,
}

impl std::str::FromStr for SettleEig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s" => Ok(SettleEig::S),
            "f" => Ok(SettleEig::F),
            other => Err(Error::Config(format!("settle_eig must be \"s\" or \"f\", got {other:?}"))),
        }
    }
}

fn d_eps_u() -> f64 {
    0.05
}
fn d_eps_t() -> f64 {
    0.2
}
fn d_budget() -> usize {
    100_000
}
fn d_seed() -> u64 {
    7
}
fn d_one() -> f64 {
    1.0
}
fn d_grid() -> usize {
    21
}
fn d_probes() -> usize {
    5
}

/// Design targets and estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    #[serde(default = "d_eps_u")]
    pub eps_u: f64,
    #[serde(default = "d_eps_t")]
    pub eps_t: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_t: Option<f64>,
    /// Monte-Carlo samples for the sampled bounds.
    #[serde(default = "d_budget")]
    pub budget: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default)]
    pub settle_eig: SettleEig,
    /// Replaces the sampled bound on `Ξ*_ξ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa1: Option<f64>,
    /// Multiplies the (sampled or overridden) bound on `Ξ*_ξ`.
    #[serde(default = "d_one")]
    pub kappa1_scale: f64,
    #[serde(default = "d_grid")]
    pub gain_grid: usize,
    #[serde(default = "d_probes")]
    pub probes: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            eps_u: d_eps_u(),
            eps_t: d_eps_t(),
            mu: 0.0,
            c_u: None,
            c_t: None,
            budget: d_budget(),
            seed: d_seed(),
            settle_eig: SettleEig::S,
            kappa1: None,
            kappa1_scale: 1.0,
            gain_grid: d_grid(),
            probes: d_probes(),
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_u > 0.0) || !(self.eps_t > self.eps_u) || !self.eps_t.is_finite() {
            return Err(Error::Config(format!(
                "need eps_t > eps_u > 0, got eps_u {} eps_t {}",
                self.eps_u, self.eps_t
            )));
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::Config(format!("mu must be finite and nonnegative, got {}", self.mu)));
        }
        if self.budget < 2 * STREAMS {
            return Err(Error::Config(format!("budget must be at least {}", 2 * STREAMS)));
        }
        if !(self.kappa1_scale > 0.0) || self.kappa1.is_some_and(|k| !(k >= 0.0)) {
            return Err(Error::Config("kappa1 overrides must be positive".into()));
        }
        if self.gain_grid == 0 || self.probes == 0 {
            return Err(Error::Config("gain_grid and probes must be positive".into()));
        }
        Ok(())
    }
}

/// Worst-cased Lyapunov data of the fast and slow subsystems.
#[derive(Debug, Clone)]
pub struct LyapunovData {
    /// Fast solution at the grid gain with the largest `λ_max`.
    pub p_f: DenseMatrix,
    pub p_s: DenseMatrix,
    pub eig_f: SpectrumSummary,
    pub eig_s: SpectrumSummary,
    /// Largest relative Lyapunov residual seen.
    pub residual: f64,
}

/// Solves `AᵀP + PA = −I` for every fast matrix and for `A_s`, keeping the
/// extreme eigenvalues across the grid.
pub fn worst_case_lyapunov(fast: &[DenseMatrix], a_s: &DenseMatrix) -> Result<LyapunovData> {
    if fast.is_empty() {
        return Err(Error::InvalidArgument("empty gain grid".into()));
    }
    let mut residual = 0.0f64;
    let mut best: Option<(DenseMatrix, f64)> = None;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for a in fast {
        let p = solve_lyapunov(a)?;
        residual = residual.max(lyapunov_residual(a, &p) / p.max_abs().max(1.0));
        let eig = spd_extremal_eigs(&p)?;
        lo = lo.min(eig.lambda_min);
        if eig.lambda_max > hi {
            hi = eig.lambda_max;
            best = Some((p, hi));
        }
    }
    let p_s = solve_lyapunov(a_s)?;
    residual = residual.max(lyapunov_residual(a_s, &p_s) / p_s.max_abs().max(1.0));
    let eig_s = spd_extremal_eigs(&p_s)?;
    Ok(LyapunovData {
        p_f: best.expect("nonempty grid").0,
        p_s,
        eig_f: SpectrumSummary {
            lambda_min: lo,
            lambda_max: hi,
        },
        eig_s,
        residual,
    })
}

/// Sampled suprema over the `Ω_T` tube around the nominal trajectory,
/// already inflated by [`SAFETY_FACTOR`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBounds {
    pub kappa1: f64,
    pub kappa2: f64,
    pub sup_lumped: f64,
    pub samples: usize,
}

fn nominal_trajectory(scenario: &Scenario) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let lp = crate::sim::ClosedLoop::new(scenario, &scenario.qfilter)?;
    let s0 = lp.initial_state(&scenario.sim.initial)?;
    let mut chi = lp.chi_of(&s0);
    let sim = &scenario.sim;
    let steps = sim.steps();
    let h = sim.horizon / steps as f64;
    let aug = &scenario.aug;
    let mut ws = Rk4Workspace::new(chi.len());
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * h;
        times.push(t);
        states.push(chi.clone());
        if k == steps {
            break;
        }
        ws.step(
            |tt, s, out| {
                let r = scenario.reference.eval(tt).0;
                for (i, o) in out.iter_mut().enumerate() {
                    *o = dot(aug.a_s.row(i), s) + aug.b[i] * r;
                }
            },
            t,
            h,
            &mut chi,
        );
    }
    Ok((times, states))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Monte-Carlo suprema of `‖Ξ*_ξ‖`, `‖Ξ̇*_η‖` and `|𝐝|` for `e` uniform in
/// `{eᵀP_s e ≤ c_T}`, `t` on the horizon and `|v| ≤ μ`.
pub fn sample_bounds(scenario: &Scenario, p_s: &DenseMatrix, c_t: f64, mu: f64, budget: usize, seed: u64) -> Result<SampleBounds> {
    let (times, states) = nominal_trajectory(scenario)?;
    let chol = p_s.cholesky()?;
    let n = chol.rows();
    let ctx = TransformContext::new(
        &scenario.plant,
        &scenario.nominal,
        &scenario.controller,
        &scenario.qfilter,
        &scenario.aug,
    )?;
    let nu = scenario.plant.nu;
    let lay = scenario.aug.layout;
    let radius = c_t.sqrt();

    let per_stream: Vec<[[f64; 3]; 2]> = (0..STREAMS)
        .into_par_iter()
        .map(|stream| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream as u64);
            let count = budget / STREAMS + usize::from(stream < budget % STREAMS);
            let mut half = [0.0f64; 3];
            let mut full = [0.0f64; 3];
            let mut y = vec![0.0; n];
            let mut e = vec![0.0; n];
            let mut chi = vec![0.0; n];
            let mut chi_dot = vec![0.0; n];
            for k in 0..count {
                let idx = rng.gen_range(0..times.len());
                let t = times[idx];
                y.iter_mut().for_each(|v| *v = gaussian(&mut rng));
                let len = norm(&y).max(f64::MIN_POSITIVE);
                let rad = rng.gen::<f64>().powf(1.0 / n as f64) * radius / len;
                y.iter_mut().for_each(|v| *v *= rad);
                // Lᵀe = y by back substitution
                for i in (0..n).rev() {
                    let mut acc = y[i];
                    for j in i + 1..n {
                        acc -= chol[(j, i)] * e[j];
                    }
                    e[i] = acc / chol[(i, i)];
                }
                for i in 0..n {
                    chi[i] = states[idx][i] + e[i];
                }
                let v = if mu > 0.0 { rng.gen_range(-mu..=mu) } else { 0.0 };
                let (r, r_dot) = scenario.reference.eval(t);
                let (d, d_dot) = scenario.disturbance.eval(t);

                let xi_star = ctx.xi_star(&chi, r);
                let k1 = norm(&xi_star);
                let u_r = dot(&scenario.controller.l, &chi[lay.theta()]) + scenario.controller.d * (r - chi[0] - v);
                let bfd = lumped_disturbance(
                    &scenario.plant,
                    &scenario.nominal,
                    &chi[lay.x()],
                    &chi[lay.z()],
                    &chi[lay.z_bar()],
                    u_r,
                    d,
                    t,
                )
                .abs();
                for i in 0..n {
                    chi_dot[i] = xi_star[i] + ctx.blocks.n_e[i] * v;
                }
                let xs_rate = dot(scenario.aug.a_s.row(nu - 1), &chi_dot) + scenario.aug.b[nu - 1] * r_dot;
                let zs_rate = ctx.zeta_star_rate(&chi, &chi_dot, r_dot, d_dot, t);
                let k2 = xs_rate.hypot(zs_rate);

                let vals = [k1, k2, bfd];
                for q in 0..3 {
                    full[q] = full[q].max(vals[q]);
                    if k < count / 2 {
                        half[q] = half[q].max(vals[q]);
                    }
                }
            }
            [half, full]
        })
        .collect();

    let mut half = [0.0f64; 3];
    let mut full = [0.0f64; 3];
    for [h, f] in &per_stream {
        for q in 0..3 {
            half[q] = half[q].max(h[q]);
            full[q] = full[q].max(f[q]);
        }
    }
    let names = ["kappa1", "kappa2", "sup_lumped"];
    for q in 0..3 {
        if !full[q].is_finite() || (full[q] > 1e-300 && full[q] > UNBOUNDED_RATIO * half[q]) {
            return Err(Error::UnboundedEstimate {
                quantity: names[q],
                half: half[q],
                full: full[q],
            });
        }
    }
    Ok(SampleBounds {
        kappa1: SAFETY_FACTOR * full[0],
        kappa2: SAFETY_FACTOR * full[1],
        sup_lumped: SAFETY_FACTOR * full[2],
        samples: budget,
    })
}

/// Level-set constants `(c_U, c_T)` from the design targets.
pub fn level_sets(cfg: &DesignConfig, lambda_s_min: f64) -> Result<(f64, f64)> {
    let lo = lambda_s_min * cfg.eps_u * cfg.eps_u;
    let hi = lambda_s_min * cfg.eps_t * cfg.eps_t;
    let c_u = cfg.c_u.unwrap_or(0.9 * lo);
    let c_t = cfg.c_t.unwrap_or(0.5 * (lo + hi));
    if !(c_u > 0.0 && c_u < lo && lo < c_t && c_t < hi) {
        return Err(Error::Config(format!(
            "level sets must satisfy 0 < c_U < {lo:e} < c_T < {hi:e}, got c_U {c_u:e} c_T {c_t:e}"
        )));
    }
    Ok((c_u, c_t))
}

/// Sampled `sup|𝐝|` with the scenario's design settings.
pub fn lumped_bound_estimate(scenario: &Scenario) -> Result<f64> {
    let p_s = solve_lyapunov(&scenario.aug.a_s)?;
    let eig = spd_extremal_eigs(&p_s)?;
    let (_, c_t) = level_sets(&scenario.design, eig.lambda_min)?;
    let cfg = &scenario.design;
    Ok(sample_bounds(scenario, &p_s, c_t, cfg.mu, cfg.budget, cfg.seed)?.sup_lumped)
}

/// Every constant of the guarantee chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GainConstants {
    pub nu: usize,
    pub l: usize,
    pub g_check: f64,
    pub eig_f: SpectrumSummary,
    pub eig_s: SpectrumSummary,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub kappa5: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub sigma4: f64,
    pub sigma5: f64,
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub k_f: f64,
    #[serde(with = "inf_float")]
    pub t_star: f64,
    pub c_u: f64,
    pub c_t: f64,
    pub sup_lumped: f64,
    pub s_bar: f64,
    pub max_cq_norm: f64,
    pub f_norm: f64,
    pub alpha_norm: f64,
    pub d_abs: f64,
    pub settle_eig: SettleEig,
    /// Weighted rows of `𝐂_τ`; see [`cq_bold_terms`].
    pub cq_terms: Vec<Vec<f64>>,
}

impl Default for SpectrumSummary {
    fn default() -> Self {
        Self {
            lambda_min: 1.0,
            lambda_max: 1.0,
        }
    }
}

impl GainConstants {
    /// Recomputes every `σ` and `b` from the `κ` and spectra.
    pub fn refresh(&mut self) {
        let f = 4.0 * self.eig_f.lambda_max / self.eig_f.lambda_min.sqrt();
        let root = (self.g_check * self.g_check + 1.0).sqrt();
        self.sigma1 = root * self.kappa1 * f;
        self.sigma2 = self.kappa2 * f;
        self.sigma3 = self.alpha_norm * f;
        self.sigma4 = self.g_check * self.d_abs * f;
        self.sigma5 = self.sigma1 * self.kappa3 + self.sigma2;
        let s = 2.0 * self.eig_s.lambda_max / self.eig_s.lambda_min.sqrt();
        self.b0 = 1.0 / self.eig_s.lambda_max;
        self.b1 = s * self.kappa4;
        self.b2 = s * self.g_check * self.kappa1 * self.kappa3;
        self.b3 = s * self.kappa5;
    }

    /// Copy with a different bound on `Ξ*_ξ`.
    pub fn with_kappa1(&self, kappa1: f64) -> Self {
        let mut out = self.clone();
        out.kappa1 = kappa1;
        out.refresh();
        out
    }

    /// `k₀ = √c_U / λ_max^s`.
    pub fn k0(&self) -> f64 {
        self.c_u.sqrt() / self.eig_s.lambda_max
    }

    fn check(mu: f64, tau: f64) -> Result<()> {
        if !(mu >= 0.0) || tau < 0.0 || tau.is_nan() || (tau == 0.0 && mu > 0.0) {
            return Err(Error::InvalidArgument(format!("need tau > 0 and mu >= 0, got tau {tau} mu {mu}")));
        }
        Ok(())
    }

    /// `Σ_f(μ, τ) = σ₃τ^{−ν}μ + σ₄μ + σ₅τ`.
    pub fn sigma_f(&self, mu: f64, tau: f64) -> Result<f64> {
        Self::check(mu, tau)?;
        let noise = if mu == 0.0 { 0.0 } else { self.sigma3 * mu / tau.powi(self.nu as i32) };
        Ok(noise + self.sigma4 * mu + self.sigma5 * tau)
    }

    /// `Σ̄(μ, τ) = b₁Σ_f + b₂τ + b₃μ`.
    pub fn sigma_bar(&self, mu: f64, tau: f64) -> Result<f64> {
        Ok(self.b1 * self.sigma_f(mu, tau)? + self.b2 * tau + self.b3 * mu)
    }

    /// `∂Σ̄/∂τ`.
    pub fn dsigma_bar_dtau(&self, mu: f64, tau: f64) -> f64 {
        let nu = self.nu as i32;
        -(nu as f64) * self.b1 * self.sigma3 * mu / tau.powi(nu + 1) + self.b1 * self.sigma5 + self.b2
    }

    /// `∂²Σ̄/∂τ² = ν(ν+1)b₁σ₃μ/τ^{ν+2}`.
    pub fn d2sigma_bar_dtau2(&self, mu: f64, tau: f64) -> f64 {
        let nu = self.nu as f64;
        nu * (nu + 1.0) * self.b1 * self.sigma3 * mu / tau.powi(self.nu as i32 + 2)
    }

    /// Minimiser of `Σ̄(μ, ·)`; zero when `μ = 0`.
    pub fn tau_dagger(&self, mu: f64) -> f64 {
        if mu <= 0.0 {
            return 0.0;
        }
        let nu = self.nu as f64;
        (nu * self.b1 * self.sigma3 * mu / (self.b1 * self.sigma5 + self.b2)).powf(1.0 / (nu + 1.0))
    }

    /// `h(μ) = Σ̄(μ, τ†(μ))`.
    pub fn h(&self, mu: f64) -> f64 {
        if mu <= 0.0 {
            return 0.0;
        }
        self.sigma_bar(mu, self.tau_dagger(mu)).unwrap_or(f64::INFINITY)
    }

    /// Inverse of the strictly increasing [`h`](Self::h).
    pub fn h_inv(&self, k0: f64) -> Result<f64> {
        if !(k0 > 0.0) {
            return Err(Error::InvalidArgument(format!("h_inv needs k0 > 0, got {k0}")));
        }
        let hi = expand_up(1.0, |m| self.h(m) >= k0)?;
        let lo = expand_down(hi, |m| self.h(m) < k0)?;
        bisect(|m| self.h(m) - k0, lo, hi)
    }

    /// `μ̃(k₀, τ)`; nonpositive means no admissible noise level at `τ`.
    pub fn mu_tilde(&self, k0: f64, tau: f64) -> f64 {
        if !tau.is_finite() {
            return f64::NEG_INFINITY;
        }
        let tn = tau.powi(self.nu as i32);
        (k0 - self.b2 * tau - self.b1 * self.sigma5 * tau) * tn / (self.b1 * self.sigma3 + (self.b3 + self.b1 * self.sigma4) * tn)
    }

    /// `‖𝐂_τ‖`.
    pub fn cq_norm(&self, tau: f64) -> f64 {
        norm(&cq_from_terms(&self.cq_terms, tau))
    }

    /// `σ_τ = 1/(2λ_max^f τ) − 2√(ǧ²+1)‖𝐂_τ‖`.
    pub fn sigma_tau(&self, tau: f64) -> f64 {
        1.0 / (2.0 * self.eig_f.lambda_max * tau) - 2.0 * (self.g_check * self.g_check + 1.0).sqrt() * self.cq_norm(tau)
    }

    /// Time `𝗍(τ)` for the fast state to enter its invariant set.
    pub fn settle_time(&self, tau: f64) -> Result<f64> {
        let st = self.sigma_tau(tau);
        if !(st > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma_tau = {st:e} is not positive at tau = {tau:e}")));
        }
        let lam = match self.settle_eig {
            SettleEig::S => self.eig_s.lambda_max,
            SettleEig::F => self.eig_f.lambda_max,
        };
        Ok(settle_time_formula(st, lam * self.k_f / (self.sigma5 * self.sigma5 * tau.powi(2 * (self.l as i32 + 1)))))
    }
}

/// `ln(arg)/σ_τ`.
pub fn settle_time_formula(sigma_tau: f64, log_arg: f64) -> f64 {
    log_arg.ln() / sigma_tau
}

/// Escape-time bound `𝗍*`: `+∞` when `B̄/b₀ ≤ √c_T`, else
/// `−(2/b₀) ln(1 − b₀√c_T/B̄)`.
pub fn escape_time(b0: f64, b_bar: f64, c_t: f64) -> f64 {
    if b_bar / b0 <= c_t.sqrt() {
        f64::INFINITY
    } else {
        -(2.0 / b0) * (1.0 - b0 * c_t.sqrt() / b_bar).ln()
    }
}

/// Smallest root of `4τλ_max^f√(ǧ²+1)‖Č_τ‖ = 1`, or `+∞` with a note when
/// no sign change occurs below the scan limit.
pub fn tau_bar1_root<F: Fn(f64) -> f64>(lambda_f_max: f64, g_check: f64, cq_norm: F) -> (f64, Option<String>) {
    let root = (g_check * g_check + 1.0).sqrt();
    let g = |tau: f64| 4.0 * tau * lambda_f_max * root * cq_norm(tau) - 1.0;
    match geometric_scan(SCAN_START, SCAN_FACTOR, SCAN_LIMIT, |t| g(t) > 0.0) {
        Some((lo, hi)) if lo == hi => {
            let lo = expand_down(lo, |t| g(t) < 0.0).unwrap_or(0.0);
            (bisect(g, lo, hi).unwrap_or(hi), None)
        }
        Some((lo, hi)) => (bisect(g, lo, hi).unwrap_or(hi), None),
        None => (
            f64::INFINITY,
            Some(format!("fast-coupling condition never binds below tau = {SCAN_LIMIT}")),
        ),
    }
}

/// Constants plus the stability limit `τ̄₁`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub lyapunov: LyapunovData,
    pub constants: GainConstants,
    pub samples: SampleBounds,
    pub tau_bar1: f64,
    pub notes: Vec<String>,
}

/// `k_f`: largest `‖τˡη(0)‖²` over `τ ∈ (0, 1]` for observers started at zero.
fn initial_fast_energy(scenario: &Scenario, ctx: &TransformContext) -> Result<f64> {
    let lp = crate::sim::ClosedLoop::new(scenario, &scenario.qfilter)?;
    let s0 = lp.initial_state(&scenario.sim.initial)?;
    let chi = lp.chi_of(&s0);
    let (r, _) = scenario.reference.eval(0.0);
    let (d, _) = scenario.disturbance.eval(0.0);
    let xs = ctx.xi_star(&chi, r);
    let zs = ctx.zeta_star(&chi, r, d, 0.0);
    let (nu, l) = (scenario.plant.nu, scenario.qfilter.l);
    let mut best = 0.0f64;
    for i in 1..=KF_GRID_POINTS {
        let tau = i as f64 / KF_GRID_POINTS as f64;
        let mut acc = 0.0;
        for k in 0..nu {
            let v = chi[k] * tau.powi((l - nu + k) as i32);
            acc += v * v;
        }
        let top = xs[nu - 1] * tau.powi(l as i32);
        let bottom = zs * tau.powi(l as i32);
        acc += top * top + bottom * bottom;
        best = best.max(acc);
    }
    Ok(SAFETY_FACTOR * best)
}

/// Runs the full constant pipeline for the scenario and its design section.
pub fn prepare(scenario: &Scenario) -> Result<Prepared> {
    let cfg = &scenario.design;
    cfg.validate()?;
    let (plant, nom, ctrl, qcfg, aug) = (
        &scenario.plant,
        &scenario.nominal,
        &scenario.controller,
        &scenario.qfilter,
        &scenario.aug,
    );
    let grid = plant.gain_grid(cfg.gain_grid);
    check_fast_stability(nom, qcfg, &grid)?;
    let fast: Vec<DenseMatrix> = grid.iter().map(|&g| fast_matrix(nom, qcfg, g)).collect::<Result<_>>()?;
    let lyapunov = worst_case_lyapunov(&fast, &aug.a_s)?;
    let mut notes = Vec::new();

    let mut gc = GainConstants {
        nu: plant.nu,
        l: qcfg.l,
        g_check: plant.gain_check(),
        eig_f: lyapunov.eig_f,
        eig_s: lyapunov.eig_s,
        settle_eig: cfg.settle_eig,
        cq_terms: cq_bold_terms(nom, qcfg)?,
        d_abs: ctrl.d.abs(),
        s_bar: qcfg.s_bar,
        ..Default::default()
    };
    let (tau_bar1, note) = if nom.phi.iter().all(|p| *p == 0.0) {
        (f64::INFINITY, Some("nominal phi is zero: no fast-coupling limit".to_string()))
    } else {
        tau_bar1_root(gc.eig_f.lambda_max, gc.g_check, |t| gc.cq_norm(t))
    };
    notes.extend(note);

    let top = tau_bar1.min(SCAN_LIMIT) * (1.0 - 1e-9);
    let n_e = aug.n_e();
    for tau in crate::sim::log_grid(1e-8, top, TAU_GRID_POINTS) {
        gc.kappa3 = gc.kappa3.max(norm(&cbar_bold(nom, qcfg, tau, n_e)?));
        gc.max_cq_norm = gc.max_cq_norm.max(gc.cq_norm(tau));
    }
    for &g in &grid {
        let blocks = build_blocks(plant, nom, ctrl, qcfg, aug, g, qcfg.tau)?;
        gc.f_norm = gc.f_norm.max(blocks.f.norm2());
        gc.alpha_norm = norm(&blocks.alpha);
        gc.kappa5 = gc.g_check * ctrl.d.abs() + (nom.gain * ctrl.d).abs() + norm(&blocks.n_vec);
    }
    gc.kappa4 = gc.f_norm + gc.g_check * gc.max_cq_norm;

    let (c_u, c_t) = level_sets(cfg, gc.eig_s.lambda_min)?;
    gc.c_u = c_u;
    gc.c_t = c_t;
    let samples = sample_bounds(scenario, &lyapunov.p_s, c_t, cfg.mu, cfg.budget, cfg.seed)?;
    gc.kappa1 = cfg.kappa1.unwrap_or(samples.kappa1) * cfg.kappa1_scale;
    gc.kappa2 = samples.kappa2;
    gc.sup_lumped = samples.sup_lumped;
    gc.refresh();

    let ctx = TransformContext::new(plant, nom, ctrl, qcfg, aug)?;
    gc.k_f = initial_fast_energy(scenario, &ctx)?;
    let b_bar = 2.0 * gc.eig_s.lambda_max / gc.eig_s.lambda_min.sqrt()
        * (gc.g_check * (gc.sup_lumped + gc.s_bar) + gc.kappa5 * cfg.mu);
    gc.t_star = escape_time(gc.b0, b_bar, c_t);

    Ok(Prepared {
        lyapunov,
        constants: gc,
        samples,
        tau_bar1,
        notes,
    })
}

/// Outcome of the design procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub mu: f64,
    pub eps_u: f64,
    pub eps_t: f64,
    pub k0: f64,
    pub mu_star_1: f64,
    #[serde(with = "inf_float")]
    pub mu_star_2: f64,
    pub mu_star: f64,
    #[serde(with = "inf_float")]
    pub tau_bar1: f64,
    #[serde(with = "inf_float")]
    pub tau_bar2: f64,
    pub tau_dagger: f64,
    pub tau_lo: f64,
    #[serde(with = "inf_float")]
    pub tau_hi: f64,
    pub tau_lower: f64,
    #[serde(with = "inf_float")]
    pub tau_upper: f64,
    pub feasible: bool,
    pub recommended_tau: f64,
    pub binding_constraint: String,
    pub notes: Vec<String>,
    pub lyapunov_residual: f64,
    pub constants: GainConstants,
}

/// `τ̄₂`: smallest `τ < τ̄₁` with `𝗍(τ) ≥ 𝗍*`, else `τ̄₁`.
pub fn tau_bar2(gc: &GainConstants, tau_bar1: f64) -> (f64, Option<String>) {
    if !gc.t_star.is_finite() {
        return (tau_bar1, None);
    }
    let limit = tau_bar1.min(SCAN_LIMIT) * (1.0 - 1e-9);
    let reached = |t: f64| gc.settle_time(t).map_or(true, |s| s >= gc.t_star);
    let start = 1e-12;
    match geometric_scan(start, SCAN_FACTOR, limit, reached) {
        Some((lo, hi)) if lo == hi => (
            0.0,
            Some(format!("settling time exceeds the escape time already at tau = {start:e}")),
        ),
        Some((lo, hi)) => {
            let f = |t: f64| gc.settle_time(t).map_or(1.0, |s| s - gc.t_star);
            (bisect(f, lo, hi).unwrap_or(lo), None)
        }
        None => (tau_bar1, None),
    }
}

/// The two roots of `Σ̄(μ, τ) = k₀` (lower is zero when `μ = 0`); `None`
/// when `Σ̄ ≥ k₀` everywhere.
pub fn level_interval(gc: &GainConstants, mu: f64, k0: f64) -> Result<Option<(f64, f64)>> {
    let slope = gc.b1 * gc.sigma5 + gc.b2;
    if mu == 0.0 {
        return Ok(Some((0.0, if slope > 0.0 { k0 / slope } else { f64::INFINITY })));
    }
    let td = gc.tau_dagger(mu);
    if gc.sigma_bar(mu, td)? >= k0 {
        return Ok(None);
    }
    let f = |t: f64| gc.sigma_bar(mu, t).unwrap_or(f64::INFINITY) - k0;
    let lo = expand_down(td, |t| f(t) > 0.0)?;
    let lower = bisect(f, lo, td)?;
    let upper = if slope > 0.0 {
        let hi = expand_up(td, |t| f(t) > 0.0)?;
        bisect(f, td, hi)?
    } else {
        f64::INFINITY
    };
    Ok(Some((lower, upper)))
}

/// Applies the design rules to prepared constants at noise level `mu`.
pub fn design_from(prep: &Prepared, mu: f64, eps_u: f64, eps_t: f64) -> Result<DesignResult> {
    let gc = &prep.constants;
    let mut notes = prep.notes.clone();
    let k0 = gc.k0();
    let mu_star_1 = gc.h_inv(k0)?;
    let tau_bar1 = prep.tau_bar1;
    let (tau_bar2, note) = tau_bar2(gc, tau_bar1);
    notes.extend(note);
    let cap = tau_bar1.min(tau_bar2);
    let mu_star_2 = gc.mu_tilde(k0, cap);
    let mu_star = if cap >= gc.tau_dagger(mu_star_1) { mu_star_1 } else { mu_star_2 };

    let td = gc.tau_dagger(mu);
    let (tau_lo, tau_hi) = level_interval(gc, mu, k0)?.unwrap_or((td, td));
    let uppers = [("tau_bar1", tau_bar1), ("tau_bar2", tau_bar2), ("tau_bar3", tau_hi)];
    let (upper_name, tau_upper) = uppers
        .iter()
        .copied()
        .fold(("tau_bar1", f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
    let tau_lower = tau_lo;
    let feasible = tau_lower < tau_upper && mu < mu_star;
    let binding_constraint = if mu >= mu_star {
        format!("noise level {mu:e} is not below the threshold mu_star = {mu_star:e}")
    } else if !(tau_lower < tau_upper) {
        format!("empty interval: tau_lower {tau_lower:e} >= {upper_name} {tau_upper:e}")
    } else {
        upper_name.to_string()
    };
    let recommended_tau = if td > tau_lower && td < tau_upper {
        td
    } else if tau_upper.is_finite() {
        0.5 * (tau_lower + tau_upper)
    } else {
        td
    };
    if mu == 0.0 {
        notes.push("noise-free design: lower bound is zero".into());
    }
    Ok(DesignResult {
        mu,
        eps_u,
        eps_t,
        k0,
        mu_star_1,
        mu_star_2,
        mu_star,
        tau_bar1,
        tau_bar2,
        tau_dagger: td,
        tau_lo,
        tau_hi,
        tau_lower,
        tau_upper,
        feasible,
        recommended_tau,
        binding_constraint,
        notes,
        lyapunov_residual: prep.lyapunov.residual,
        constants: gc.clone(),
    })
}

/// Full design for the scenario's own design section.
pub fn design_tau(scenario: &Scenario) -> Result<DesignResult> {
    let prep = prepare(scenario)?;
    let cfg = &scenario.design;
    design_from(&prep, cfg.mu, cfg.eps_u, cfg.eps_t)
}
