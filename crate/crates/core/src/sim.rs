//! Fixed-step RK4 integration of the real loop, the observer and the nominal
//! loop side by side, with noise generators, metrics and τ sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dob::{saturate, Dob, QFilterConfig};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::{lumped_disturbance, AugmentedNominal, NominalModel, OuterController, PlantModel};
use crate::scenario::Scenario;

/// Norm above which a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e9;
/// Fraction of the horizon treated as steady state.
pub const TAIL_FRACTION: f64 = 0.2;

/// Bounded measurement-noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseSpec {
    None,
    /// Independent uniform samples on `[−μ, μ]`, one per step.
    Uniform { mu: f64 },
    /// `μ·sin(freq·t)`.
    Sinusoid { mu: f64, freq: f64 },
    /// `±μ` switching every half period.
    Square { mu: f64, period: f64 },
}

impl NoiseSpec {
    pub fn mu(&self) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Uniform { mu } | NoiseSpec::Sinusoid { mu, .. } | NoiseSpec::Square { mu, .. } => mu,
        }
    }

    /// Same waveform with amplitude `mu`; `None` becomes a square wave.
    pub fn with_mu(&self, mu: f64, default_period: f64) -> Self {
        match *self {
            NoiseSpec::None => NoiseSpec::Square {
                mu,
                period: default_period,
            },
            NoiseSpec::Uniform { .. } => NoiseSpec::Uniform { mu },
            NoiseSpec::Sinusoid { freq, .. } => NoiseSpec::Sinusoid { mu, freq },
            NoiseSpec::Square { period, .. } => NoiseSpec::Square { mu, period },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mu = self.mu();
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::Config(format!("noise amplitude must be finite and nonnegative, got {mu}")));
        }
        match *self {
            NoiseSpec::Sinusoid { freq, .. } if !freq.is_finite() => {
                Err(Error::Config("noise frequency must be finite".into()))
            }
            NoiseSpec::Square { period, .. } if !(period > 0.0) || !period.is_finite() => {
                Err(Error::Config(format!("square-noise period must be positive, got {period}")))
            }
            _ => Ok(()),
        }
    }
}

/// Stateful noise source; deterministic for a given seed.
#[derive(Debug, Clone)]
pub struct NoiseGenerator {
    spec: NoiseSpec,
    rng: ChaCha8Rng,
}

impl NoiseGenerator {
    pub fn new(spec: NoiseSpec, seed: u64) -> Self {
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Sample held over the step starting at `t`.
    pub fn sample(&mut self, t: f64) -> f64 {
        match self.spec {
            NoiseSpec::None => 0.0,
            NoiseSpec::Uniform { mu } => {
                if mu == 0.0 {
                    0.0
                } else {
                    self.rng.gen_range(-mu..=mu)
                }
            }
            NoiseSpec::Sinusoid { mu, freq } => (mu * (freq * t).sin()).clamp(-mu, mu),
            NoiseSpec::Square { mu, period } => {
                if (t / period).rem_euclid(1.0) < 0.5 {
                    mu
                } else {
                    -mu
                }
            }
        }
    }
}

/// Initial plant and controller states; nominal copies start equal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConditions {
    #[serde(default)]
    pub x: Vec<f64>,
    #[serde(default)]
    pub z: Vec<f64>,
    #[serde(default)]
    pub theta: Vec<f64>,
}

fn default_seed() -> u64 {
    1
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::None
}

/// Integration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub step: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub initial: InitialConditions,
    /// Upper limit on recorded samples; metrics always use every step.
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
}

fn default_horizon() -> f64 {
    30.0
}

fn default_max_samples() -> usize {
    20_000
}

impl SimConfig {
    pub fn new(step: f64, horizon: f64, noise: NoiseSpec) -> Self {
        Self {
            step,
            horizon,
            seed: default_seed(),
            noise,
            initial: InitialConditions::default(),
            max_samples: default_max_samples(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!(
                "step and horizon must be positive, got step {} horizon {}",
                self.step, self.horizon
            )));
        }
        if self.step > self.horizon / 100.0 * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "step {} exceeds horizon/100 = {}",
                self.step,
                self.horizon / 100.0
            )));
        }
        if self.max_samples < 2 {
            return Err(Error::Config("max_samples must be at least 2".into()));
        }
        self.noise.validate()
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round().max(1.0) as usize
    }
}

/// Recorded histories of one run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub chi: Vec<Vec<f64>>,
    pub chi_n: Vec<Vec<f64>>,
    pub e_norm: Vec<f64>,
    pub dhat: Vec<f64>,
    pub w_minus_yp: Vec<f64>,
    pub sat_active: Vec<bool>,
    pub noise: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub u_r: Vec<f64>,
    /// Lumped disturbance seen by the observer.
    pub lumped: Vec<f64>,
    pub diverged: bool,
    pub diverged_at: Option<f64>,
}

/// Scalar performance metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub tau: f64,
    pub sup_e: f64,
    pub tail_sup_e: f64,
    pub pass_transient: bool,
    pub pass_steady: bool,
    pub saturation_fraction: f64,
    pub diverged: bool,
    pub seed: u64,
    pub step: f64,
}

/// Output of [`integrate`].
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trajectory: Trajectory,
    pub report: PerformanceReport,
}

/// Flattened closed loop: stacked state `[x; z; θ; z̄; q; p; χ_n]`.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub plant: PlantModel,
    pub nom: NominalModel,
    pub ctrl: OuterController,
    pub dob: Dob,
    pub aug: AugmentedNominal,
    pub scenario: Scenario,
    nu: usize,
    nz: usize,
    nc: usize,
    l: usize,
}

/// Offsets of each block in the stacked state.
#[derive(Debug, Clone, Copy)]
struct Offsets {
    x: usize,
    z: usize,
    th: usize,
    zb: usize,
    q: usize,
    p: usize,
    chn: usize,
    end: usize,
}

/// Algebraic signals evaluated alongside the right-hand side.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoopSignals {
    pub w_minus_yp: f64,
    pub dhat: f64,
    pub active: bool,
    pub u_r: f64,
    pub r: f64,
    pub d: f64,
}

impl ClosedLoop {
    pub fn new(scenario: &Scenario, qcfg: &QFilterConfig) -> Result<Self> {
        let dob = Dob::new(qcfg, &scenario.nominal)?;
        Ok(Self {
            plant: scenario.plant.clone(),
            nom: scenario.nominal.clone(),
            ctrl: scenario.controller.clone(),
            dob,
            aug: scenario.aug.clone(),
            scenario: scenario.clone(),
            nu: scenario.plant.nu,
            nz: scenario.plant.nz(),
            nc: scenario.controller.nc(),
            l: qcfg.l,
        })
    }

    fn offsets(&self) -> Offsets {
        let x = 0;
        let z = x + self.nu;
        let th = z + self.nz;
        let zb = th + self.nc;
        let q = zb + self.nz;
        let p = q + self.l;
        let chn = p + self.l;
        Offsets {
            x,
            z,
            th,
            zb,
            q,
            p,
            chn,
            end: chn + self.aug.n_e(),
        }
    }

    pub fn dim(&self) -> usize {
        self.offsets().end
    }

    pub fn tau(&self) -> f64 {
        self.dob.cfg.tau
    }

    /// Initial stacked state with matched real and nominal copies.
    pub fn initial_state(&self, init: &InitialConditions) -> Result<Vec<f64>> {
        let o = self.offsets();
        let mut s = vec![0.0; o.end];
        let fill = |dst: &mut [f64], src: &[f64], name: &str| -> Result<()> {
            if src.is_empty() {
                return Ok(());
            }
            if src.len() != dst.len() {
                return Err(Error::Config(format!(
                    "initial {name} has length {}, expected {}",
                    src.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(src);
            Ok(())
        };
        fill(&mut s[o.x..o.z], &init.x, "x")?;
        fill(&mut s[o.z..o.th], &init.z, "z")?;
        fill(&mut s[o.th..o.zb], &init.theta, "theta")?;
        let z0 = s[o.z..o.th].to_vec();
        s[o.zb..o.q].copy_from_slice(&z0);
        let chi = self.chi_of(&s);
        s[o.chn..].copy_from_slice(&chi);
        Ok(s)
    }

    /// `χ = [x; z̄; θ; z]` of a stacked state.
    pub fn chi_of(&self, s: &[f64]) -> Vec<f64> {
        let mut chi = vec![0.0; self.aug.n_e()];
        self.fill_chi(s, &mut chi);
        chi
    }

    fn fill_chi(&self, s: &[f64], chi: &mut [f64]) {
        let o = self.offsets();
        let lay = self.aug.layout;
        chi[lay.x()].copy_from_slice(&s[o.x..o.z]);
        chi[lay.z_bar()].copy_from_slice(&s[o.zb..o.q]);
        chi[lay.theta()].copy_from_slice(&s[o.th..o.zb]);
        chi[lay.z()].copy_from_slice(&s[o.z..o.th]);
    }

    pub fn chi_n_of<'s>(&self, s: &'s [f64]) -> &'s [f64] {
        &s[self.offsets().chn..]
    }

    pub fn q_of<'s>(&self, s: &'s [f64]) -> &'s [f64] {
        let o = self.offsets();
        &s[o.q..o.p]
    }

    pub fn p_of<'s>(&self, s: &'s [f64]) -> &'s [f64] {
        let o = self.offsets();
        &s[o.p..o.chn]
    }

    /// Algebraic signals at `(t, s)` with held noise `v`.
    pub fn signals(&self, t: f64, s: &[f64], v: f64) -> LoopSignals {
        let o = self.offsets();
        let (r, _) = self.scenario.reference.eval(t);
        let (d, _) = self.scenario.disturbance.eval(t);
        let y_meas = s[o.x] + v;
        let w = self.dob.compute_w(&s[o.zb..o.q], &s[o.q..o.p]);
        let yp = self.dob.compute_yp(&s[o.p..o.chn]);
        let est = saturate(w - yp, self.dob.cfg.s_bar);
        let u_r = dot(&self.ctrl.l, &s[o.th..o.zb]) + self.ctrl.d * (r - y_meas);
        LoopSignals {
            w_minus_yp: w - yp,
            dhat: est.dhat,
            active: est.active,
            u_r,
            r,
            d,
        }
    }

    /// Writes the stacked derivative into `out` without allocating.
    pub fn rhs(&self, t: f64, s: &[f64], v: f64, out: &mut [f64]) {
        let o = self.offsets();
        let sig = self.signals(t, s, v);
        let y_meas = s[o.x] + v;
        let err = sig.r - y_meas;
        let u = sig.u_r - sig.dhat;
        let plant = &self.plant;
        let (nu, nz, l) = (self.nu, self.nz, self.l);

        let x = &s[o.x..o.z];
        let z = &s[o.z..o.th];
        out[o.x..o.x + nu - 1].copy_from_slice(&x[1..]);
        out[o.x + nu - 1] = dot(&plant.phi, x)
            + dot(&plant.psi, z)
            + plant.nonlinearity.value(x, z, t)
            + plant.gain * (u + sig.d);
        for i in 0..nz {
            out[o.z + i] = dot(plant.s.row(i), z) + plant.coupling[i] * x[0];
        }
        let th = &s[o.th..o.zb];
        for i in 0..self.nc {
            out[o.th + i] = dot(self.ctrl.j.row(i), th) + self.ctrl.k[i] * err;
        }
        let zb = &s[o.zb..o.q];
        for i in 0..nz {
            out[o.zb + i] = dot(self.dob.s_bar_matrix.row(i), zb) + self.dob.coupling_bar[i] * y_meas;
        }
        let q = &s[o.q..o.p];
        let innov = q[0] - y_meas;
        for i in 0..l {
            let shifted = if i + 1 < l { q[i + 1] } else { 0.0 };
            out[o.q + i] = shifted - self.dob.q_inject[i] * innov;
        }
        let p = &s[o.p..o.chn];
        for i in 0..l - 1 {
            out[o.p + i] = p[i + 1];
        }
        out[o.p + l - 1] = -dot(&self.dob.p_feedback, p) + u;
        let chn = &s[o.chn..];
        for i in 0..self.aug.n_e() {
            out[o.chn + i] = dot(self.aug.a_s.row(i), chn) + self.aug.b[i] * sig.r;
        }
    }

    /// Lumped disturbance at `(t, s)` for the given noisy `u_r`.
    pub fn lumped(&self, t: f64, s: &[f64], u_r: f64, d: f64) -> f64 {
        let o = self.offsets();
        lumped_disturbance(
            &self.plant,
            &self.nom,
            &s[o.x..o.z],
            &s[o.z..o.th],
            &s[o.zb..o.q],
            u_r,
            d,
            t,
        )
    }

    /// `‖χ − χ_n‖` of a stacked state.
    pub fn error_norm(&self, s: &[f64]) -> f64 {
        let o = self.offsets();
        let lay = self.aug.layout;
        let chn = &s[o.chn..];
        let pairs = [
            (o.x, lay.x()),
            (o.zb, lay.z_bar()),
            (o.th, lay.theta()),
            (o.z, lay.z()),
        ];
        let mut acc = 0.0;
        for (start, range) in pairs {
            for (k, idx) in range.enumerate() {
                let diff = s[start + k] - chn[idx];
                acc += diff * diff;
            }
        }
        acc.sqrt()
    }
}

/// Workspace for allocation-free RK4 steps.
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    /// One classical RK4 step of `f` with `state` updated in place.
    pub fn step<F: FnMut(f64, &[f64], &mut [f64])>(&mut self, mut f: F, t: f64, h: f64, state: &mut [f64]) {
        let n = state.len();
        f(t, state, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = state[i] + 0.5 * h * self.k1[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = state[i] + 0.5 * h * self.k2[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = state[i] + h * self.k3[i];
        }
        f(t + h, &self.tmp, &mut self.k4);
        for i in 0..n {
            state[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn record(lp: &ClosedLoop, traj: &mut Trajectory, t: f64, s: &[f64], v: f64) {
    let sig = lp.signals(t, s, v);
    traj.times.push(t);
    traj.chi.push(lp.chi_of(s));
    traj.chi_n.push(lp.chi_n_of(s).to_vec());
    traj.e_norm.push(lp.error_norm(s));
    traj.dhat.push(sig.dhat);
    traj.w_minus_yp.push(sig.w_minus_yp);
    traj.sat_active.push(sig.active);
    traj.noise.push(v);
    traj.q.push(lp.q_of(s).to_vec());
    traj.p.push(lp.p_of(s).to_vec());
    traj.u_r.push(sig.u_r);
    traj.lumped.push(lp.lumped(t, s, sig.u_r, sig.d));
}

/// Runs one simulation of the scenario with filter `qcfg`.
///
/// A divergent run returns `Ok` with `diverged` set and the partial
/// trajectory up to the failure.
pub fn integrate(scenario: &Scenario, qcfg: &QFilterConfig, sim: &SimConfig, eps: (f64, f64)) -> Result<SimOutcome> {
    sim.validate()?;
    let lp = ClosedLoop::new(scenario, qcfg)?;
    run_loop(&lp, sim, eps, true)
}

/// Metrics-only variant of [`integrate`] that records nothing.
pub fn simulate_report(scenario: &Scenario, qcfg: &QFilterConfig, sim: &SimConfig, eps: (f64, f64)) -> Result<PerformanceReport> {
    sim.validate()?;
    let lp = ClosedLoop::new(scenario, qcfg)?;
    Ok(run_loop(&lp, sim, eps, false)?.report)
}

fn run_loop(lp: &ClosedLoop, sim: &SimConfig, (eps_t, eps_u): (f64, f64), keep: bool) -> Result<SimOutcome> {
    let steps = sim.steps();
    let h = sim.horizon / steps as f64;
    let stride = steps.div_ceil(sim.max_samples - 1).max(1);
    let tail_start = sim.horizon * (1.0 - TAIL_FRACTION);
    let mut state = lp.initial_state(&sim.initial)?;
    let mut noise = NoiseGenerator::new(sim.noise, sim.seed);
    let mut ws = Rk4Workspace::new(state.len());
    let mut traj = Trajectory::default();

    let mut sup_e = 0.0f64;
    let mut tail_sup = 0.0f64;
    let mut sat_steps = 0usize;
    let mut done_steps = 0usize;

    for k in 0..steps {
        let t = k as f64 * h;
        let v = noise.sample(t);
        let sig = lp.signals(t, &state, v);
        if sig.active {
            sat_steps += 1;
        }
        if keep && k % stride == 0 {
            record(lp, &mut traj, t, &state, v);
        }
        ws.step(|tt, s, out| lp.rhs(tt, s, v, out), t, h, &mut state);
        done_steps += 1;
        let t_next = (k + 1) as f64 * h;
        let bad = state.iter().any(|x| !x.is_finite() || x.abs() > DIVERGENCE_LIMIT);
        if bad {
            traj.diverged = true;
            traj.diverged_at = Some(t_next);
            sup_e = f64::INFINITY;
            tail_sup = f64::INFINITY;
            break;
        }
        let en = lp.error_norm(&state);
        sup_e = sup_e.max(en);
        if t_next >= tail_start - 1e-12 * sim.horizon {
            tail_sup = tail_sup.max(en);
        }
    }
    if keep && !traj.diverged {
        let t_end = steps as f64 * h;
        let v = noise.sample(t_end);
        record(lp, &mut traj, t_end, &state, v);
    }
    let report = PerformanceReport {
        tau: lp.tau(),
        sup_e,
        tail_sup_e: tail_sup,
        pass_transient: sup_e < eps_t,
        pass_steady: tail_sup < eps_u,
        saturation_fraction: sat_steps as f64 / done_steps.max(1) as f64,
        diverged: traj.diverged,
        seed: sim.seed,
        step: h,
    };
    Ok(SimOutcome { trajectory: traj, report })
}

/// Step used at time constant `τ`: never coarser than a tenth of `τ`.
pub fn step_for_tau(step: f64, tau: f64) -> f64 {
    step.min(0.1 * tau)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("DOBBENCH_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if n > 0 {
            builder = builder.num_threads(n);
        }
    }
    builder
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))
}

/// One report per grid τ, with the same noise seed everywhere and the step
/// refined to `min(step, τ/10)`. Divergent runs are recorded, not fatal.
pub fn sweep_tau(scenario: &Scenario, sim: &SimConfig, taus: &[f64], eps: (f64, f64)) -> Result<Vec<PerformanceReport>> {
    if taus.is_empty() || taus.iter().any(|t| !(*t > 0.0)) || taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("tau grid must be positive and strictly increasing".into()));
    }
    sim.validate()?;
    let pool = thread_pool()?;
    pool.install(|| {
        taus.par_iter()
            .map(|&tau| {
                let qcfg = scenario.qfilter.with_tau(tau);
                let mut cfg = sim.clone();
                cfg.step = step_for_tau(sim.step, tau);
                simulate_report(scenario, &qcfg, &cfg, eps)
            })
            .collect()
    })
}

/// Tail metric at the configured horizon and at 1.5 times it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonCheck {
    pub tail_sup_e: f64,
    pub extended_tail_sup_e: f64,
    pub relative_change: f64,
    /// Relative change below [`HORIZON_TOLERANCE`].
    pub settled: bool,
}

pub const HORIZON_TOLERANCE: f64 = 0.05;

/// Reruns with the horizon extended by half and compares tail metrics.
pub fn tail_horizon_check(scenario: &Scenario, qcfg: &QFilterConfig, sim: &SimConfig, eps: (f64, f64)) -> Result<HorizonCheck> {
    let base = simulate_report(scenario, qcfg, sim, eps)?;
    let mut longer = sim.clone();
    longer.horizon *= 1.5;
    let ext = simulate_report(scenario, qcfg, &longer, eps)?;
    let (a, b) = (base.tail_sup_e, ext.tail_sup_e);
    let scale = a.abs().max(b.abs());
    let relative_change = if scale < 1e-12 { 0.0 } else { (a - b).abs() / scale };
    Ok(HorizonCheck {
        tail_sup_e: a,
        extended_tail_sup_e: b,
        relative_change,
        settled: relative_change < HORIZON_TOLERANCE,
    })
}

/// `n` log-spaced points in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Outcome of simulating probes inside a designed interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub eps_t: f64,
    pub eps_u: f64,
    pub probes: Vec<ProbeResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub tau: f64,
    pub sup_e: f64,
    pub tail_sup_e: f64,
    /// `ε_T − sup‖e‖`.
    pub transient_margin: f64,
    /// `ε_U − tail sup‖e‖`.
    pub steady_margin: f64,
    pub pass: bool,
    pub diverged: bool,
    pub step: f64,
}

impl Verdict {
    pub fn min_transient_margin(&self) -> f64 {
        self.probes.iter().map(|p| p.transient_margin).fold(f64::INFINITY, f64::min)
    }

    pub fn min_steady_margin(&self) -> f64 {
        self.probes.iter().map(|p| p.steady_margin).fold(f64::INFINITY, f64::min)
    }
}

/// Probe τ values strictly inside `(lo, hi)`, log-spaced. A zero lower end
/// is replaced by `hi/100`.
pub fn probe_taus(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let lo = if lo > 0.0 { lo } else { hi / 100.0 };
    let (a, b) = (lo.ln(), hi.ln());
    (1..=n).map(|i| (a + (b - a) * i as f64 / (n + 1) as f64).exp()).collect()
}

/// Simulates `n_probe` τ values inside `(tau_lower, tau_upper)` with noise
/// amplitude `mu` and checks both performance bounds on each.
#[allow(clippy::too_many_arguments)]
pub fn verify_interval(
    scenario: &Scenario,
    sim: &SimConfig,
    tau_lower: f64,
    tau_upper: f64,
    n_probe: usize,
    eps_u: f64,
    eps_t: f64,
) -> Result<Verdict> {
    if !(tau_upper > tau_lower) || !tau_upper.is_finite() || n_probe == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot verify empty interval ({tau_lower}, {tau_upper})"
        )));
    }
    let taus = probe_taus(tau_lower, tau_upper, n_probe);
    let pool = thread_pool()?;
    let reports: Vec<PerformanceReport> = pool.install(|| {
        taus.par_iter()
            .map(|&tau| {
                let mut cfg = sim.clone();
                cfg.step = step_for_tau(sim.step, tau);
                simulate_report(scenario, &scenario.qfilter.with_tau(tau), &cfg, (eps_t, eps_u))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let probes: Vec<ProbeResult> = reports
        .iter()
        .map(|r| ProbeResult {
            tau: r.tau,
            sup_e: r.sup_e,
            tail_sup_e: r.tail_sup_e,
            transient_margin: eps_t - r.sup_e,
            steady_margin: eps_u - r.tail_sup_e,
            pass: r.pass_transient && r.pass_steady && !r.diverged,
            diverged: r.diverged,
            step: r.step,
        })
        .collect();
    Ok(Verdict {
        pass: probes.iter().all(|p| p.pass),
        eps_t,
        eps_u,
        probes,
    })
}

/// Agreement between the original loop and the directly integrated
/// transformed loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    /// `max_t ‖e_original − e_transformed‖`.
    pub max_e_deviation: f64,
    /// Largest relative residual of the `w − y_p` expansion while the
    /// saturation is inactive.
    pub max_dhat_residual: f64,
    pub checked_steps: usize,
    pub saturated_steps: usize,
}

/// Integrates the original and transformed loops in lock step with the same
/// held noise and compares `e(t)` at every step.
pub fn transform_cross_check(scenario: &Scenario, qcfg: &QFilterConfig, sim: &SimConfig) -> Result<CrossCheck> {
    use crate::transform::{TransformContext, TransformedSystem};
    sim.validate()?;
    let lp = ClosedLoop::new(scenario, qcfg)?;
    let ctx = TransformContext::new(&lp.plant, &lp.nom, &lp.ctrl, qcfg, &lp.aug)?;
    let tsys = TransformedSystem {
        ctx: &ctx,
        reference: &scenario.reference,
        disturbance: &scenario.disturbance,
    };
    let l = qcfg.l;
    let n_e = lp.aug.n_e();
    let steps = sim.steps();
    let h = sim.horizon / steps as f64;
    let mut noise = NoiseGenerator::new(sim.noise, sim.seed);
    let mut orig = lp.initial_state(&sim.initial)?;

    let transform = |t: f64, s: &[f64], v: f64| {
        let sig = lp.signals(t, s, v);
        let chi = lp.chi_of(s);
        let bfd = lp.lumped(t, s, sig.u_r, sig.d);
        let ts = ctx.forward_transform(lp.q_of(s), lp.p_of(s), &chi, lp.chi_n_of(s), sig.r, sig.u_r, bfd, v);
        (sig, chi, bfd, ts)
    };
    let v0 = noise.sample(0.0);
    let (_, _, _, ts0) = transform(0.0, &orig, v0);
    let mut trans: Vec<f64> = [ts0.xi, ts0.zeta, ts0.e, lp.chi_n_of(&orig).to_vec()].concat();
    let mut noise = NoiseGenerator::new(sim.noise, sim.seed);

    let mut ws_o = Rk4Workspace::new(orig.len());
    let mut ws_t = Rk4Workspace::new(trans.len());
    let mut out = CrossCheck {
        max_e_deviation: 0.0,
        max_dhat_residual: 0.0,
        checked_steps: 0,
        saturated_steps: 0,
    };
    for k in 0..steps {
        let t = k as f64 * h;
        let v = noise.sample(t);
        let (sig, chi, bfd, ts) = transform(t, &orig, v);
        if sig.active {
            out.saturated_steps += 1;
        } else {
            let xs = ctx.xi_star(&chi, sig.r);
            out.max_dhat_residual = out
                .max_dhat_residual
                .max(ctx.dhat_identity_residual(sig.w_minus_yp, &ts, &xs, bfd, v));
        }
        ws_o.step(|tt, s, o| lp.rhs(tt, s, v, o), t, h, &mut orig);
        ws_t.step(|tt, s, o| o.copy_from_slice(&tsys.deriv(tt, s, v)), t, h, &mut trans);
        if orig.iter().chain(&trans).any(|x| !x.is_finite() || x.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Numerical(format!("cross-check diverged at t = {}", t + h)));
        }
        let chi = lp.chi_of(&orig);
        let chn = lp.chi_n_of(&orig);
        let dev = (0..n_e)
            .map(|i| {
                let diff = (chi[i] - chn[i]) - trans[2 * l + i];
                diff * diff
            })
            .sum::<f64>()
            .sqrt();
        out.max_e_deviation = out.max_e_deviation.max(dev);
        out.checked_steps += 1;
    }
    Ok(out)
}
