//! `dobbench`: simulate, design, sweep and verify disturbance-observer loops
//! described by a JSON scenario file.

mod output;
#[cfg(test)]
mod command_tests;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dobbench::design::{design_tau, DesignResult, SettleEig};
use dobbench::scenario::Scenario;
use dobbench::sim::{
    integrate, log_grid, step_for_tau, sweep_tau, tail_horizon_check, transform_cross_check, CrossCheck,
    HorizonCheck, NoiseSpec, PerformanceReport, Verdict,
};
use serde::Serialize;
use thiserror::Error;

/// Largest allowed deviation between original and transformed error signals.
const DEVIATION_LIMIT: f64 = 1e-6;
/// Largest allowed relative residual of the estimate expansion.
const RESIDUAL_LIMIT: f64 = 1e-8;
const NOISE_PERIOD: f64 = 0.02;
/// Probe ceiling when the design leaves τ unbounded above.
const TAU_CAP: f64 = 1.0;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("simulation diverged at t = {0}")]
    Diverged(f64),
    #[error("design infeasible: {0}")]
    Infeasible(String),
    #[error("guarantee violated: {0}")]
    Violated(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Diverged(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Violated(_) => 4,
        }
    }
}

impl From<dobbench::Error> for CliError {
    fn from(e: dobbench::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "dobbench", version, about = "Disturbance-observer loop simulation and time-constant design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the closed loop and write a trajectory CSV plus report JSON.
    Simulate(SimulateArgs),
    /// Compute the admissible time-constant interval.
    Design(DesignArgs),
    /// Sweep the filter time constant over a log grid.
    Sweep(SweepArgs),
    /// Design, then simulate probes inside the interval and cross-check the transform.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides both the noise seed and the design sampling seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SettleChoice {
    S,
    F,
}

#[derive(Args)]
struct DesignOverrides {
    /// Noise level used by the design.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, value_enum)]
    settle_eig: Option<SettleChoice>,
    /// Replaces the sampled bound on the slow-manifold rate.
    #[arg(long)]
    kappa1: Option<f64>,
    /// Multiplies the sampled (or overridden) slow-manifold bound.
    #[arg(long)]
    kappa1_scale: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Trajectory CSV path; the report goes next to it with a .json extension.
    #[arg(long)]
    out: PathBuf,
    /// Filter time constant, overriding the scenario.
    #[arg(long)]
    tau: Option<f64>,
    /// Also rerun with a 50% longer horizon and compare tail metrics.
    #[arg(long)]
    horizon_check: bool,
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: DesignOverrides,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    tau_min: f64,
    #[arg(long)]
    tau_max: f64,
    #[arg(long, default_value_t = 15)]
    points: usize,
    /// Sweep CSV path; metadata and reports go next to it as .json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: DesignOverrides,
    /// Probe count, overriding the scenario's design section.
    #[arg(long)]
    probes: Option<usize>,
    /// Horizon of the transform cross-check run.
    #[arg(long, default_value_t = 1.0)]
    check_horizon: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(common: &Common) -> Result<Scenario, CliError> {
    let mut sc = Scenario::from_path(&common.scenario)?;
    if let Some(seed) = common.seed {
        sc.sim.seed = seed;
        sc.design.seed = seed;
    }
    Ok(sc)
}

fn apply_overrides(sc: &mut Scenario, o: &DesignOverrides) -> Result<(), CliError> {
    if let Some(mu) = o.mu {
        sc.design.mu = mu;
    }
    if let Some(choice) = o.settle_eig {
        sc.design.settle_eig = match choice {
            SettleChoice::S => SettleEig::S,
            SettleChoice::F => SettleEig::F,
        };
    }
    if let Some(k) = o.kappa1 {
        sc.design.kappa1 = Some(k);
    }
    if let Some(s) = o.kappa1_scale {
        sc.design.kappa1_scale = s;
    }
    sc.design.validate()?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateReport {
    report: PerformanceReport,
    horizon: f64,
    noise: NoiseSpec,
    diverged_at: Option<f64>,
    horizon_check: Option<HorizonCheck>,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let sc = load(&args.common)?;
    let qcfg = match args.tau {
        Some(t) => sc.qfilter.with_tau(t),
        None => sc.qfilter.clone(),
    };
    qcfg.validate(sc.plant.nu)?;
    let out = integrate(&sc, &qcfg, &sc.sim, sc.eps())?;
    output::write_trajectory(&args.out, &out.trajectory)?;
    let horizon_check = if args.horizon_check && !out.report.diverged {
        Some(tail_horizon_check(&sc, &qcfg, &sc.sim, sc.eps())?)
    } else {
        None
    };
    let report = SimulateReport {
        report: out.report.clone(),
        horizon: sc.sim.horizon,
        noise: sc.sim.noise,
        diverged_at: out.trajectory.diverged_at,
        horizon_check,
    };
    output::write_json(&output::json_sidecar(&args.out), &report)?;
    let r = &out.report;
    println!(
        "tau {:e}: sup|e| {:e}, tail sup|e| {:e}, saturation {:.3}",
        r.tau, r.sup_e, r.tail_sup_e, r.saturation_fraction
    );
    if let Some(hc) = &report.horizon_check {
        println!(
            "tail metric over 1.5x horizon: {:e} (change {:.2}%)",
            hc.extended_tail_sup_e,
            100.0 * hc.relative_change
        );
    }
    match out.trajectory.diverged_at {
        Some(t) => Err(CliError::Diverged(t)),
        None => Ok(()),
    }
}

fn run_design(sc: &Scenario) -> Result<DesignResult, CliError> {
    Ok(design_tau(sc)?)
}

fn cmd_design(args: &DesignArgs) -> Result<(), CliError> {
    let mut sc = load(&args.common)?;
    apply_overrides(&mut sc, &args.overrides)?;
    let result = run_design(&sc)?;
    let text = serde_json::to_string_pretty(&result).map_err(|e| CliError::Io(e.to_string()))?;
    println!("{text}");
    if let Some(path) = &args.out {
        output::write_json(path, &result)?;
    }
    if result.feasible {
        Ok(())
    } else {
        Err(CliError::Infeasible(result.binding_constraint))
    }
}

#[derive(Serialize)]
struct SweepMeta {
    seed: u64,
    step: f64,
    horizon: f64,
    noise: NoiseSpec,
    reports: Vec<PerformanceReport>,
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let sc = load(&args.common)?;
    if !(args.tau_min > 0.0 && args.tau_min < args.tau_max && args.tau_max.is_finite()) || args.points < 2 {
        return Err(CliError::Config(format!(
            "need 0 < tau-min < tau-max and points >= 2, got {} {} {}",
            args.tau_min, args.tau_max, args.points
        )));
    }
    let taus = log_grid(args.tau_min, args.tau_max, args.points);
    let reports = sweep_tau(&sc, &sc.sim, &taus, sc.eps())?;
    output::write_sweep(&args.out, &reports)?;
    let meta = SweepMeta {
        seed: sc.sim.seed,
        step: sc.sim.step,
        horizon: sc.sim.horizon,
        noise: sc.sim.noise,
        reports: reports.clone(),
    };
    output::write_json(&output::json_sidecar(&args.out), &meta)?;
    for r in &reports {
        println!("{:.6e}  {:.6e}  {:.6e}  {:.3}", r.tau, r.sup_e, r.tail_sup_e, r.saturation_fraction);
    }
    Ok(())
}

#[derive(Serialize)]
struct VerifyReport {
    design: DesignResult,
    noise: NoiseSpec,
    probe_lower: f64,
    probe_upper: f64,
    verdict: Verdict,
    cross_check_tau: f64,
    cross_check: CrossCheck,
    cross_check_pass: bool,
    pass: bool,
    notes: Vec<String>,
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let mut sc = load(&args.common)?;
    apply_overrides(&mut sc, &args.overrides)?;
    let design = run_design(&sc)?;
    if !design.feasible {
        return Err(CliError::Infeasible(design.binding_constraint));
    }
    let probes = args.probes.unwrap_or(sc.design.probes);
    let report = verify_design(&sc, design, probes, args.check_horizon)?;
    print_verdict(&report);
    if let Some(path) = &args.out {
        output::write_json(path, &report)?;
    }
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Violated(violation_summary(&report)))
    }
}

fn verify_design(sc: &Scenario, design: DesignResult, probes: usize, check_horizon: f64) -> Result<VerifyReport, CliError> {
    let mut notes = Vec::new();
    let mut sim = sc.sim.clone();
    sim.noise = if design.mu > 0.0 {
        sim.noise.with_mu(design.mu, NOISE_PERIOD)
    } else {
        NoiseSpec::None
    };
    if design.tau_lower == 0.0 {
        notes.push("tau_lower = 0: probes start at tau_upper/100".into());
    }
    let upper = if design.tau_upper.is_finite() {
        design.tau_upper
    } else {
        notes.push(format!("tau_upper is unbounded: probes capped at {TAU_CAP}"));
        TAU_CAP.max(design.tau_lower * 10.0)
    };
    let verdict = dobbench::sim::verify_interval(sc, &sim, design.tau_lower, upper, probes, design.eps_u, design.eps_t)?;

    let tau = verdict.probes[verdict.probes.len() / 2].tau;
    let mut check_sim = sim.clone();
    check_sim.horizon = check_horizon.min(sim.horizon);
    check_sim.step = step_for_tau(sim.step, tau).min(check_sim.horizon / 100.0);
    let cross_check = transform_cross_check(sc, &sc.qfilter.with_tau(tau), &check_sim)?;
    let cross_check_pass =
        cross_check.max_e_deviation < DEVIATION_LIMIT && cross_check.max_dhat_residual < RESIDUAL_LIMIT;

    let probe_lower = verdict.probes.first().map_or(design.tau_lower, |p| p.tau);
    let probe_upper = verdict.probes.last().map_or(upper, |p| p.tau);
    Ok(VerifyReport {
        pass: verdict.pass && cross_check_pass,
        design,
        noise: sim.noise,
        probe_lower,
        probe_upper,
        verdict,
        cross_check_tau: tau,
        cross_check,
        cross_check_pass,
        notes,
    })
}

fn print_verdict(r: &VerifyReport) {
    let d = &r.design;
    println!(
        "interval ({:e}, {:e}), binding {}, mu {:e} (threshold {:e})",
        d.tau_lower, d.tau_upper, d.binding_constraint, d.mu, d.mu_star
    );
    for p in &r.verdict.probes {
        println!(
            "  tau {:.6e}: sup|e| {:.6e} (margin {:.6e}), tail {:.6e} (margin {:.6e}) {}",
            p.tau,
            p.sup_e,
            p.transient_margin,
            p.tail_sup_e,
            p.steady_margin,
            if p.pass { "pass" } else { "FAIL" }
        );
    }
    println!(
        "  cross-check at tau {:.6e}: deviation {:.3e}, estimate residual {:.3e} {}",
        r.cross_check_tau,
        r.cross_check.max_e_deviation,
        r.cross_check.max_dhat_residual,
        if r.cross_check_pass { "pass" } else { "FAIL" }
    );
    for n in &r.notes {
        println!("  note: {n}");
    }
}

fn violation_summary(r: &VerifyReport) -> String {
    let mut parts: Vec<String> = r
        .verdict
        .probes
        .iter()
        .filter(|p| !p.pass)
        .map(|p| {
            format!(
                "tau {:e} margins {:e}/{:e}",
                p.tau, p.transient_margin, p.steady_margin
            )
        })
        .collect();
    if !r.cross_check_pass {
        parts.push("transform cross-check".into());
    }
    parts.join("; ")
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Design(a) => cmd_design(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn execute<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    run(&cli)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
