//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use dobbench::design::{design_tau, prepare, DesignResult, GainConstants};
use dobbench::dob::{Dob, DobState};
use dobbench::linalg::{build_t, is_hurwitz, lyapunov_residual, solve_lyapunov, unit_upper_inverse, DenseMatrix};
use dobbench::scenario::Scenario;
use dobbench::sim::{
    log_grid, sweep_tau, transform_cross_check, verify_interval, NoiseSpec, Rk4Workspace, SimConfig, Verdict,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// Noise configuration used by every design verification run.
fn verification_sim(sc: &Scenario, mu: f64) -> SimConfig {
    let mut sim = sc.sim.clone();
    sim.noise = sim.noise.with_mu(mu, 0.02);
    sim
}

fn design_at(sc: &Scenario, mu: f64) -> DesignResult {
    let mut sc = sc.clone();
    sc.design.mu = mu;
    design_tau(&sc).expect("design runs")
}

fn threshold(sc: &Scenario) -> f64 {
    design_at(sc, 0.0).mu_star
}

fn transform_equivalence() -> Outcome {
    let sc = Scenario::benchmark();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for noise in [NoiseSpec::None, NoiseSpec::Square { mu: 0.01, period: 0.02 }] {
        let sim = SimConfig::new(1e-4, 5.0, noise);
        let cc = transform_cross_check(&sc, &sc.qfilter, &sim).map_err(|e| e.to_string())?;
        worst = worst.max(cc.max_e_deviation);
    }
    let t = start.elapsed();
    check(
        worst < 1e-6 && within(t, 10.0),
        format!("max |e_orig - e_trans| = {worst:.3e} over 5 s, both noise cases, {:.2} s", t.as_secs_f64()),
    )
}

fn estimate_identity() -> Outcome {
    let sc = Scenario::benchmark();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for noise in [NoiseSpec::None, NoiseSpec::Square { mu: 0.01, period: 0.02 }] {
        let sim = SimConfig::new(1e-4, 5.0, noise);
        let cc = transform_cross_check(&sc, &sc.qfilter, &sim).map_err(|e| e.to_string())?;
        worst = worst.max(cc.max_dhat_residual);
        checked += cc.checked_steps;
    }
    check(
        worst < 1e-8 && checked > 0,
        format!("max relative residual {worst:.3e} over {checked} unsaturated steps"),
    )
}

fn noise_free_recovery() -> Outcome {
    let sc = Scenario::benchmark();
    let mut sim = sc.sim.clone();
    sim.noise = NoiseSpec::None;
    let taus = [0.01, 0.02, 0.05, 0.1, 0.2];
    let start = Instant::now();
    let reports = sweep_tau(&sc, &sim, &taus, (0.1, 0.05)).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let sups: Vec<f64> = reports.iter().map(|r| r.sup_e).collect();
    let monotone = sups.windows(2).all(|w| w[0] < w[1]);
    check(
        monotone && sups[0] < 0.1 && within(t, 30.0),
        format!("sup|e| for tau 0.01..0.2 = {sups:.4?}, {:.2} s", t.as_secs_f64()),
    )
}

fn noise_u_shape() -> Outcome {
    let sc = Scenario::benchmark();
    let mut sim = sc.sim.clone();
    sim.noise = sim.noise.with_mu(0.05, 0.02);
    let taus = log_grid(1e-4, 0.5, 15);
    let start = Instant::now();
    let reports = sweep_tau(&sc, &sim, &taus, sc.eps()).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let (idx, best) = reports
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.sup_e.total_cmp(&b.1.sup_e))
        .expect("nonempty sweep");
    let interior = idx > 0 && idx + 1 < reports.len();
    check(
        interior && within(t, 60.0),
        format!(
            "minimum sup|e| {:.4} at tau {:.3e} (grid index {idx} of 0..14), endpoints {:.4} / {:.4}, {:.2} s",
            best.sup_e,
            best.tau,
            reports[0].sup_e,
            reports[14].sup_e,
            t.as_secs_f64()
        ),
    )
}

fn guaranteed_verdict(sc: &Scenario) -> Result<(DesignResult, Verdict), String> {
    let mu = threshold(sc) / 10.0;
    let d = design_at(sc, mu);
    if !d.feasible {
        return Err(format!("design infeasible at mu = {mu:e}: {}", d.binding_constraint));
    }
    let v = verify_interval(sc, &verification_sim(sc, mu), d.tau_lower, d.tau_upper, 5, 0.05, 0.2)
        .map_err(|e| e.to_string())?;
    Ok((d, v))
}

fn guarantee_direction() -> Outcome {
    let bench = Scenario::benchmark();
    let b = design_at(&bench, threshold(&bench) / 10.0);
    println!(
        "  note: benchmark design at mu*/10 = {:.3e}: interval ({:.3e}, {:.3e}), too narrow to simulate",
        b.mu, b.tau_lower, b.tau_upper
    );
    let sc = Scenario::design_benchmark();
    let start = Instant::now();
    let (d, v) = guaranteed_verdict(&sc)?;
    let t = start.elapsed();
    check(
        v.pass && within(t, 60.0),
        format!(
            "design fixture mu = {:.3e}, interval ({:.3e}, {:.3e}), 5 probes, min margins {:.4e} / {:.4e}, {:.1} s",
            d.mu,
            d.tau_lower,
            d.tau_upper,
            v.min_transient_margin(),
            v.min_steady_margin(),
            t.as_secs_f64()
        ),
    )
}

fn noise_free_lower_bound() -> Outcome {
    let sc = Scenario::benchmark();
    let star = threshold(&sc);
    let zero = design_at(&sc, 0.0).tau_lower;
    let lowers: Vec<f64> = [0.5, 0.2, 0.1, 0.05, 0.01]
        .iter()
        .map(|f| design_at(&sc, star * f).tau_lower)
        .collect();
    let positive = lowers.iter().all(|t| *t > 0.0);
    let non_increasing = lowers.windows(2).all(|w| w[1] <= w[0]);
    check(
        zero == 0.0 && positive && non_increasing,
        format!(
            "tau_lower(0) = {zero}, tau_lower over decreasing mu = [{}]",
            lowers.iter().map(|t| format!("{t:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn level_function_suite() -> Outcome {
    let sc = Scenario::benchmark();
    let prep = prepare(&sc).map_err(|e| e.to_string())?;
    let gc: &GainConstants = &prep.constants;
    let k0 = gc.k0();
    let mu = gc.h_inv(k0).map_err(|e| e.to_string())? / 10.0;
    let sigma = |t: f64| gc.sigma_bar(mu, t).unwrap();

    let td = gc.tau_dagger(mu);
    let grid = log_grid(td / 10.0, td * 10.0, 1000);
    let argmin = (0..grid.len()).min_by(|&a, &b| sigma(grid[a]).total_cmp(&sigma(grid[b]))).unwrap();
    let cell = (grid[1] / grid[0]).ln();
    let grid_ok = (grid[argmin] / td).ln().abs() <= cell;

    let convex_ok = grid.iter().all(|&t| {
        let h = 1e-3 * t;
        sigma(t + h) + sigma(t - h) - 2.0 * sigma(t) > 0.0
    });

    let mut h_worst = 0.0f64;
    for m in [mu * 1e-3, mu, mu * 10.0, 1e-12, 1e-6] {
        let back = gc.h_inv(gc.h(m)).map_err(|e| e.to_string())?;
        h_worst = h_worst.max((back / m - 1.0).abs());
    }

    let mut tilde_ok = true;
    let mut tested = 0;
    for t in log_grid(td / 5.0, td * 5.0, 9) {
        let mt = gc.mu_tilde(k0, t);
        if mt > 0.0 {
            tested += 1;
            tilde_ok &= gc.sigma_bar(0.99 * mt, t).unwrap() < k0 && k0 <= gc.sigma_bar(1.01 * mt, t).unwrap();
        }
    }
    check(
        grid_ok && convex_ok && h_worst < 1e-8 && tilde_ok && tested > 0,
        format!(
            "grid minimum {:.4e} vs closed form {td:.4e} (cell {cell:.2e}), convex {convex_ok}, h round trip {h_worst:.1e}, mu-tilde ok at {tested} points: {tilde_ok}",
            grid[argmin]
        ),
    )
}

fn numerics() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let mut lyap = 0.0f64;
    for sc in [Scenario::benchmark(), Scenario::design_benchmark()] {
        lyap = lyap.max(prepare(&sc).map_err(|e| e.to_string())?.lyapunov.residual);
    }
    let a = DenseMatrix::from_rows(2, 2, &[0.0, 1.0, -2.0, -3.0]).unwrap();
    let p = solve_lyapunov(&a).map_err(|e| e.to_string())?;
    lyap = lyap.max(lyapunov_residual(&a, &p));
    ok &= lyap < 1e-10;
    notes.push(format!("Lyapunov residual {lyap:.1e}"));

    let fixtures = [
        ([0.0, 1.0, -2.0, -3.0], true, -1.0),
        ([0.0, 1.0, 0.0, 0.0], false, 0.0),
        ([-1.0, 0.0, 0.0, -1.0], true, -1.0),
    ];
    let mut hurwitz_ok = true;
    for (e, want, margin) in fixtures {
        let v = is_hurwitz(&DenseMatrix::from_rows(2, 2, &e).unwrap()).map_err(|e| e.to_string())?;
        hurwitz_ok &= v.hurwitz == want && (v.margin - margin).abs() < 1e-9;
    }
    ok &= hurwitz_ok;
    notes.push(format!("Hurwitz 2x2 fixtures {hurwitz_ok}"));

    let coeffs = [1.0, 3.0, 3.0];
    let t_one = build_t(&coeffs, 1.0).unwrap();
    let inv_one = unit_upper_inverse(&t_one);
    let mut struct_err = 0.0f64;
    for tau in [0.1, 0.5, 2.0] {
        let t = build_t(&coeffs, tau).unwrap();
        let inv = unit_upper_inverse(&t);
        let d = DenseMatrix::diag(&(1..=3).map(|k| tau.powi(-k)).collect::<Vec<_>>());
        for (m_tau, m_one) in [(&t, &t_one), (&inv, &inv_one)] {
            let lhs = m_tau * &d;
            let rhs = &d * m_one;
            struct_err = struct_err.max((&lhs - &rhs).max_abs() / lhs.max_abs().max(1.0));
            for r in 0..3 {
                struct_err = struct_err.max((m_tau[(r, r)] - 1.0).abs());
                for c in 0..r {
                    struct_err = struct_err.max(m_tau[(r, c)].abs());
                }
            }
        }
    }
    ok &= struct_err < 1e-12;
    notes.push(format!("band/unit-triangular identities {struct_err:.1e}"));

    let sc = Scenario::benchmark();
    let dob = Dob::new(&sc.qfilter, &sc.nominal).map_err(|e| e.to_string())?;
    let y = 0.37;
    let mut q = vec![0.0; sc.qfilter.l];
    let mut ws = Rk4Workspace::new(q.len());
    let base = DobState::zeros(sc.nominal.psi.len(), sc.qfilter.l);
    let h = 1e-3;
    for k in 0..20_000 {
        ws.step(
            |_, s, out| {
                let st = DobState { q: s.to_vec(), ..base.clone() };
                out.copy_from_slice(&dob.deriv(&st, y, 0.0).1);
            },
            k as f64 * h,
            h,
            &mut q,
        );
    }
    let dc = (q[0] - y).abs();
    ok &= dc < 1e-9;
    notes.push(format!("steady q1 - y = {dc:.1e}"));

    check(ok, notes.join(", "))
}

fn constants_load_bearing() -> Outcome {
    let sc = Scenario::design_benchmark();
    let (nominal_design, nominal) = guaranteed_verdict(&sc)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = dir.path().join("verify.json");
    let out = Command::new(env!("CARGO_BIN_EXE_dobbench"))
        .arg("verify")
        .arg("--scenario")
        .arg(scenario_path("design_benchmark.json"))
        .args(["--mu", &format!("{:e}", nominal_design.mu), "--kappa1-scale", "0.01", "--probes", "5"])
        .arg("--out")
        .arg(&report)
        .output()
        .map_err(|e| e.to_string())?;
    let code = out.status.code().unwrap_or(-1);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let min_margin = |key: &str| {
        json["verdict"]["probes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p[key].as_f64().unwrap())
            .fold(f64::INFINITY, f64::min)
    };
    let (mt, ms) = (min_margin("transient_margin"), min_margin("steady_margin"));
    // a margin loss of at least 1% of the corresponding bound counts as visible
    let shrink_t = (nominal.min_transient_margin() - mt) / 0.2;
    let shrink_s = (nominal.min_steady_margin() - ms) / 0.05;
    check(
        code == 4 || shrink_t > 0.01 || shrink_s > 0.01,
        format!(
            "kappa1 x0.01: verify exit {code}, interval ({:.3e}, {:.3e}) vs ({:.3e}, {:.3e}), margin loss {:.1e} / {:.1e} of the bounds",
            json["design"]["tau_lower"].as_f64().unwrap_or(f64::NAN),
            json["design"]["tau_upper"].as_f64().unwrap_or(f64::NAN),
            nominal_design.tau_lower,
            nominal_design.tau_upper,
            shrink_t,
            shrink_s
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("transform equivalence", transform_equivalence),
        ("estimate identity", estimate_identity),
        ("noise-free recovery", noise_free_recovery),
        ("noise-induced U-shape", noise_u_shape),
        ("guarantee direction", guarantee_direction),
        ("noise-free lower bound", noise_free_lower_bound),
        ("level-function suite", level_function_suite),
        ("numerics", numerics),
        ("constants are load-bearing", constants_load_bearing),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS [{secs:.1} s] {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL [{secs:.1} s] {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
