//! CSV and JSON writers.

use std::path::{Path, PathBuf};

use dobbench::inf_float::format_f64;
use dobbench::sim::{PerformanceReport, Trajectory};
use serde::Serialize;

use crate::CliError;

/// Sidecar path for the JSON report of a CSV output.
pub fn json_sidecar(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn block_header(name: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{name}_{i}"))
}

/// One row per recorded sample: time, error norm, the real and nominal
/// augmented states, observer states and estimate columns.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let (n_chi, n_nom) = (
        traj.chi.first().map_or(0, Vec::len),
        traj.chi_n.first().map_or(0, Vec::len),
    );
    let (n_q, n_p) = (traj.q.first().map_or(0, Vec::len), traj.p.first().map_or(0, Vec::len));
    let mut header = vec!["time".to_string(), "e_norm".to_string()];
    header.extend(block_header("chi", n_chi));
    header.extend(block_header("chi_n", n_nom));
    header.extend(block_header("q", n_q));
    header.extend(block_header("p", n_p));
    header.extend(["dhat", "w_minus_yp", "noise", "sat_active"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;

    for k in 0..traj.times.len() {
        let mut row = vec![format_f64(traj.times[k]), format_f64(traj.e_norm[k])];
        for block in [&traj.chi[k], &traj.chi_n[k], &traj.q[k], &traj.p[k]] {
            row.extend(block.iter().map(|v| format_f64(*v)));
        }
        row.push(format_f64(traj.dhat[k]));
        row.push(format_f64(traj.w_minus_yp[k]));
        row.push(format_f64(traj.noise[k]));
        row.push(u8::from(traj.sat_active[k]).to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn write_sweep(path: &Path, reports: &[PerformanceReport]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["tau", "sup_e", "tail_sup_e", "saturation_fraction", "diverged"])
        .map_err(csv_err)?;
    for r in reports {
        w.write_record([
            format_f64(r.tau),
            format_f64(r.sup_e),
            format_f64(r.tail_sup_e),
            format_f64(r.saturation_fraction),
            u8::from(r.diverged).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}
