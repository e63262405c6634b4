//! Artifact writers. Numbers use Rust's shortest round-trip formatting, so
//! equal inputs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::flow::{ConvergenceTable, FlowTrace};
use crate::grid::Field;

pub const TRACE_COLUMNS: [&str; 18] = [
    "step",
    "time",
    "phi",
    "phi_raw",
    "free_energy_F",
    "dissipation_E",
    "measure_total",
    "measure_pos",
    "measure_neg",
    "max_pos_laplacian",
    "excess_mass",
    "slope",
    "displacement",
    "ut_norm",
    "pde_residual",
    "newton_iters",
    "cg_iters",
    "clamp_events",
];

pub fn trace_csv(trace: &FlowTrace) -> String {
    let mut s = TRACE_COLUMNS.join(",");
    s.push('\n');
    for k in 0..trace.reports.len() {
        let r = &trace.reports[k];
        writeln!(
            s,
            "{k},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            trace.times[k],
            r.phi,
            r.phi_raw,
            r.free_energy_f,
            r.dissipation_e,
            r.measure_total,
            r.measure_pos,
            r.measure_neg,
            r.max_pos_laplacian,
            r.excess_mass,
            r.slope,
            trace.displacements[k],
            trace.ut_norms[k],
            trace.pde_residuals[k],
            trace.newton_iters[k],
            trace.cg_iters[k],
            r.clamp_events,
        )
        .expect("writing to a String");
    }
    s
}

pub fn field_csv(u: &Field) -> String {
    let mut s = String::with_capacity(24 * u.values().len());
    for x in u.values() {
        writeln!(s, "{x}").expect("writing to a String");
    }
    s
}

pub fn convergence_csv(table: &ConvergenceTable) -> String {
    let mut s = String::from("n_steps,tau,error,bound_rhs,order\n");
    for r in &table.rows {
        let order = r.order.map(|o| o.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{},{},{order}", r.n_steps, r.tau, r.error, r.bound_rhs).expect("writing to a String");
    }
    s
}

pub fn write_trace(dir: &Path, trace: &FlowTrace) -> io::Result<()> {
    fs::write(dir.join("trace.csv"), trace_csv(trace))?;
    for (k, u) in &trace.snapshots {
        fs::write(dir.join(format!("snapshot_{k}.csv")), field_csv(u))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{evolve, FlowConfig};
    use crate::grid::Grid;

    #[test]
    fn trace_csv_has_one_row_per_step_and_fixed_columns() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let u0 = Field::from_fn(g, |x| 0.01 * (std::f64::consts::PI * x[0]).cos()).unwrap();
        let t = evolve(&u0, &FlowConfig::new(1e-3, 3)).unwrap();
        let csv = trace_csv(&t);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], TRACE_COLUMNS.join(","));
        assert!(lines.iter().all(|l| l.split(',').count() == 18));
        let row: Vec<f64> = lines[2].split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(row[0], 1.0);
        assert_eq!(row[2], t.reports[1].phi);
        assert_eq!(row[12], t.displacements[1]);
    }

    #[test]
    fn field_values_round_trip() {
        let g = Grid::new(2, 4, 1.0).unwrap();
        let u = Field::from_fn(g, |x| (x[0] * 7.0).sin() / 3.0 + x[1]).unwrap();
        let back: Vec<f64> = field_csv(&u).lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(back, u.values());
    }
}
