//! CSV and JSON artifacts.
//!
//! Trajectories: `step,time,cell,x[,y],rho`. Multiphase snapshots:
//! `step,time,cell,x,y,phase,saturation`. Convergence reports:
//! `level,h,tau,error,rate`, with an empty rate on the first level.
//! Floats use the shortest representation that round-trips.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use super::config::{RawConfig, Settings};
use super::study::{ConvergenceReport, FailureInfo, LevelRun};
use super::{HarnessError, Result};
use crate::mesh::Mesh;
use crate::multiphase::MultiphaseRun;

fn coords(mesh: &Mesh, k: usize) -> Vec<String> {
    let c = mesh.centers()[k];
    (0..mesh.dim()).map(|a| c[a].to_string()).collect()
}

fn coord_header(mesh: &Mesh) -> Vec<&'static str> {
    if mesh.dim() == 1 {
        vec!["x"]
    } else {
        vec!["x", "y"]
    }
}

/// Rows for the states with the given step indices, or for every state when `steps` is empty.
pub fn write_trajectory_csv(w: impl Write, run: &LevelRun, steps: &[usize]) -> Result<()> {
    let mesh = &run.setup.mesh;
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["step", "time", "cell"];
    header.extend(coord_header(mesh));
    header.push("rho");
    out.write_record(&header)?;
    let all: Vec<usize> = (0..run.trajectory.densities.len()).collect();
    let steps = if steps.is_empty() { &all[..] } else { steps };
    for &n in steps.iter().filter(|&&n| n < run.trajectory.densities.len()) {
        let rho = &run.trajectory.densities[n];
        for k in 0..mesh.n_cells() {
            let mut row = vec![n.to_string(), run.time(n).to_string(), k.to_string()];
            row.extend(coords(mesh, k));
            row.push(rho[k].to_string());
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_multiphase_csv(w: impl Write, mesh: &Mesh, run: &MultiphaseRun) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "time", "cell", "x", "y", "phase", "saturation"])?;
    for (n, t, sys) in &run.snapshots {
        for (i, s) in sys.saturations.iter().enumerate() {
            for k in 0..mesh.n_cells() {
                let c = mesh.centers()[k];
                out.write_record([n.to_string(), t.to_string(), k.to_string(), c[0].to_string(), c[1].to_string(), i.to_string(), s[k].to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_report_csv(w: impl Write, report: &ConvergenceReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["level", "h", "tau", "error", "rate"])?;
    for l in &report.levels {
        let rate = l.rate.map(|r| r.to_string()).unwrap_or_default();
        out.write_record([l.level.to_string(), l.h.to_string(), l.tau.to_string(), l.error.to_string(), rate])?;
    }
    out.flush()?;
    Ok(())
}

/// `cell,x[,y],rho`.
pub fn write_density_csv(w: impl Write, mesh: &Mesh, rho: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["cell"];
    header.extend(coord_header(mesh));
    header.push("rho");
    out.write_record(&header)?;
    for (k, r) in rho.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(coords(mesh, k));
        row.push(r.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// A density read from CSV, with cell centers when the file has them.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityColumn {
    pub rho: Vec<f64>,
    pub x: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
}

/// Read any CSV with a `rho` column. If a `step` column is present only the
/// last step is kept, so trajectory files are accepted as well.
pub fn read_density_csv(r: impl Read) -> Result<DensityColumn> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let rho_col = col("rho").ok_or_else(|| HarnessError::Usage("density CSV needs a `rho` column".into()))?;
    let (x_col, y_col, step_col) = (col("x"), col("y"), col("step"));
    let mut rows: Vec<(String, f64, Option<f64>, Option<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| HarnessError::Usage(format!("bad number in column {c}: {e}")))
        };
        let step = step_col.map(|c| rec.get(c).unwrap_or("").trim().to_string()).unwrap_or_default();
        rows.push((step, num(rho_col)?, x_col.map(num).transpose()?, y_col.map(num).transpose()?));
    }
    if let Some(last) = rows.last().map(|r| r.0.clone()) {
        rows.retain(|r| r.0 == last);
    }
    if rows.is_empty() {
        return Err(HarnessError::Usage("density CSV has no rows".into()));
    }
    let rho = rows.iter().map(|r| r.1).collect();
    let x = x_col.map(|_| rows.iter().map(|r| r.2.unwrap_or(f64::NAN)).collect());
    let y = y_col.map(|_| rows.iter().map(|r| r.3.unwrap_or(f64::NAN)).collect());
    Ok(DensityColumn { rho, x, y })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    problem: String,
    scheme: String,
    nx: usize,
    tau: f64,
    t_start: f64,
    t_end: f64,
    window_start: f64,
    window: String,
    g: f64,
    delta: f64,
    alpha: f64,
    init_substeps: usize,
    hj_prefactor: String,
    snapshots: &'a [f64],
}

#[derive(Serialize)]
pub struct RunSummary<'a> {
    config: &'a RawConfig,
    resolved: ResolvedConfig<'a>,
    cells: usize,
    h: f64,
    steps: usize,
    complete: bool,
    failure: Option<FailureInfo>,
    times: Vec<f64>,
    masses: Vec<f64>,
    energies: Vec<f64>,
    min_densities: Vec<f64>,
    iterations: Vec<usize>,
    residuals: Vec<f64>,
    wall_time_s: f64,
}

/// JSON summary of a single trajectory: config echo, masses, energies, timings, iterations.
pub fn run_summary<'a>(raw: &'a RawConfig, settings: &'a Settings, run: &LevelRun) -> RunSummary<'a> {
    let traj = &run.trajectory;
    let d = &traj.diagnostics;
    RunSummary {
        config: raw,
        resolved: ResolvedConfig {
            problem: settings.problem.to_string(),
            scheme: settings.scheme.to_string(),
            nx: settings.level_nx(run.level),
            tau: traj.tau,
            t_start: settings.t_start,
            t_end: settings.t_end,
            window_start: settings.window_start,
            window: settings.window.to_string(),
            g: settings.g,
            delta: settings.delta,
            alpha: settings.alpha,
            init_substeps: settings.init_substeps,
            hj_prefactor: settings.prefactor.to_string(),
            snapshots: &settings.snapshots,
        },
        cells: run.setup.mesh.n_cells(),
        h: run.setup.mesh.size(),
        steps: traj.densities.len() - 1,
        complete: traj.is_complete(),
        failure: traj.failure.as_ref().map(|f| FailureInfo { step: f.step, time: run.time(f.step), message: f.error.to_string() }),
        times: d.iter().map(|x| run.t0 + x.time).collect(),
        masses: d.iter().map(|x| x.mass).collect(),
        energies: d.iter().map(|x| x.energy).collect(),
        min_densities: d.iter().map(|x| x.min_density).collect(),
        iterations: d.iter().map(|x| x.iterations).collect(),
        residuals: d.iter().map(|x| x.residual).collect(),
        wall_time_s: run.wall_time_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::study::LevelRecord;

    #[test]
    fn report_csv_layout() {
        let report = ConvergenceReport {
            levels: vec![
                LevelRecord { level: 0, h: 0.1, tau: 0.05, error: 0.02, ..LevelRecord::default() },
                LevelRecord { level: 1, h: 0.05, tau: 0.025, error: 0.005, rate: Some(2.0), ..LevelRecord::default() },
            ],
            ..ConvergenceReport::default()
        };
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &report).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "level,h,tau,error,rate\n0,0.1,0.05,0.02,\n1,0.05,0.025,0.005,2\n");
    }

    #[test]
    fn density_round_trip() {
        let mesh = Mesh::interval(4, 0.0, 2.0).unwrap();
        let rho = [0.1, 0.2, 1.0 / 3.0, 4.0];
        let mut buf = Vec::new();
        write_density_csv(&mut buf, &mesh, &rho).unwrap();
        let back = read_density_csv(&buf[..]).unwrap();
        assert_eq!(back.rho, rho);
        assert_eq!(back.x.unwrap(), vec![0.25, 0.75, 1.25, 1.75]);
        assert!(back.y.is_none());
    }

    #[test]
    fn trajectory_files_keep_the_last_step() {
        let text = "step,time,cell,x,rho\n0,0,0,0.25,1\n0,0,1,0.75,1\n3,0.3,0,0.25,0.5\n3,0.3,1,0.75,1.5\n";
        let d = read_density_csv(text.as_bytes()).unwrap();
        assert_eq!(d.rho, vec![0.5, 1.5]);
        assert!(read_density_csv("cell,x\n0,1\n".as_bytes()).is_err());
    }
}
