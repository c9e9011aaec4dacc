//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O error, 2 usage or configuration error,
//! 3 solver failure, 4 mismatch against reference values.

use std::ffi::OsString;
use std::f64::consts::PI;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use serde::Serialize;

use super::config::{self, Problem, RawConfig, Settings, KEYS};
use super::output;
use super::presets::{self, CheckLine};
use super::study::{self, DemoReport};
use super::{HarnessError, Result};
use crate::extrapolation::extrapolate;
use crate::mesh::{CellField, Mesh};
use crate::oracles;
use crate::schemes::Scheme;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

const DEFAULT_OUT: &str = "wgflow-out";

pub fn command() -> Command {
    let mut cmd = Command::new("wgflow")
        .about("Finite-volume Wasserstein gradient flow solver")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(Arg::new("preset").long("preset").global(true).value_name("NAME").help("start from a named configuration"))
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("flat TOML file of settings"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .global(true)
                .value_name("DIR")
                .value_parser(value_parser!(PathBuf))
                .help("artifact directory [default: wgflow-out]"),
        )
        .arg(
            Arg::new("check")
                .long("check")
                .global(true)
                .action(ArgAction::SetTrue)
                .help("compare with the preset's reference values; exit 4 on mismatch"),
        );
    for key in KEYS {
        cmd = cmd.arg(Arg::new(key.name).long(key.name).global(true).value_name("VALUE").help(key.help).help_heading("Settings"));
    }
    cmd.subcommand(Command::new("run").about("one trajectory at the first level"))
        .subcommand(Command::new("converge").about("refinement sweep with errors and rates"))
        .subcommand(Command::new("demo-diffusion").about("naive BDF2, VIM and EVBDF2 on a diffusing bump"))
        .subcommand(Command::new("demo-pm").about("naive BDF2, VIM and EVBDF2 on the porous-medium equation"))
        .subcommand(Command::new("demo-multiphase").about("water sinking through oil"))
        .subcommand(
            Command::new("extrapolate")
                .about("extrapolate a pair of densities given as CSV files")
                .arg(Arg::new("first").required(true).value_name("MU").value_parser(value_parser!(PathBuf)))
                .arg(Arg::new("second").required(true).value_name("NU").value_parser(value_parser!(PathBuf)))
                .arg(
                    Arg::new("mesh")
                        .long("mesh")
                        .value_name("FILE")
                        .value_parser(value_parser!(PathBuf))
                        .help("mesh file; without it the x column must be a uniform 1D grid"),
                )
                .arg(
                    Arg::new("output")
                        .long("output")
                        .value_name("FILE")
                        .value_parser(value_parser!(PathBuf))
                        .help("output CSV [default: <out>/extrapolated.csv]"),
                ),
        )
        .subcommand(Command::new("oracle-check").about("self-tests of the exact solutions and references"))
        .subcommand(Command::new("presets").about("list the named configurations"))
}

/// Parse `args` (program name first), run, and return the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let out = matches
        .get_one::<PathBuf>("out")
        .or_else(|| sub.get_one::<PathBuf>("out"))
        .cloned()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    match dispatch(name, &matches, sub, &out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            if code == EXIT_SOLVER {
                let report = FailureReport { command: name.to_string(), error: e.to_string(), exit_code: code };
                if fs::create_dir_all(&out).is_ok() {
                    let _ = output::write_json(&out.join("failure.json"), &report);
                }
            }
            code
        }
    }
}

#[derive(Serialize)]
struct FailureReport {
    command: String,
    error: String,
    exit_code: i32,
}

fn global<'a, T: Clone + Send + Sync + 'static>(top: &'a ArgMatches, sub: &'a ArgMatches, id: &str) -> Option<&'a T> {
    sub.get_one::<T>(id).or_else(|| top.get_one::<T>(id))
}

/// Preset, then config file, then flags.
fn raw_config(top: &ArgMatches, sub: &ArgMatches, default_preset: Option<&str>) -> Result<(RawConfig, Option<String>)> {
    let preset = global::<String>(top, sub, "preset").cloned().or_else(|| default_preset.map(str::to_string));
    let mut raw = match &preset {
        Some(name) => presets::find(name)?.raw(),
        None => RawConfig::new(),
    };
    if let Some(path) = global::<PathBuf>(top, sub, "config") {
        raw.extend(config::read_toml(path)?);
    }
    for key in KEYS {
        if let Some(v) = global::<String>(top, sub, key.name) {
            raw.insert(key.name.to_string(), v.clone());
        }
    }
    Ok((raw, preset))
}

fn check_flag(top: &ArgMatches, sub: &ArgMatches) -> bool {
    sub.get_flag("check") || top.get_flag("check")
}

fn dispatch(name: &str, top: &ArgMatches, sub: &ArgMatches, out: &Path) -> Result<i32> {
    match name {
        "run" => cmd_run(top, sub, out),
        "converge" => cmd_converge(top, sub, out),
        "demo-diffusion" => cmd_demo(top, sub, out, "demo-diffusion"),
        "demo-pm" => cmd_demo(top, sub, out, "demo-pm"),
        "demo-multiphase" => cmd_multiphase(top, sub, out),
        "extrapolate" => cmd_extrapolate(top, sub, out),
        "oracle-check" => Ok(report_checks(&oracle_checks())),
        "presets" => {
            for p in presets::PRESETS {
                println!("{:<18} {}", p.name, p.about);
            }
            Ok(EXIT_OK)
        }
        other => Err(HarnessError::Usage(format!("unknown subcommand `{other}`"))),
    }
}

fn report_checks(lines: &[CheckLine]) -> i32 {
    for l in lines {
        println!("{} {}", if l.pass { "PASS" } else { "FAIL" }, l.what);
    }
    if lines.iter().all(|l| l.pass) {
        EXIT_OK
    } else {
        EXIT_MISMATCH
    }
}

fn cmd_run(top: &ArgMatches, sub: &ArgMatches, out: &Path) -> Result<i32> {
    let (raw, _) = raw_config(top, sub, None)?;
    let settings = Settings::from_raw(&raw)?;
    if settings.problem == Problem::Multiphase {
        return multiphase(&settings, out);
    }
    let run = study::run_level(&settings, 0)?;
    fs::create_dir_all(out)?;
    let steps = settings.snapshot_steps(0)?;
    let steps = if steps.is_empty() { steps } else { std::iter::once(0).chain(steps).collect() };
    output::write_trajectory_csv(output::create(&out.join("trajectory.csv"))?, &run, &steps)?;
    output::write_json(&out.join("summary.json"), &output::run_summary(&raw, &settings, &run))?;
    let traj = &run.trajectory;
    println!(
        "{} {}: {} steps, final mass {:.12}, {} Newton iterations, {:.2} s",
        settings.problem,
        settings.scheme,
        traj.densities.len() - 1,
        traj.diagnostics.last().map(|d| d.mass).unwrap_or(f64::NAN),
        traj.newton_iterations(),
        run.wall_time_s
    );
    if let Some(f) = &traj.failure {
        let report = FailureReport {
            command: "run".into(),
            error: format!("step {}: {}", f.step, f.error),
            exit_code: EXIT_SOLVER,
        };
        output::write_json(&out.join("failure.json"), &report)?;
        eprintln!("error: step {}: {}", f.step, f.error);
        return Ok(EXIT_SOLVER);
    }
    Ok(EXIT_OK)
}

fn cmd_converge(top: &ArgMatches, sub: &ArgMatches, out: &Path) -> Result<i32> {
    let (raw, preset) = raw_config(top, sub, None)?;
    let settings = Settings::from_raw(&raw)?;
    let reference = if check_flag(top, sub) {
        let name = preset.as_deref().ok_or_else(|| HarnessError::Usage("--check needs --preset".into()))?;
        Some(presets::find(name)?.reference.ok_or_else(|| HarnessError::Usage(format!("preset {name} has no reference values")))?)
    } else {
        None
    };
    let report = study::converge(&settings, preset.as_deref())?;
    fs::create_dir_all(out)?;
    output::write_report_csv(output::create(&out.join("convergence.csv"))?, &report)?;
    output::write_json(&out.join("convergence.json"), &report)?;
    println!("{} {} ({:.1} s)", report.problem, report.scheme, report.wall_time_s);
    println!("{:>5} {:>10} {:>12} {:>12} {:>7}", "level", "h", "tau", "error", "rate");
    for l in &report.levels {
        let rate = l.rate.map(|r| format!("{r:.3}")).unwrap_or_else(|| "/".into());
        println!("{:>5} {:>10.6} {:>12.6e} {:>12.4e} {:>7}", l.level, l.h, l.tau, l.error, rate);
    }
    Ok(match reference {
        Some(r) => report_checks(&presets::check(&r, &report, settings.delta)),
        None => EXIT_OK,
    })
}

fn cmd_demo(top: &ArgMatches, sub: &ArgMatches, out: &Path, name: &str) -> Result<i32> {
    let (raw, _) = raw_config(top, sub, Some(name))?;
    let settings = Settings::from_raw(&raw)?;
    let report = if name == "demo-diffusion" { study::demo_diffusion(&settings)? } else { study::demo_porous_medium(&settings)? };
    fs::create_dir_all(out)?;
    let prefix = name.trim_start_matches("demo-");
    for run in &report.runs {
        let steps: Vec<usize> = std::iter::once(0).chain(run.snapshots.iter().map(|s| s.step)).collect();
        let path = out.join(format!("{prefix}_{}.csv", run.scheme));
        output::write_trajectory_csv(output::create(&path)?, &run.run, &steps)?;
    }
    output::write_json(&out.join(format!("{name}.json")), &report)?;
    for run in &report.runs {
        let tv: Vec<String> = run.snapshots.iter().map(|s| format!("t={}: TV {:.4}", s.time, s.total_variation)).collect();
        match &run.failure {
            Some(f) => println!("{:<7} failed at step {}: {}", run.scheme, f.step, f.message),
            None => println!("{:<7} mass drift {:.1e}, min {:.3e}, {}", run.scheme, run.mass_drift, run.min_density, tv.join(", ")),
        }
    }
    let code = if report.run(Scheme::Evbdf2).is_some_and(|r| r.complete) { EXIT_OK } else { EXIT_SOLVER };
    if check_flag(top, sub) && code == EXIT_OK {
        return Ok(report_checks(&demo_checks(&report)));
    }
    Ok(code)
}

/// Qualitative expectations of the two 1D demos.
pub fn demo_checks(report: &DemoReport) -> Vec<CheckLine> {
    let mut lines = Vec::new();
    if let Some(ev) = report.run(Scheme::Evbdf2) {
        lines.push(CheckLine { pass: ev.complete, what: "evbdf2 completes".into() });
        lines.push(CheckLine { pass: ev.min_density >= 0.0, what: format!("evbdf2 min density {:.3e} >= 0", ev.min_density) });
        lines.push(CheckLine { pass: ev.mass_drift <= 1e-9, what: format!("evbdf2 mass drift {:.1e} <= 1e-9", ev.mass_drift) });
    }
    if report.name == "demo-diffusion" {
        let first = report.runs.iter().flat_map(|r| r.snapshots.first()).map(|s| s.time).fold(f64::INFINITY, f64::min);
        let tv = |s: Scheme| report.run(s).and_then(|r| r.snapshot_at(first)).map(|x| x.total_variation);
        if let (Some(v), Some(e)) = (tv(Scheme::Vim), tv(Scheme::Evbdf2)) {
            lines.push(CheckLine { pass: v > e, what: format!("t = {first}: TV vim {v:.6} > evbdf2 {e:.6}") });
        }
    } else if let Some(b) = report.run(Scheme::Bdf2Naive) {
        lines.push(CheckLine {
            pass: b.failure.is_some(),
            what: match &b.failure {
                Some(f) => format!("bdf2 reports failure at step {}", f.step),
                None => "bdf2 reports failure".into(),
            },
        });
    }
    lines
}

fn cmd_multiphase(top: &ArgMatches, sub: &ArgMatches, out: &Path) -> Result<i32> {
    let (raw, _) = raw_config(top, sub, Some("demo-multiphase"))?;
    let settings = Settings::from_raw(&raw)?;
    let code = multiphase(&settings, out)?;
    Ok(code)
}

fn multiphase(settings: &Settings, out: &Path) -> Result<i32> {
    let demo = study::demo_multiphase(settings)?;
    fs::create_dir_all(out)?;
    output::write_multiphase_csv(output::create(&out.join("multiphase.csv"))?, &demo.mesh, &demo.run)?;
    output::write_json(&out.join("multiphase.json"), &demo.summary)?;
    let s = &demo.summary;
    println!(
        "{} steps on {}x{}: energy {:.6} -> {:.6}, heavy center y {:.4} -> {:.4}, mass drift {:.1e}, simplex defect {:.1e}, {:.1} s",
        s.energies.len() - 1,
        s.nx,
        s.ny,
        s.energies[0],
        s.energies.last().copied().unwrap_or(f64::NAN),
        s.heavy_center_y[0],
        s.heavy_center_y.last().copied().unwrap_or(f64::NAN),
        s.max_mass_drift,
        s.max_simplex_defect,
        s.wall_time_s
    );
    if let Some(f) = &s.failure {
        eprintln!("error: step {}: {}", f.step, f.message);
        output::write_json(
            &out.join("failure.json"),
            &FailureReport { command: "demo-multiphase".into(), error: f.message.clone(), exit_code: EXIT_SOLVER },
        )?;
        return Ok(EXIT_SOLVER);
    }
    Ok(EXIT_OK)
}

fn cmd_extrapolate(top: &ArgMatches, sub: &ArgMatches, out: &Path) -> Result<i32> {
    let (raw, _) = raw_config(top, sub, None)?;
    let settings = Settings::from_raw(&raw)?;
    let read = |id: &str| -> Result<output::DensityColumn> {
        let path = sub.get_one::<PathBuf>(id).expect("required");
        let file = fs::File::open(path).map_err(|e| HarnessError::Usage(format!("cannot open {}: {e}", path.display())))?;
        output::read_density_csv(file)
    };
    let (mu, nu) = (read("first")?, read("second")?);
    if mu.rho.len() != nu.rho.len() {
        return Err(HarnessError::Usage(format!("densities have {} and {} cells", mu.rho.len(), nu.rho.len())));
    }
    let mesh = match sub.get_one::<PathBuf>("mesh") {
        Some(path) => Mesh::read_file(path)?,
        None => uniform_interval(&mu)?,
    };
    if mesh.n_cells() != mu.rho.len() {
        return Err(HarnessError::Usage(format!("mesh has {} cells, densities {}", mesh.n_cells(), mu.rho.len())));
    }
    let sol = extrapolate(&mesh, &CellField(mu.rho), &CellField(nu.rho), settings.alpha, settings.prefactor, &settings.solver)
        .map_err(|e| HarnessError::solver("extrapolation", e))?;
    let path = sub.get_one::<PathBuf>("output").cloned().unwrap_or_else(|| out.join("extrapolated.csv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    output::write_density_csv(output::create(&path)?, &mesh, &sol.rho)?;
    println!("{}: {} Newton iterations, mass {:.12}", path.display(), sol.iterations, mesh.mass(&sol.rho));
    Ok(EXIT_OK)
}

/// Interval mesh whose cell centers are the given uniform `x` column.
fn uniform_interval(d: &output::DensityColumn) -> Result<Mesh> {
    let x = d.x.as_ref().ok_or_else(|| HarnessError::Usage("without --mesh the density CSV needs an x column".into()))?;
    if d.y.is_some() {
        return Err(HarnessError::Usage("two-dimensional densities need --mesh".into()));
    }
    if x.len() < 2 {
        return Err(HarnessError::Usage("need at least two cells".into()));
    }
    let h = x[1] - x[0];
    let uniform = h > 0.0 && x.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h);
    if !uniform {
        return Err(HarnessError::Usage("x column is not a uniform increasing grid; pass --mesh".into()));
    }
    Ok(Mesh::interval(x.len(), x[0] - 0.5 * h, x[x.len() - 1] + 0.5 * h)?)
}

/// Quick self-tests of the oracles.
pub fn oracle_checks() -> Vec<CheckLine> {
    let mut lines = Vec::new();

    // rho_t = rho_xx - g rho_x, zero flux rho_x - g rho = 0 at both ends
    let g = 1.0;
    let (e, et, eb) = (1e-4, 1e-5, 1e-6);
    let f = |t: f64, x: f64| oracles::fp_exact(t, x, g);
    let mut worst: f64 = 0.0;
    for i in 1..20 {
        for t in [0.01, 0.1, 0.25] {
            let x = i as f64 / 20.0;
            let rt = (f(t + et, x) - f(t - et, x)) / (2.0 * et);
            let rx = (f(t, x + e) - f(t, x - e)) / (2.0 * e);
            let rxx = (f(t, x + e) - 2.0 * f(t, x) + f(t, x - e)) / (e * e);
            worst = worst.max((rt - rxx + g * rx).abs());
        }
    }
    let flux = [0.0, 1.0].iter().map(|&x| ((f(0.1, x + eb) - f(0.1, x - eb)) / (2.0 * eb) - g * f(0.1, x)).abs()).fold(0.0, f64::max);
    lines.push(CheckLine { pass: worst <= 1e-6, what: format!("Fokker-Planck exact solution: PDE residual {worst:.1e}") });
    lines.push(CheckLine { pass: flux <= 1e-6, what: format!("Fokker-Planck exact solution: boundary flux {flux:.1e}") });

    for delta in [2.0, 3.0, 4.0] {
        let t = config::barenblatt_t0(delta);
        let r = oracles::barenblatt_radius(t, delta, 2);
        // r = R sin(theta) removes the square-root behaviour at the edge of the support
        let n = 4000;
        let dth = 0.5 * PI / n as f64;
        let mass: f64 = (0..=n)
            .map(|i| {
                let th = i as f64 * dth;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                let rr = r * th.sin();
                w * 2.0 * PI * rr * oracles::barenblatt(t, [0.5 + rr, 0.5], delta, 2, [0.5, 0.5]) * r * th.cos()
            })
            .sum::<f64>()
            * dth
            / 3.0;
        lines.push(CheckLine { pass: (mass - 1.0).abs() <= 1e-8, what: format!("Barenblatt delta = {delta}: mass {mass:.12}") });
    }

    let cases: [(&[f64], &[f64]); 3] = [(&[3.0, 1.0, 2.0], &[2.0, 2.0, 2.0]), (&[1.0, 3.0, 2.0, 4.0], &[1.0, 2.5, 2.5, 4.0]), (&[1.0, 2.0], &[1.0, 2.0])];
    let pav_ok = cases.iter().all(|(y, want)| oracles::pav(y).iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-14));
    lines.push(CheckLine { pass: pav_ok, what: "isotonic regression on hand cases".into() });

    let r1 = study::rates(&[(0.05, 2.091e-2), (0.025, 6.376e-3)]).map(|r| r[0]).unwrap_or(f64::NAN);
    let r2 = study::rates(&[(0.05, 2.111e-2), (0.025, 6.800e-3)]).map(|r| r[0]).unwrap_or(f64::NAN);
    lines.push(CheckLine { pass: (r1 - 1.713).abs() < 5e-4 && (r2 - 1.634).abs() < 5e-4, what: format!("rates {r1:.3} and {r2:.3}") });
    lines
}

/// Entry point of the binary.
pub fn main() -> i32 {
    let code = main_with(std::env::args_os());
    let _ = io::stdout().flush();
    code
}
