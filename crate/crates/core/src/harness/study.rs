//! Problem setups, error functionals, convergence sweeps and demo runs.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Problem, Settings, Window};
use super::{HarnessError, Result};
use crate::energies::Energy;
use crate::mesh::{CellField, Mesh};
use crate::multiphase::{demo_system, run_multiphase, MultiphaseRun, PhaseSystem};
use crate::oracles::{barenblatt, fp_exact};
use crate::schemes::{run_flow, Scheme, Trajectory};

/// Reference solution of a convergence problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exact {
    /// Fokker-Planck with `V = -g x`, depending on the first coordinate only.
    FokkerPlanck { g: f64 },
    Barenblatt { delta: f64, x0: [f64; 2] },
}

impl Exact {
    pub fn eval(&self, t: f64, x: [f64; 2]) -> f64 {
        match *self {
            Exact::FokkerPlanck { g } => fp_exact(t, x[0], g),
            Exact::Barenblatt { delta, x0 } => barenblatt(t, x, delta, 2, x0),
        }
    }
}

/// Mesh, energy and initial density of one level.
#[derive(Clone, Debug)]
pub struct Setup {
    pub mesh: Mesh,
    pub energy: Energy,
    pub rho0: CellField,
    pub exact: Option<Exact>,
}

pub fn setup(settings: &Settings, m: usize) -> Result<Setup> {
    let nx = settings.level_nx(m);
    let t0 = settings.start_time();
    let g = settings.g;
    let (mesh, energy, exact, rho0) = match settings.problem {
        Problem::Fp1d | Problem::Fp2d => {
            let mesh = if settings.problem == Problem::Fp1d {
                Mesh::interval(nx, 0.0, 1.0)?
            } else {
                Mesh::cartesian(nx, nx, (0.0, 1.0), (0.0, 1.0))?
            };
            let energy = Energy::fokker_planck(&mesh, |x| -g * x[0])?;
            let exact = Exact::FokkerPlanck { g };
            let rho0 = mesh.sample(|x| exact.eval(t0, x));
            (mesh, energy, Some(exact), rho0)
        }
        Problem::Pm2d => {
            let mesh = Mesh::cartesian(nx, nx, (0.0, 1.0), (0.0, 1.0))?;
            let energy = Energy::porous_medium(&mesh, settings.delta, |_| 0.0)?;
            let exact = Exact::Barenblatt { delta: settings.delta, x0: [0.5, 0.5] };
            let rho0 = mesh.sample(|x| exact.eval(t0, x));
            (mesh, energy, Some(exact), rho0)
        }
        Problem::Diffusion => {
            let mesh = Mesh::interval(nx, 0.0, 1.0)?;
            let energy = Energy::fokker_planck(&mesh, |_| 0.0)?;
            let rho0 = mesh.sample(|x| (-50.0 * (x[0] - 0.5).powi(2)).exp());
            (mesh, energy, None, rho0)
        }
        Problem::PmDemo => {
            let mesh = Mesh::interval(nx, 0.0, 1.0)?;
            let energy = Energy::porous_medium(&mesh, settings.delta, |x| -g * x[0])?;
            let rho0 = mesh.sample(|x| if x[0] <= 0.3 { 1.0 } else { 0.0 });
            (mesh, energy, None, rho0)
        }
        Problem::Multiphase => {
            return Err(HarnessError::Config("the multiphase problem runs through demo-multiphase".into()))
        }
    };
    let rho0 = if settings.normalize {
        let mass = mesh.mass(&rho0);
        rho0.scaled(1.0 / mass)
    } else {
        rho0
    };
    Ok(Setup { mesh, energy, rho0, exact })
}

/// One trajectory at sweep level `m`.
#[derive(Clone, Debug)]
pub struct LevelRun {
    pub level: usize,
    pub setup: Setup,
    /// Physical time of `trajectory.densities[0]`.
    pub t0: f64,
    pub trajectory: Trajectory,
    pub wall_time_s: f64,
}

impl LevelRun {
    pub fn time(&self, n: usize) -> f64 {
        self.t0 + self.trajectory.time(n)
    }
}

pub fn run_level(settings: &Settings, m: usize) -> Result<LevelRun> {
    let setup = setup(settings, m)?;
    let config = settings.scheme_config(m);
    let start = Instant::now();
    let trajectory = run_flow(&setup.mesh, &setup.energy, &setup.rho0, &config)
        .map_err(|e| HarnessError::solver(format!("level {m}"), e))?;
    Ok(LevelRun { level: m, setup, t0: settings.start_time(), trajectory, wall_time_s: start.elapsed().as_secs_f64() })
}

/// `sum_{n=1}^N tau sum_K |rho_{K,n} - exact(t0 + n tau, x_K)| m_K`.
pub fn error_l1l1(mesh: &Mesh, traj: &Trajectory, t0: f64, exact: impl Fn(f64, [f64; 2]) -> f64) -> Result<f64> {
    error_l1l1_after(mesh, traj, t0, f64::NEG_INFINITY, exact)
}

/// As [`error_l1l1`], keeping only the times strictly after `after`.
pub fn error_l1l1_after(
    mesh: &Mesh,
    traj: &Trajectory,
    t0: f64,
    after: f64,
    exact: impl Fn(f64, [f64; 2]) -> f64,
) -> Result<f64> {
    if let Some(f) = &traj.failure {
        return Err(HarnessError::Incomplete { step: f.step, steps: traj.densities.len() - 1 });
    }
    let slack = 1e-9 * traj.tau;
    let mut total = 0.0;
    for n in 1..traj.densities.len() {
        let t = t0 + traj.time(n);
        if t <= after + slack {
            continue;
        }
        let rho = &traj.densities[n];
        let local: f64 =
            mesh.centers().iter().zip(mesh.measures()).zip(rho.iter()).map(|((&x, m), r)| (r - exact(t, x)).abs() * m).sum();
        total += traj.tau * local;
    }
    Ok(total)
}

/// Observed orders from `(tau, error)` pairs ordered by decreasing `tau`.
pub fn rates(levels: &[(f64, f64)]) -> Result<Vec<f64>> {
    if levels.len() < 2 {
        return Err(HarnessError::Levels("need at least two levels".into()));
    }
    if let Some(&(_, e)) = levels.iter().find(|(_, e)| !(*e > 0.0)) {
        return Err(HarnessError::Levels(format!("errors must be positive, got {e}")));
    }
    levels
        .windows(2)
        .map(|w| {
            let ((t0, e0), (t1, e1)) = (w[0], w[1]);
            if !(t1 < t0) {
                return Err(HarnessError::Levels(format!("time steps must decrease: {t0} then {t1}")));
            }
            Ok((e0.ln() - e1.ln()) / (t0.ln() - t1.ln()))
        })
        .collect()
}

/// `sum_sigma |rho_K - rho_L|` over internal edges.
pub fn total_variation(mesh: &Mesh, rho: &[f64]) -> f64 {
    mesh.edges().iter().map(|e| (rho[e.k] - rho[e.l]).abs()).sum()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LevelRecord {
    pub level: usize,
    pub h: f64,
    pub tau: f64,
    pub error: f64,
    pub rate: Option<f64>,
    pub cells: usize,
    pub steps: usize,
    pub newton_iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolverStats {
    pub steps: usize,
    pub newton_iterations: usize,
    pub max_step_iterations: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub preset: Option<String>,
    pub problem: String,
    pub scheme: String,
    pub levels: Vec<LevelRecord>,
    pub rates: Vec<f64>,
    pub wall_time_s: f64,
    pub solver_stats: SolverStats,
}

/// Run every level (concurrently) and compute errors and rates.
pub fn converge(settings: &Settings, preset: Option<&str>) -> Result<ConvergenceReport> {
    if !settings.problem.has_exact() {
        return Err(HarnessError::Config(format!("problem {} has no exact solution", settings.problem)));
    }
    let start = Instant::now();
    let runs: Vec<LevelRun> = (0..settings.levels).into_par_iter().map(|m| run_level(settings, m)).collect::<Result<_>>()?;
    let mut levels = Vec::with_capacity(runs.len());
    let mut stats = SolverStats::default();
    for run in &runs {
        let traj = &run.trajectory;
        if let Some(f) = &traj.failure {
            return Err(HarnessError::solver(format!("level {} step {}", run.level, f.step), f.error.clone()));
        }
        let exact = run.setup.exact.expect("problem has an exact solution");
        let after = match settings.window {
            Window::Restrict => settings.window_start,
            Window::Restart => f64::NEG_INFINITY,
        };
        let error = error_l1l1_after(&run.setup.mesh, traj, run.t0, after, |t, x| exact.eval(t, x))?;
        let iterations = traj.newton_iterations();
        stats.steps += traj.densities.len() - 1;
        stats.newton_iterations += iterations;
        stats.max_step_iterations = stats.max_step_iterations.max(traj.diagnostics.iter().map(|d| d.iterations).max().unwrap_or(0));
        levels.push(LevelRecord {
            level: run.level,
            h: run.setup.mesh.size(),
            tau: traj.tau,
            error,
            rate: None,
            cells: run.setup.mesh.n_cells(),
            steps: traj.densities.len() - 1,
            newton_iterations: iterations,
            wall_time_s: run.wall_time_s,
        });
    }
    let rates = if levels.len() >= 2 {
        rates(&levels.iter().map(|l| (l.tau, l.error)).collect::<Vec<_>>())?
    } else {
        Vec::new()
    };
    for (l, r) in levels.iter_mut().skip(1).zip(&rates) {
        l.rate = Some(*r);
    }
    Ok(ConvergenceReport {
        preset: preset.map(str::to_string),
        problem: settings.problem.to_string(),
        scheme: settings.scheme.to_string(),
        levels,
        rates,
        wall_time_s: start.elapsed().as_secs_f64(),
        solver_stats: stats,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FailureInfo {
    pub step: usize,
    pub time: f64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SnapshotStat {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub total_variation: f64,
    pub min_density: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DemoRun {
    pub scheme: String,
    pub complete: bool,
    pub failure: Option<FailureInfo>,
    pub initial_mass: f64,
    /// `max_n |m_n - m_0| / m_0` over the computed states.
    pub mass_drift: f64,
    pub min_density: f64,
    pub snapshots: Vec<SnapshotStat>,
    pub newton_iterations: usize,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub run: LevelRun,
}

impl DemoRun {
    pub fn snapshot_at(&self, time: f64) -> Option<&SnapshotStat> {
        self.snapshots.iter().find(|s| (s.time - time).abs() < 1e-9 * (1.0 + time.abs()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DemoReport {
    pub name: String,
    pub problem: String,
    pub runs: Vec<DemoRun>,
}

impl DemoReport {
    pub fn run(&self, scheme: Scheme) -> Option<&DemoRun> {
        self.runs.iter().find(|r| r.scheme == scheme.name())
    }
}

/// The same initial value problem for several schemes; failures are recorded, not raised.
pub fn demo(name: &str, settings: &Settings, schemes: &[Scheme]) -> Result<DemoReport> {
    let runs = schemes
        .par_iter()
        .map(|&scheme| {
            let s = Settings { scheme, ..settings.clone() };
            let run = run_level(&s, 0)?;
            let wanted = s.snapshot_steps(0)?;
            Ok(demo_run(run, &wanted))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DemoReport { name: name.to_string(), problem: settings.problem.to_string(), runs })
}

fn demo_run(run: LevelRun, wanted: &[usize]) -> DemoRun {
    let traj = &run.trajectory;
    let mesh = &run.setup.mesh;
    let m0 = traj.diagnostics[0].mass;
    let mass_drift = traj.diagnostics.iter().map(|d| (d.mass - m0).abs() / m0).fold(0.0, f64::max);
    let min_density = traj.diagnostics.iter().map(|d| d.min_density).fold(f64::INFINITY, f64::min);
    let snapshots = wanted
        .iter()
        .filter(|&&n| n < traj.densities.len())
        .map(|&n| {
            let rho = &traj.densities[n];
            SnapshotStat {
                step: n,
                time: run.time(n),
                mass: mesh.mass(rho),
                total_variation: total_variation(mesh, rho),
                min_density: rho.iter().copied().fold(f64::INFINITY, f64::min),
            }
        })
        .collect();
    let failure = traj.failure.as_ref().map(|f| FailureInfo { step: f.step, time: run.time(f.step), message: f.error.to_string() });
    DemoRun {
        scheme: traj.scheme.to_string(),
        complete: traj.is_complete(),
        failure,
        initial_mass: m0,
        mass_drift,
        min_density,
        snapshots,
        newton_iterations: traj.newton_iterations(),
        wall_time_s: run.wall_time_s,
        run,
    }
}

/// Naive BDF2, VIM and EVBDF2 on the diffusion demo.
pub fn demo_diffusion(settings: &Settings) -> Result<DemoReport> {
    demo("demo-diffusion", settings, &[Scheme::Bdf2Naive, Scheme::Vim, Scheme::Evbdf2])
}

/// Naive BDF2, VIM and EVBDF2 on the porous-medium demo.
pub fn demo_porous_medium(settings: &Settings) -> Result<DemoReport> {
    demo("demo-pm", settings, &[Scheme::Bdf2Naive, Scheme::Vim, Scheme::Evbdf2])
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiphaseSummary {
    pub scheme: String,
    pub nx: usize,
    pub ny: usize,
    pub tau: f64,
    pub steps: usize,
    pub complete: bool,
    pub failure: Option<FailureInfo>,
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    pub masses: Vec<Vec<f64>>,
    pub heavy_center_y: Vec<f64>,
    pub iterations: Vec<usize>,
    /// `max_{n,i} |m_{i,n} - m_{i,0}|`.
    pub max_mass_drift: f64,
    pub max_simplex_defect: f64,
    pub min_saturation: f64,
    /// Largest increase of the energy between consecutive steps (nonpositive when it never increases).
    pub max_energy_increase: f64,
    pub snapshot_steps: Vec<usize>,
    pub snapshot_heavy_center_y: Vec<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct MultiphaseDemo {
    pub mesh: Mesh,
    pub initial: PhaseSystem,
    pub run: MultiphaseRun,
    pub summary: MultiphaseSummary,
}

pub fn demo_multiphase(settings: &Settings) -> Result<MultiphaseDemo> {
    if settings.problem != Problem::Multiphase {
        return Err(HarnessError::Config(format!("demo-multiphase needs problem = multiphase, got {}", settings.problem)));
    }
    let nx = settings.level_nx(0);
    let (mesh, mut initial) = demo_system(nx)?;
    initial.capillary = settings.capillary;
    let config = settings.multiphase_config(0);
    let start = Instant::now();
    let run = run_multiphase(&mesh, &initial, &config)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let d = &run.diagnostics;
    let m0 = &d[0].masses;
    let max_mass_drift =
        d.iter().flat_map(|x| x.masses.iter().zip(m0).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
    let max_energy_increase = d.windows(2).map(|w| w[1].energy - w[0].energy).fold(f64::NEG_INFINITY, f64::max);
    let heavy = initial.heaviest();
    let summary = MultiphaseSummary {
        scheme: config.scheme.to_string(),
        nx,
        ny: 2 * nx,
        tau: config.tau,
        steps: config.steps,
        complete: run.failure.is_none(),
        failure: run.failure.as_ref().map(|(n, e)| FailureInfo { step: *n, time: *n as f64 * config.tau, message: e.to_string() }),
        times: d.iter().map(|x| settings.start_time() + x.time).collect(),
        energies: d.iter().map(|x| x.energy).collect(),
        masses: d.iter().map(|x| x.masses.clone()).collect(),
        heavy_center_y: d.iter().map(|x| x.heavy_center[1]).collect(),
        iterations: d.iter().map(|x| x.iterations).collect(),
        max_mass_drift,
        max_simplex_defect: d.iter().map(|x| x.simplex_defect).fold(0.0, f64::max),
        min_saturation: d.iter().map(|x| x.min_saturation).fold(f64::INFINITY, f64::min),
        max_energy_increase,
        snapshot_steps: run.snapshots.iter().map(|s| s.0).collect(),
        snapshot_heavy_center_y: run.snapshots.iter().map(|s| s.2.center_of_mass(&mesh, heavy)[1]).collect(),
        wall_time_s,
    };
    Ok(MultiphaseDemo { mesh, initial, run, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RawConfig;
    use crate::schemes::{SchemeConfig, StepDiagnostics};
    use proptest::prelude::*;

    fn fake(mesh: &Mesh, tau: f64, states: Vec<CellField>) -> Trajectory {
        let diagnostics = states
            .iter()
            .enumerate()
            .map(|(n, r)| StepDiagnostics {
                step: n,
                time: n as f64 * tau,
                mass: mesh.mass(r),
                energy: 0.0,
                min_density: 0.0,
                iterations: 0,
                residual: 0.0,
            })
            .collect();
        Trajectory { scheme: Scheme::Ljko, tau, densities: states, diagnostics, failure: None }
    }

    #[test]
    fn exact_samples_have_zero_error() {
        let mesh = Mesh::interval(16, 0.0, 1.0).unwrap();
        let states: Vec<CellField> = (0..6).map(|n| mesh.sample(|x| fp_exact(0.05 * n as f64, x[0], 1.0))).collect();
        let traj = fake(&mesh, 0.05, states);
        assert_eq!(error_l1l1(&mesh, &traj, 0.0, |t, x| fp_exact(t, x[0], 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_gives_c_times_t() {
        let mesh = Mesh::interval(7, 0.0, 1.0).unwrap();
        let (c, tau, steps) = (0.3, 0.04, 5);
        let states: Vec<CellField> = (0..=steps).map(|_| CellField::constant(7, 1.0 + c)).collect();
        let traj = fake(&mesh, tau, states);
        let e = error_l1l1(&mesh, &traj, 0.0, |_, _| 1.0).unwrap();
        assert!((e - c * tau * steps as f64).abs() < 1e-14);
        // only the last two steps lie after t = 0.12
        let late = error_l1l1_after(&mesh, &traj, 0.0, 0.12, |_, _| 1.0).unwrap();
        assert!((late - 2.0 * c * tau).abs() < 1e-14);
    }

    #[test]
    fn incomplete_trajectory_is_an_error() {
        let mesh = Mesh::interval(3, 0.0, 1.0).unwrap();
        let mut traj = fake(&mesh, 0.1, vec![CellField::constant(3, 1.0)]);
        traj.failure = Some(crate::schemes::SchemeFailure { step: 1, error: crate::solver::SolverError::Positivity { barrier: 1.0 } });
        assert!(matches!(error_l1l1(&mesh, &traj, 0.0, |_, _| 1.0), Err(HarnessError::Incomplete { .. })));
    }

    #[test]
    fn rate_examples() {
        let r = rates(&[(0.1, 0.4), (0.05, 0.2)]).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-14);
        let r = rates(&[(0.05, 2.091e-2), (0.025, 6.376e-3)]).unwrap();
        assert!((r[0] - 1.713).abs() < 5e-4, "{r:?}");
        let r = rates(&[(0.05, 2.111e-2), (0.025, 6.800e-3)]).unwrap();
        assert!((r[0] - 1.634).abs() < 5e-4, "{r:?}");
        assert!(rates(&[(0.1, 1.0)]).is_err());
        assert!(rates(&[(0.1, 1.0), (0.05, 0.0)]).is_err());
        assert!(rates(&[(0.1, 1.0), (0.1, 0.5)]).is_err());
    }

    proptest! {
        #[test]
        fn power_laws_give_their_exponent(p in 0.2f64..4.0, c in 1e-3f64..10.0, tau0 in 1e-3f64..1.0, k in 2usize..6) {
            let levels: Vec<(f64, f64)> = (0..k).map(|m| {
                let tau = tau0 / 2f64.powi(m as i32);
                (tau, c * tau.powf(p))
            }).collect();
            for r in rates(&levels).unwrap() {
                prop_assert!((r - p).abs() < 1e-9);
            }
        }

        #[test]
        fn error_is_a_sum_over_steps(vals in proptest::collection::vec(0.0f64..2.0, 4..12), tau in 0.01f64..0.2) {
            let mesh = Mesh::interval(3, 0.0, 1.5).unwrap();
            let states: Vec<CellField> = vals.iter().map(|&v| CellField::constant(3, v)).collect();
            let traj = fake(&mesh, tau, states);
            let e = error_l1l1(&mesh, &traj, 0.0, |_, _| 1.0).unwrap();
            let direct: f64 = vals[1..].iter().map(|v| tau * 1.5 * (v - 1.0).abs()).sum();
            prop_assert!((e - direct).abs() < 1e-12 * (1.0 + direct));
        }
    }

    #[test]
    fn total_variation_of_a_step() {
        let mesh = Mesh::interval(4, 0.0, 1.0).unwrap();
        assert_eq!(total_variation(&mesh, &[0.0, 1.0, 1.0, 0.5]), 1.5);
        let grid = Mesh::cartesian(2, 2, (0.0, 1.0), (0.0, 1.0)).unwrap();
        // four internal edges, each crossing the jump once in a checkerboard
        assert_eq!(total_variation(&grid, &[0.0, 1.0, 1.0, 0.0]), 4.0);
    }

    fn settings(pairs: &[(&str, &str)]) -> Settings {
        let raw: RawConfig = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Settings::from_raw(&raw).unwrap()
    }

    #[test]
    fn level_sweep_matches_direct_runs() {
        let s = settings(&[("scheme", "ljko"), ("levels", "2"), ("t_end", "0.1")]);
        let report = converge(&s, Some("probe")).unwrap();
        assert_eq!(report.levels.len(), 2);
        assert_eq!(report.rates.len(), 1);
        assert_eq!(report.levels[1].cells, 20);
        for (m, level) in report.levels.iter().enumerate() {
            let mesh = Mesh::interval(10 << m, 0.0, 1.0).unwrap();
            let energy = Energy::fokker_planck(&mesh, |x| -x[0]).unwrap();
            let rho0 = mesh.sample(|x| fp_exact(0.0, x[0], 1.0));
            let tau = 0.05 / (1 << m) as f64;
            let cfg = SchemeConfig { scheme: Scheme::Ljko, tau, steps: 2 << m, ..SchemeConfig::default() };
            let traj = run_flow(&mesh, &energy, &rho0, &cfg).unwrap();
            let e = error_l1l1(&mesh, &traj, 0.0, |t, x| fp_exact(t, x[0], 1.0)).unwrap();
            assert_eq!(level.error, e);
            assert_eq!(level.h, 0.1 / (1 << m) as f64);
        }
        // first order scheme
        assert!(report.rates[0] > 0.6 && report.rates[0] < 1.4, "{:?}", report.rates);
    }

    #[test]
    fn restart_window_starts_from_the_exact_state() {
        let s = settings(&[("scheme", "ljko"), ("window_start", "0.15"), ("t_end", "0.25")]);
        let run = run_level(&s, 0).unwrap();
        assert_eq!(run.t0, 0.15);
        assert_eq!(run.trajectory.densities.len(), 3);
        let expected = run.setup.mesh.sample(|x| fp_exact(0.15, x[0], 1.0));
        assert_eq!(run.trajectory.densities[0], expected);
        let restrict = settings(&[("scheme", "ljko"), ("window_start", "0.15"), ("t_end", "0.25"), ("window", "restrict")]);
        let full = converge(&restrict, None).unwrap();
        let all = converge(&settings(&[("scheme", "ljko"), ("t_end", "0.25")]), None).unwrap();
        assert!(full.levels[0].error < all.levels[0].error);
        assert_eq!(full.levels[0].steps, 5);
    }

    #[test]
    fn barenblatt_setup_has_unit_mass() {
        let s = settings(&[("problem", "pm2d"), ("nx", "32")]);
        let setup = setup(&s, 0).unwrap();
        assert!((setup.mesh.mass(&setup.rho0) - 1.0).abs() < 0.05);
        assert_eq!(setup.mesh.n_cells(), 32 * 32);
    }

    #[test]
    fn short_diffusion_demo_reports_every_scheme() {
        let s = settings(&[("problem", "diffusion"), ("nx", "20"), ("t_end", "0.02"), ("snapshots", "0.01,0.02")]);
        let report = demo_diffusion(&s).unwrap();
        assert_eq!(report.runs.len(), 3);
        for run in &report.runs {
            assert!(run.complete, "{}: {:?}", run.scheme, run.failure);
            assert_eq!(run.snapshots.len(), 2);
            assert!(run.mass_drift < 1e-9);
            assert!(run.snapshot_at(0.02).is_some());
        }
    }

    #[test]
    fn small_multiphase_demo() {
        let s = settings(&[("problem", "multiphase"), ("nx", "3"), ("tau", "2"), ("t_end", "6"), ("snapshots", "2,6")]);
        let demo = demo_multiphase(&s).unwrap();
        let sum = &demo.summary;
        assert!(sum.complete);
        assert_eq!(sum.snapshot_steps, vec![0, 1, 3]);
        assert_eq!(sum.energies.len(), 4);
        assert!(sum.max_mass_drift < 1e-8 && sum.max_simplex_defect < 1e-8);
        assert!(sum.max_energy_increase <= 1e-10);
    }
}
