//! Time stepping: LJKO (first order), EVBDF2, VIM and the naive BDF2 baseline.

use std::fmt;
use std::str::FromStr;

use crate::energies::Energy;
use crate::extrapolation::{extrapolate, extrapolate_with_potential, HjPrefactor};
use crate::hminus;
use crate::mesh::{CellField, Mesh};
use crate::solver::{solve_bdf2_naive, solve_step, Guess, SolverConfig, SolverError, StepProblem, StepSolution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Ljko,
    Evbdf2,
    Vim,
    Bdf2Naive,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Ljko, Scheme::Evbdf2, Scheme::Vim, Scheme::Bdf2Naive];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ljko => "ljko",
            Scheme::Evbdf2 => "evbdf2",
            Scheme::Vim => "vim",
            Scheme::Bdf2Naive => "bdf2",
        }
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| format!("unknown scheme `{s}` (expected ljko, evbdf2, vim or bdf2)"))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub tau: f64,
    pub steps: usize,
    /// Extrapolation parameter of EVBDF2 and naive BDF2; `beta = alpha - 1`.
    pub alpha: f64,
    /// Number of LJKO sub-steps of length `tau / init_substeps` producing `rho_1`.
    pub init_substeps: usize,
    pub prefactor: HjPrefactor,
    /// Recompute the VIM interpolation potential instead of reusing the half step's.
    pub vim_fresh_potential: bool,
    pub solver: SolverConfig,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            scheme: Scheme::Evbdf2,
            tau: 0.01,
            steps: 10,
            alpha: 4.0 / 3.0,
            init_substeps: 1,
            prefactor: HjPrefactor::default(),
            vim_fresh_potential: false,
            solver: SolverConfig::default(),
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        self.solver.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.alpha > 1.0 && self.alpha < 2.0) {
            return Err(SolverError::InvalidConfig(format!("alpha must lie in (1, 2), got {}", self.alpha)));
        }
        if self.init_substeps == 0 {
            return Err(SolverError::InvalidConfig("init_substeps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub energy: f64,
    pub min_density: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct SchemeFailure {
    pub step: usize,
    pub error: SolverError,
}

/// Densities at `t_n = n tau` for `n = 0..=steps`, truncated at the first failure.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub tau: f64,
    pub densities: Vec<CellField>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub failure: Option<SchemeFailure>,
}

impl Trajectory {
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.tau
    }

    pub fn last(&self) -> &CellField {
        self.densities.last().expect("trajectory holds the initial density")
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn newton_iterations(&self) -> usize {
        self.diagnostics.iter().map(|d| d.iterations).sum()
    }
}

/// `argmin (1/tau) A((rho + prev)/2; prev - rho) + E(rho)`.
pub fn ljko_step(mesh: &Mesh, energy: &Energy, prev: &CellField, tau: f64, config: &SolverConfig) -> Result<StepSolution, SolverError> {
    let problem = StepProblem { mesh, base: prev, step: tau, objective: energy };
    solve_step(&problem, config, Guess::default())
}

/// Extrapolate `rho_{n-2}, rho_{n-1}` to `alpha`, then take an LJKO step of length `(1 - beta) tau`.
pub fn evbdf2_step(
    mesh: &Mesh,
    energy: &Energy,
    prevprev: &CellField,
    prev: &CellField,
    config: &SchemeConfig,
) -> Result<StepSolution, SolverError> {
    let ext = extrapolate(mesh, prevprev, prev, config.alpha, config.prefactor, &config.solver)?;
    let beta = config.alpha - 1.0;
    let problem = StepProblem { mesh, base: &ext.rho, step: (1.0 - beta) * config.tau, objective: energy };
    let mut sol = solve_step(&problem, &config.solver, Guess { rho: Some(prev), phi: None })?;
    sol.iterations += ext.iterations;
    Ok(sol)
}

/// Half LJKO step, then extrapolation to time 2 of the pair `(rho_{n-1}, rho_{n-1/2})`.
pub fn vim_step(mesh: &Mesh, energy: &Energy, prev: &CellField, config: &SchemeConfig) -> Result<StepSolution, SolverError> {
    let half = ljko_step(mesh, energy, prev, 0.5 * config.tau, &config.solver)?;
    let phi = if config.vim_fresh_potential {
        let avg: CellField = prev.iter().zip(half.rho.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
        let h: CellField = half.rho.iter().zip(prev.iter()).map(|(a, b)| a - b).collect();
        hminus::solve_potential(mesh, &avg, &h)?
    } else {
        half.phi.scaled(-1.0)
    };
    let mut sol = extrapolate_with_potential(mesh, prev, &phi, 2.0, config.prefactor, &config.solver)?;
    sol.iterations += half.iterations;
    Ok(sol)
}

/// `rho_1` from `rho_0` by `init_substeps` LJKO steps.
pub fn initial_step(mesh: &Mesh, energy: &Energy, rho0: &CellField, config: &SchemeConfig) -> Result<StepSolution, SolverError> {
    let sub = config.tau / config.init_substeps as f64;
    let mut sol = ljko_step(mesh, energy, rho0, sub, &config.solver)?;
    for _ in 1..config.init_substeps {
        let next = ljko_step(mesh, energy, &sol.rho, sub, &config.solver)?;
        let iterations = sol.iterations + next.iterations;
        sol = StepSolution { iterations, ..next };
    }
    Ok(sol)
}

pub fn run_flow(mesh: &Mesh, energy: &Energy, rho0: &CellField, config: &SchemeConfig) -> Result<Trajectory, SolverError> {
    config.validate()?;
    if rho0.len() != mesh.n_cells() || energy.potential.len() != mesh.n_cells() {
        return Err(SolverError::InvalidProblem("field sizes do not match the mesh".into()));
    }
    let mut traj = Trajectory {
        scheme: config.scheme,
        tau: config.tau,
        densities: vec![rho0.clone()],
        diagnostics: vec![diagnostics(mesh, energy, 0, 0.0, rho0, 0, 0.0)],
        failure: None,
    };
    for n in 1..=config.steps {
        let prev = &traj.densities[n - 1];
        let result = match config.scheme {
            Scheme::Ljko => ljko_step(mesh, energy, prev, config.tau, &config.solver),
            Scheme::Vim => vim_step(mesh, energy, prev, config),
            _ if n == 1 => initial_step(mesh, energy, prev, config),
            Scheme::Evbdf2 => evbdf2_step(mesh, energy, &traj.densities[n - 2], prev, config),
            Scheme::Bdf2Naive => {
                solve_bdf2_naive(mesh, prev, &traj.densities[n - 2], config.tau, config.alpha, energy, &config.solver).map(|s| {
                    StepSolution { rho: s.rho, phi: s.phi_prev, iterations: s.iterations, residual: s.residual, barrier: 0.0 }
                })
            }
        };
        match result {
            Ok(sol) => {
                traj.diagnostics.push(diagnostics(mesh, energy, n, traj.time(n), &sol.rho, sol.iterations, sol.residual));
                traj.densities.push(sol.rho);
            }
            Err(error) => {
                traj.failure = Some(SchemeFailure { step: n, error });
                break;
            }
        }
    }
    Ok(traj)
}

fn diagnostics(mesh: &Mesh, energy: &Energy, step: usize, time: f64, rho: &CellField, iterations: usize, residual: f64) -> StepDiagnostics {
    StepDiagnostics {
        step,
        time,
        mass: mesh.mass(rho),
        energy: energy.evaluate(mesh, rho),
        min_density: rho.iter().copied().fold(f64::INFINITY, f64::min),
        iterations,
        residual,
    }
}
