//! Immiscible incompressible multiphase flow in a porous medium.
//!
//! Each phase `i` has a saturation `s_i`, a fluid density `rho_i` and a
//! viscosity `mu_i`. The saturations sum to one in every cell and each phase
//! moves in its own Wasserstein space with metric weight `mu_i`. The energy is
//!
//! ```text
//! E(s) = sum_K m_K [ sum_i Psi_i(x_K) s_{i,K} + sum_{i>=1} Pi(s_{i,K}) ]
//! ```
//!
//! with gravity potential `Psi_i = -rho_i g.x` and Brooks-Corey capillary
//! energy `Pi(s) = -2 lambda sqrt(1 - s)`, whose derivative is the capillary
//! pressure `lambda (1 - s)^(-1/2)`.
//!
//! A step linearizes each phase's distance independently and adds one
//! multiplier per cell (a reference pressure) for the saturation constraint.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::extrapolation::{extrapolate, HjPrefactor};
use crate::hminus;
use crate::linalg::{SymMatrix, Symbolic};
use crate::mesh::{CellField, Mesh};
use crate::solver::{interior_point, BarrierSystem, SolverConfig, SolverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MultiphaseError {
    #[error("need at least two phases, got {0}")]
    TooFewPhases(usize),
    #[error("phase {phase}: {msg}")]
    BadPhase { phase: usize, msg: String },
    #[error("saturations do not sum to one in cell {cell} (sum {sum})")]
    NotSimplex { cell: usize, sum: f64 },
    #[error("invalid multiphase configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Fluid density and viscosity of one phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Phase {
    pub density: f64,
    pub viscosity: f64,
}

/// Tolerance on the per-cell saturation sum accepted at construction.
const SIMPLEX_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSystem {
    pub phases: Vec<Phase>,
    pub saturations: Vec<CellField>,
    /// Gravitational acceleration vector.
    pub gravity: [f64; 2],
    /// Brooks-Corey parameter, applied to every phase but the first.
    pub capillary: f64,
}

impl PhaseSystem {
    pub fn new(
        mesh: &Mesh,
        phases: Vec<Phase>,
        saturations: Vec<CellField>,
        gravity: [f64; 2],
        capillary: f64,
    ) -> Result<PhaseSystem, MultiphaseError> {
        let sys = PhaseSystem { phases, saturations, gravity, capillary };
        sys.check(mesh)?;
        Ok(sys)
    }

    fn check(&self, mesh: &Mesh) -> Result<(), MultiphaseError> {
        let np = self.phases.len();
        if np < 2 {
            return Err(MultiphaseError::TooFewPhases(np));
        }
        if self.saturations.len() != np {
            return Err(MultiphaseError::Config(format!("{} saturation fields for {np} phases", self.saturations.len())));
        }
        if !(self.capillary >= 0.0 && self.capillary.is_finite()) {
            return Err(MultiphaseError::Config(format!("capillary parameter must be nonnegative, got {}", self.capillary)));
        }
        for (i, (p, s)) in self.phases.iter().zip(&self.saturations).enumerate() {
            let bad = |msg: String| Err(MultiphaseError::BadPhase { phase: i, msg });
            if !(p.viscosity > 0.0 && p.viscosity.is_finite()) || !p.density.is_finite() {
                return bad(format!("viscosity must be positive and density finite, got {p:?}"));
            }
            if s.len() != mesh.n_cells() {
                return bad("saturation size does not match the mesh".into());
            }
            if s.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return bad("saturation outside [0, 1]".into());
            }
            if !(mesh.mass(s) > 0.0) {
                return bad("phase has no mass".into());
            }
        }
        for k in 0..mesh.n_cells() {
            let sum: f64 = self.saturations.iter().map(|s| s[k]).sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(MultiphaseError::NotSimplex { cell: k, sum });
            }
        }
        Ok(())
    }

    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }

    /// `Psi_i(x_K) = -rho_i g.x_K` for every phase.
    pub fn potentials(&self, mesh: &Mesh) -> Vec<CellField> {
        let g = self.gravity;
        self.phases
            .iter()
            .map(|p| mesh.sample(|x| -p.density * (g[0] * x[0] + g[1] * x[1])))
            .collect()
    }

    pub fn masses(&self, mesh: &Mesh) -> Vec<f64> {
        self.saturations.iter().map(|s| mesh.mass(s)).collect()
    }

    /// Largest `|sum_i s_{i,K} - 1|` over cells.
    pub fn simplex_defect(&self) -> f64 {
        let n = self.saturations[0].len();
        (0..n).map(|k| (self.saturations.iter().map(|s| s[k]).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Index of the densest phase.
    pub fn heaviest(&self) -> usize {
        (0..self.phases.len()).max_by(|&a, &b| self.phases[a].density.total_cmp(&self.phases[b].density)).unwrap_or(0)
    }

    /// Center of mass of phase `i`.
    pub fn center_of_mass(&self, mesh: &Mesh, i: usize) -> [f64; 2] {
        let s = &self.saturations[i];
        let total = mesh.mass(s);
        let mut c = [0.0; 2];
        for ((x, m), v) in mesh.centers().iter().zip(mesh.measures()).zip(s.iter()) {
            c[0] += x[0] * m * v;
            c[1] += x[1] * m * v;
        }
        [c[0] / total, c[1] / total]
    }

    fn with_saturations(&self, saturations: Vec<CellField>) -> PhaseSystem {
        PhaseSystem { saturations, ..self.clone() }
    }
}

/// `lambda (1 - s)^(-1/2)`.
pub fn capillary_pressure(lambda: f64, s: f64) -> f64 {
    lambda / (1.0 - s).sqrt()
}

/// `-2 lambda sqrt(1 - s)`, an antiderivative of [`capillary_pressure`].
pub fn capillary_energy(lambda: f64, s: f64) -> f64 {
    -2.0 * lambda * (1.0 - s).sqrt()
}

/// Coupled energy of the phase system. Infinite if a capillary phase fills a cell.
pub fn multiphase_energy(mesh: &Mesh, sys: &PhaseSystem) -> f64 {
    energy_of(mesh, &sys.potentials(mesh), sys.capillary, &sys.saturations)
}

fn energy_of(mesh: &Mesh, psi: &[CellField], lambda: f64, s: &[CellField]) -> f64 {
    let m = mesh.measures();
    let mut e = 0.0;
    for (i, (si, pi)) in s.iter().zip(psi).enumerate() {
        for k in 0..m.len() {
            let mut v = pi[k] * si[k];
            if i > 0 {
                if si[k] >= 1.0 {
                    return f64::INFINITY;
                }
                v += capillary_energy(lambda, si[k]);
            }
            e += m[k] * v;
        }
    }
    e
}

/// Result of one constrained step.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiphaseStep {
    pub saturations: Vec<CellField>,
    /// One potential per phase, `base_i - s_i + div((L avg_i / mu_i) grad phi_i) = 0`.
    pub potentials: Vec<CellField>,
    /// Per-cell multiplier of the saturation constraint.
    pub pressure: CellField,
    pub iterations: usize,
    pub residual: f64,
}

/// Minimize `sum_i (1/step) A_i((s_i + base_i)/2; base_i - s_i) + E(s)` subject to
/// `sum_i s_i = 1` and `s >= 0`, where `A_i` uses mobility `L(w) / mu_i`.
///
/// `bases` need not satisfy the saturation constraint cellwise, but their
/// total mass must match the domain volume.
pub fn multiphase_step(
    mesh: &Mesh,
    sys: &PhaseSystem,
    bases: &[CellField],
    step: f64,
    config: &SolverConfig,
) -> Result<MultiphaseStep, SolverError> {
    config.validate()?;
    let n = mesh.n_cells();
    let np = sys.n_phases();
    if bases.len() != np || bases.iter().any(|b| b.len() != n) {
        return Err(SolverError::InvalidProblem("base fields do not match the phase system".into()));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(SolverError::InvalidProblem(format!("step scale {step} must be positive")));
    }
    if bases.iter().flat_map(|b| b.iter()).any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(SolverError::InvalidProblem("base saturations must be finite and nonnegative".into()));
    }
    let total: f64 = bases.iter().map(|b| mesh.mass(b)).sum();
    if (total - mesh.volume()).abs() > 1e-9 * mesh.volume() {
        return Err(SolverError::InvalidProblem(format!("base volume {total} differs from the domain volume {}", mesh.volume())));
    }
    let mut system = PhaseStepSystem {
        mesh,
        bases,
        psi: sys.potentials(mesh),
        mobility_scale: sys.phases.iter().map(|p| 1.0 / p.viscosity).collect(),
        lambda: sys.capillary,
        step,
        sym: mesh.symbolic(2, np),
    };
    let start = system.project(system.start(&sys.saturations));
    let (x, stats) = interior_point(&mut system, start, config, 1.0 / np as f64)?;
    let split = |v: &[f64], i: usize| CellField((0..n).map(|k| v[k * np + i]).collect());
    Ok(MultiphaseStep {
        saturations: (0..np).map(|i| split(&x.s, i)).collect(),
        potentials: (0..np).map(|i| split(&x.phi, i)).collect(),
        pressure: system.pressure(&x),
        iterations: stats.iterations,
        residual: stats.residual,
    })
}

/// First-order step from the current state.
pub fn multiphase_ljko_step(mesh: &Mesh, sys: &PhaseSystem, tau: f64, config: &SolverConfig) -> Result<PhaseSystem, SolverError> {
    let out = multiphase_step(mesh, sys, &sys.saturations, tau, config)?;
    Ok(sys.with_saturations(out.saturations))
}

/// Second-order step: per-phase extrapolation of `(prev, current)`, then a
/// constrained step of scale `(1 - beta) tau` from the extrapolated base.
pub fn multiphase_evbdf2_step(
    mesh: &Mesh,
    prev: &PhaseSystem,
    current: &PhaseSystem,
    tau: f64,
    alpha: f64,
    prefactor: HjPrefactor,
    config: &SolverConfig,
) -> Result<PhaseSystem, SolverError> {
    let out = evbdf2_inner(mesh, prev, current, tau, alpha, prefactor, config)?;
    Ok(current.with_saturations(out.saturations))
}

fn evbdf2_inner(
    mesh: &Mesh,
    prev: &PhaseSystem,
    current: &PhaseSystem,
    tau: f64,
    alpha: f64,
    prefactor: HjPrefactor,
    config: &SolverConfig,
) -> Result<MultiphaseStep, SolverError> {
    let beta = alpha - 1.0;
    let bases = prev
        .saturations
        .iter()
        .zip(&current.saturations)
        .map(|(a, b)| extrapolate(mesh, a, b, alpha, prefactor, config).map(|e| e.rho))
        .collect::<Result<Vec<_>, _>>()?;
    multiphase_step(mesh, current, &bases, (1.0 - beta) * tau, config)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MultiphaseScheme {
    #[default]
    Ljko,
    Evbdf2,
}

impl FromStr for MultiphaseScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ljko" => Ok(MultiphaseScheme::Ljko),
            "evbdf2" => Ok(MultiphaseScheme::Evbdf2),
            other => Err(format!("unknown multiphase scheme `{other}` (expected ljko or evbdf2)")),
        }
    }
}

impl fmt::Display for MultiphaseScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MultiphaseScheme::Ljko => "ljko",
            MultiphaseScheme::Evbdf2 => "evbdf2",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiphaseConfig {
    pub scheme: MultiphaseScheme,
    pub tau: f64,
    pub steps: usize,
    /// States closest to these times are kept; the initial and final states always are.
    pub snapshot_times: Vec<f64>,
    pub alpha: f64,
    pub prefactor: HjPrefactor,
    pub solver: SolverConfig,
}

impl Default for MultiphaseConfig {
    fn default() -> Self {
        MultiphaseConfig {
            scheme: MultiphaseScheme::Ljko,
            tau: 1.0,
            steps: 120,
            snapshot_times: vec![8.0, 16.0, 24.0, 48.0, 120.0],
            alpha: 4.0 / 3.0,
            prefactor: HjPrefactor::default(),
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiphaseDiagnostics {
    pub step: usize,
    pub time: f64,
    pub energy: f64,
    pub masses: Vec<f64>,
    pub simplex_defect: f64,
    pub min_saturation: f64,
    /// Center of mass of the densest phase.
    pub heavy_center: [f64; 2],
    /// Newton iterations of the step that produced this state.
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct MultiphaseRun {
    /// `(step, time, state)`, in increasing order.
    pub snapshots: Vec<(usize, f64, PhaseSystem)>,
    /// One entry per state, the initial one included.
    pub diagnostics: Vec<MultiphaseDiagnostics>,
    pub failure: Option<(usize, SolverError)>,
}

fn diagnose(mesh: &Mesh, sys: &PhaseSystem, step: usize, time: f64, iterations: usize) -> MultiphaseDiagnostics {
    MultiphaseDiagnostics {
        iterations,
        step,
        time,
        energy: multiphase_energy(mesh, sys),
        masses: sys.masses(mesh),
        simplex_defect: sys.simplex_defect(),
        min_saturation: sys.saturations.iter().flat_map(|s| s.iter().copied()).fold(f64::INFINITY, f64::min),
        heavy_center: sys.center_of_mass(mesh, sys.heaviest()),
    }
}

/// Time-step the system; stops at the first solver failure and reports it.
pub fn run_multiphase(mesh: &Mesh, sys: &PhaseSystem, config: &MultiphaseConfig) -> Result<MultiphaseRun, MultiphaseError> {
    sys.check(mesh)?;
    config.solver.validate()?;
    if !(config.tau > 0.0 && config.tau.is_finite()) {
        return Err(MultiphaseError::Config(format!("tau must be positive, got {}", config.tau)));
    }
    if !(config.alpha > 1.0 && config.alpha < 2.0) {
        return Err(MultiphaseError::Config(format!("alpha must lie in (1, 2), got {}", config.alpha)));
    }
    let tau = config.tau;
    let wanted: Vec<usize> = config.snapshot_times.iter().map(|t| (t / tau).round().max(0.0) as usize).collect();
    let mut run = MultiphaseRun { snapshots: vec![(0, 0.0, sys.clone())], diagnostics: vec![diagnose(mesh, sys, 0, 0.0, 0)], failure: None };
    let mut prev: Option<PhaseSystem> = None;
    let mut current = sys.clone();
    for n in 1..=config.steps {
        let out = match (config.scheme, &prev) {
            (MultiphaseScheme::Evbdf2, Some(p)) => {
                evbdf2_inner(mesh, p, &current, tau, config.alpha, config.prefactor, &config.solver)
            }
            _ => multiphase_step(mesh, &current, &current.saturations, tau, &config.solver),
        };
        let (next, iterations) = match out {
            Ok(s) => (current.with_saturations(s.saturations), s.iterations),
            Err(e) => {
                run.failure = Some((n, e));
                break;
            }
        };
        let t = n as f64 * tau;
        run.diagnostics.push(diagnose(mesh, &next, n, t, iterations));
        if n == config.steps || wanted.contains(&n) {
            run.snapshots.push((n, t, next.clone()));
        }
        prev = Some(std::mem::replace(&mut current, next));
    }
    if run.failure.is_some() && run.snapshots.last().map(|s| s.0) != Some(run.diagnostics.len() - 1) {
        run.snapshots.push((run.diagnostics.len() - 1, (run.diagnostics.len() - 1) as f64 * tau, current));
    }
    Ok(run)
}

/// Two-phase water/oil parameters: water first, gravity `9.81` downward, `lambda = 0.05`.
pub fn water_oil() -> (Vec<Phase>, [f64; 2], f64) {
    (vec![Phase { density: 1.0, viscosity: 1.0 }, Phase { density: 0.87, viscosity: 100.0 }], [0.0, -9.81], 0.05)
}

/// Water saturation below the initial layer. A fully oil-saturated cell has
/// infinite capillary energy.
pub const RESIDUAL_WATER: f64 = 0.01;

/// Rectangle `[0, 1] x [0, 2]` with `nx x 2nx` cells, water filling the top quarter.
pub fn demo_system(nx: usize) -> Result<(Mesh, PhaseSystem), MultiphaseError> {
    let mesh = Mesh::cartesian(nx, 2 * nx, (0.0, 1.0), (0.0, 2.0)).map_err(|e| MultiphaseError::Config(e.to_string()))?;
    let water = mesh.sample(|x| if x[1] > 1.5 { 1.0 } else { RESIDUAL_WATER });
    let oil: CellField = water.iter().map(|w| 1.0 - w).collect();
    let (phases, g, lambda) = water_oil();
    let sys = PhaseSystem::new(&mesh, phases, vec![water, oil], g, lambda)?;
    Ok((mesh, sys))
}

/// Newton state, interleaved by cell: index `k * np + i`.
#[derive(Clone, Debug)]
struct PhasePoint {
    s: Vec<f64>,
    phi: Vec<f64>,
    p: Vec<f64>,
}

struct PhaseStepSystem<'a> {
    mesh: &'a Mesh,
    bases: &'a [CellField],
    psi: Vec<CellField>,
    mobility_scale: Vec<f64>,
    lambda: f64,
    step: f64,
    sym: Arc<Symbolic>,
}

/// Saturations below this are lifted before the first Newton iterate.
const START_FLOOR: f64 = 1e-3;

/// Inverse of a small dense matrix by Gauss-Jordan elimination with partial pivoting.
fn invert_small(a: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if !(a[piv * n + col].abs() > 0.0) {
            return None;
        }
        for j in 0..n {
            a.swap(col * n + j, piv * n + j);
            inv.swap(col * n + j, piv * n + j);
        }
        let d = a[col * n + col];
        for j in 0..n {
            a[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = a[r * n + col];
                if f != 0.0 {
                    for j in 0..n {
                        a[r * n + j] -= f * a[col * n + j];
                        inv[r * n + j] -= f * inv[col * n + j];
                    }
                }
            }
        }
    }
    Some(inv)
}

impl PhaseStepSystem<'_> {
    fn np(&self) -> usize {
        self.bases.len()
    }

    fn start(&self, guess: &[CellField]) -> PhasePoint {
        let n = self.mesh.n_cells();
        let np = self.np();
        let mut s = vec![0.0; n * np];
        for k in 0..n {
            let row: Vec<f64> = guess.iter().map(|g| g[k].max(START_FLOOR)).collect();
            let sum: f64 = row.iter().sum();
            for (i, v) in row.into_iter().enumerate() {
                s[k * np + i] = v / sum;
            }
        }
        PhasePoint { s, phi: vec![0.0; n * np], p: vec![0.0; n] }
    }

    fn mobility(&self, x: &PhasePoint, i: usize) -> Vec<f64> {
        let np = self.np();
        let b = &self.bases[i];
        let c = 0.5 * self.mobility_scale[i];
        self.mesh
            .edges()
            .iter()
            .map(|e| c * (e.weight_k * (x.s[e.k * np + i] + b[e.k]) + e.weight_l * (x.s[e.l * np + i] + b[e.l])))
            .collect()
    }

    /// `1 - s_i` written as the sum of the other saturations of the cell, which
    /// stays positive along the Newton path and agrees with `1 - s_i` when the
    /// constraint holds.
    fn complement(&self, s: &[f64], i: usize) -> f64 {
        s.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum()
    }

    /// Gradient of the capillary energy with respect to the cell's saturations.
    fn capillary_gradient(&self, s: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.lambda == 0.0 {
            return;
        }
        for i in 1..s.len() {
            let g = -self.lambda / self.complement(s, i).sqrt();
            for (j, o) in out.iter_mut().enumerate() {
                if j != i {
                    *o += g;
                }
            }
        }
    }

    /// Per-cell Hessian of energy plus barrier, row-major `np x np`, times `m_K`.
    fn cell_hessian(&self, s: &[f64], mu: f64, m: f64) -> Vec<f64> {
        let np = s.len();
        let mut h = vec![0.0; np * np];
        for j in 0..np {
            h[j * np + j] = m * mu / (s[j] * s[j]);
        }
        if self.lambda > 0.0 {
            for i in 1..np {
                let c = 0.5 * self.lambda * self.complement(s, i).powf(-1.5) * m;
                for j in (0..np).filter(|&j| j != i) {
                    for l in (0..np).filter(|&l| l != i) {
                        h[j * np + l] += c;
                    }
                }
            }
        }
        h
    }

    /// Replace each phase potential by the exact continuity solution, keeping its mean.
    fn project(&self, x: PhasePoint) -> PhasePoint {
        let mesh = self.mesh;
        let n = mesh.n_cells();
        let np = self.np();
        let mut phi = x.phi.clone();
        for i in 0..np {
            let w = self.mobility(&x, i);
            let h: CellField = (0..n).map(|k| self.bases[i][k] - x.s[k * np + i]).collect();
            let old: Vec<f64> = (0..n).map(|k| x.phi[k * np + i]).collect();
            let c = mesh.mass(&old) / mesh.volume();
            match hminus::solve_with_mobility(mesh, &w, &h) {
                Ok(p) => (0..n).for_each(|k| phi[k * np + i] = p[k] + c),
                Err(_) => return x,
            }
        }
        PhasePoint { phi, ..x }
    }

    /// Multiplier with the capillary pressures moved back onto their own phases.
    fn pressure(&self, x: &PhasePoint) -> CellField {
        let np = self.np();
        x.p.iter()
            .enumerate()
            .map(|(k, p)| {
                let cell = &x.s[k * np..(k + 1) * np];
                p - (1..np).map(|i| capillary_pressure(self.lambda, 1.0 - self.complement(cell, i))).sum::<f64>()
            })
            .collect()
    }

    /// Block index and norm scale of residual entry `j`.
    fn locate(&self, j: usize) -> (usize, f64) {
        let np = self.np();
        let len = self.mesh.n_cells() * np;
        if j < len {
            (j / np, 1.0)
        } else if j < 2 * len {
            ((j - len) / np, self.step)
        } else {
            (j - 2 * len, 1.0)
        }
    }
}

impl BarrierSystem for PhaseStepSystem<'_> {
    type State = PhasePoint;

    /// `[r_s; r_phi / step; r_p]`, each block interleaved by cell.
    fn residual(&self, x: &PhasePoint, mu: f64) -> Vec<f64> {
        let mesh = self.mesh;
        let n = mesh.n_cells();
        let np = self.np();
        let s = self.step;
        let m = mesh.measures();
        let len = n * np;
        let mut f = vec![0.0; 2 * len + n];
        let mut cap = vec![0.0; np];
        for k in 0..n {
            let cell = &x.s[k * np..(k + 1) * np];
            self.capillary_gradient(cell, &mut cap);
            for i in 0..np {
                let j = k * np + i;
                f[j] = m[k] * (-x.phi[j] / s + self.psi[i][k] + cap[i] - mu / cell[i] + x.p[k]);
                f[len + j] = m[k] * (self.bases[i][k] - cell[i]);
            }
            f[2 * len + k] = m[k] * (cell.iter().sum::<f64>() - 1.0);
        }
        for i in 0..np {
            let w = self.mobility(x, i);
            let c = self.mobility_scale[i];
            for (e, w) in mesh.edges().iter().zip(&w) {
                let (jk, jl) = (e.k * np + i, e.l * np + i);
                let g = (x.phi[jl] - x.phi[jk]) / e.dist;
                let flux = w * g * e.measure;
                f[len + jk] += flux;
                f[len + jl] -= flux;
                let q = c * g * g * e.diamond() / (4.0 * s);
                f[jk] -= e.weight_k * q;
                f[jl] -= e.weight_l * q;
            }
        }
        for v in &mut f[len..2 * len] {
            *v /= s;
        }
        f
    }

    fn norm(&self, f: &[f64]) -> f64 {
        let m = self.mesh.measures();
        f.iter().enumerate().fold(0.0_f64, |acc, (j, v)| {
            let (k, scale) = self.locate(j);
            acc.max((v * scale / m[k]).abs())
        })
    }

    fn merit(&self, f: &[f64]) -> f64 {
        let m = self.mesh.measures();
        f.iter()
            .enumerate()
            .map(|(j, v)| {
                let (k, scale) = self.locate(j);
                (v * scale).powi(2) / m[k]
            })
            .sum()
    }

    fn direction(&mut self, x: &PhasePoint, mu: f64, f: &[f64]) -> Result<PhasePoint, SolverError> {
        let mesh = self.mesh;
        let n = mesh.n_cells();
        let np = self.np();
        let len = n * np;
        let s = self.step;
        let m = mesh.measures();
        // Per cell: H^-1, u = H^-1 1 and 1^T H^-1 1.
        let mut hinv = Vec::with_capacity(n);
        for k in 0..n {
            let mut h = self.cell_hessian(&x.s[k * np..(k + 1) * np], mu, m[k]);
            let inv = invert_small(&mut h, np).ok_or(SolverError::Positivity { barrier: mu })?;
            let u: Vec<f64> = (0..np).map(|a| (0..np).map(|c| inv[a * np + c]).sum()).collect();
            let w: f64 = u.iter().sum();
            hinv.push((inv, u, w));
        }
        // Rows of B = d^2/ds dphi, diagonal entry first; columns index phi.
        let mut b: Vec<Vec<(usize, f64)>> = (0..len).map(|j| vec![(j, -m[j / np] / s)]).collect();
        let mut schur = SymMatrix::zeros(Arc::clone(&self.sym));
        for i in 0..np {
            let w = self.mobility(x, i);
            let c = self.mobility_scale[i];
            for (e, w) in mesh.edges().iter().zip(&w) {
                let (jk, jl) = (e.k * np + i, e.l * np + i);
                let g = (x.phi[jl] - x.phi[jk]) / e.dist;
                let a = c * g * e.measure / (2.0 * s);
                b[jk][0].1 += e.weight_k * a;
                b[jk].push((jl, -e.weight_k * a));
                b[jl][0].1 -= e.weight_l * a;
                b[jl].push((jk, e.weight_l * a));
                let t = w * e.transmissibility() / s;
                schur.add(jk, jk, t);
                schur.add(jl, jl, t);
                schur.add(jk, jl, -t);
            }
        }
        // B^T P B with P = H^-1 - u u^T / w, which projects out the multiplier.
        for k in 0..n {
            let (inv, u, w) = &hinv[k];
            for a in 0..np {
                let ja = k * np + a;
                for c in a..np {
                    let jc = k * np + c;
                    let pac = inv[a * np + c] - u[a] * u[c] / w;
                    for (t, &(r, br)) in b[ja].iter().enumerate() {
                        let from = if a == c { t } else { 0 };
                        for &(q, bq) in &b[jc][from..] {
                            let v = pac * br * bq;
                            if r == q && a != c {
                                schur.add(r, r, 2.0 * v);
                            } else {
                                schur.add(r, q, v);
                            }
                        }
                    }
                }
            }
        }
        // The potentials share one null direction (a common constant); fix phase 0 at cell 0.
        let pin = schur.get(0, 0).max(f64::MIN_POSITIVE);
        schur.pin(0, pin);
        let (fs, rest) = f.split_at(len);
        let (fphi, fp) = rest.split_at(len);
        // Solve H y + m 1 q = r, m 1^T y = c per cell.
        let eliminate = |r: &[f64], c: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let mut y = vec![0.0; len];
            let mut q = vec![0.0; n];
            for k in 0..n {
                let (inv, u, w) = &hinv[k];
                let rk = &r[k * np..(k + 1) * np];
                let ur: f64 = u.iter().zip(rk).map(|(a, b)| a * b).sum();
                q[k] = (ur - c[k] / m[k]) / (m[k] * w);
                for a in 0..np {
                    let hr: f64 = (0..np).map(|c| inv[a * np + c] * rk[c]).sum();
                    y[k * np + a] = hr - m[k] * q[k] * u[a];
                }
            }
            (y, q)
        };
        let (y, _) = eliminate(fs, fp);
        let mut rhs = fphi.to_vec();
        for (j, row) in b.iter().enumerate() {
            for &(r, br) in row {
                rhs[r] -= br * y[j];
            }
        }
        rhs[0] = 0.0;
        let factor = schur.factor()?;
        factor.check_positive()?;
        let mut dphi = factor.solve(&rhs);
        let ax = schur.mul_vec(&dphi);
        let corr: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        for (v, dv) in dphi.iter_mut().zip(factor.solve(&corr)) {
            *v += dv;
        }
        let r: Vec<f64> = (0..len).map(|j| -fs[j] - b[j].iter().map(|&(q, bq)| bq * dphi[q]).sum::<f64>()).collect();
        let c: Vec<f64> = fp.iter().map(|v| -v).collect();
        let (ds, dp) = eliminate(&r, &c);
        Ok(PhasePoint { s: ds, phi: dphi, p: dp })
    }

    /// Decreasing saturations follow a harmonic path, so every step length keeps them positive.
    fn max_step(&self, _x: &PhasePoint, _dx: &PhasePoint, _fraction: f64) -> f64 {
        1.0
    }

    /// Linear in `phi`, `p` and growing saturations; `s / (1 - t ds / s)` for shrinking ones,
    /// which is the Newton update of `1/s` and matches the barrier's `mu / s` exactly.
    fn advance(&self, x: &PhasePoint, dx: &PhasePoint, t: f64, mu: f64) -> PhasePoint {
        let step = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| a + t * b).collect();
        let s = x.s.iter().zip(&dx.s).map(|(&v, &dv)| if dv < 0.0 { v / (1.0 - t * dv / v) } else { v + t * dv }).collect();
        let next = PhasePoint { s, phi: step(&x.phi, &dx.phi), p: step(&x.p, &dx.p) };
        let projected = self.project(next.clone());
        if self.merit(&self.residual(&projected, mu)) <= self.merit(&self.residual(&next, mu)) {
            projected
        } else {
            next
        }
    }
}
