//! Interior-point Newton solver for linearized JKO steps.
//!
//! A step minimizes `(1/s) A((rho + base)/2; base - rho) + G(rho)` over
//! nonnegative densities. Writing the action as a supremum over potentials
//! turns the step into the saddle problem
//!
//! ```text
//! min_rho max_phi (1/s) [<base - rho, phi> - 1/2 <L((rho + base)/2), |grad phi|^2>]
//!                 + G(rho) - mu sum_K m_K log rho_K
//! ```
//!
//! whose stationarity system is solved by Newton's method along a decreasing
//! log-barrier sequence `mu`. Each Newton step eliminates the diagonal density
//! block and factors the positive definite Schur complement in the potential.

use std::sync::Arc;

use thiserror::Error;

use crate::energies::Energy;
use crate::hminus::{self, PotentialError};
use crate::linalg::{BandLu, LinalgError, SymMatrix, Symbolic};
use crate::mesh::{CellField, Mesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid step problem: {0}")]
    InvalidProblem(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("Newton did not converge: residual {residual:e} after {iterations} iterations at barrier {barrier:e}")]
    NoConvergence { residual: f64, iterations: usize, barrier: f64 },
    #[error("positivity lost at barrier {barrier:e}")]
    Positivity { barrier: f64 },
    #[error("linear solve failed: {0}")]
    Linear(#[from] LinalgError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

/// Barrier and Newton parameters. `barrier_init`, `barrier_final` and
/// `newton_tol` are relative to the mean density `mass / volume`.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub barrier_init: f64,
    pub barrier_shrink: f64,
    pub barrier_final: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub fraction_to_boundary: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            barrier_init: 1e-1,
            barrier_shrink: 1e-1,
            barrier_final: 1e-11,
            newton_tol: 1e-10,
            max_newton: 200,
            fraction_to_boundary: 0.95,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: &str| Err(SolverError::InvalidConfig(msg.to_string()));
        if !(self.barrier_init > 0.0 && self.barrier_final > 0.0 && self.newton_tol > 0.0) {
            return bad("barrier_init, barrier_final and newton_tol must be positive");
        }
        if !(self.barrier_shrink > 0.0 && self.barrier_shrink < 1.0) {
            return bad("barrier_shrink must lie in (0, 1)");
        }
        if !(self.fraction_to_boundary > 0.0 && self.fraction_to_boundary < 1.0) {
            return bad("fraction_to_boundary must lie in (0, 1)");
        }
        if self.max_newton == 0 {
            return bad("max_newton must be positive");
        }
        Ok(())
    }
}

/// One linearized JKO step: base measure, step scale `s` and objective `G`.
#[derive(Clone, Copy, Debug)]
pub struct StepProblem<'a> {
    pub mesh: &'a Mesh,
    pub base: &'a CellField,
    pub step: f64,
    pub objective: &'a Energy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepSolution {
    pub rho: CellField,
    /// Potential of the step's action, `base - rho + div(L((rho + base)/2) grad phi) = 0`.
    pub phi: CellField,
    pub iterations: usize,
    pub residual: f64,
    /// Barrier parameter of the final Newton stage.
    pub barrier: f64,
}

/// Optional starting point; correctness does not depend on it.
#[derive(Clone, Copy, Debug, Default)]
pub struct Guess<'a> {
    pub rho: Option<&'a CellField>,
    pub phi: Option<&'a CellField>,
}

/// Residual max-norms of the step optimality system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResidual {
    pub continuity: f64,
    pub stationarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.continuity.max(self.stationarity)
    }
}

/// Optimality residual of `(rho, phi)` at barrier `mu`, recomputed from the mesh
/// operators:
///
/// - continuity: `base - rho + div(L((rho + base)/2) grad phi)`;
/// - stationarity: `-phi/s - L^*|grad phi|^2 / (4s) + G'(rho) - mu/rho`.
pub fn kkt_residual(problem: &StepProblem<'_>, rho: &CellField, phi: &CellField, mu: f64) -> KktResidual {
    let mesh = problem.mesh;
    let s = problem.step;
    let avg: CellField = rho.iter().zip(problem.base.iter()).map(|(r, b)| 0.5 * (r + b)).collect();
    let w = mesh.reconstruct(&avg);
    let g = mesh.gradient(phi);
    let flux: crate::mesh::FluxField = w.iter().zip(g.iter()).map(|(w, g)| w * g).collect();
    let div = mesh.divergence(&flux);
    let continuity = problem.base.iter().zip(rho.iter()).zip(div.iter()).map(|((b, r), d)| b - r + d);
    let g2: crate::mesh::EdgeField = g.iter().map(|v| v * v).collect();
    let lstar = mesh.reconstruct_adjoint(&g2);
    let grad = problem.objective.gradient(rho);
    let stationarity = (0..mesh.n_cells()).map(|k| -phi[k] / s - lstar[k] / (4.0 * s) + grad[k] - mu / rho[k]);
    KktResidual {
        continuity: continuity.fold(0.0_f64, |m, v| m.max(v.abs())),
        stationarity: stationarity.fold(0.0_f64, |m, v| m.max(v.abs())),
    }
}

/// Step objective `(1/s) A((rho + base)/2; base - rho) + G(rho)`.
pub fn objective(problem: &StepProblem<'_>, rho: &CellField) -> Result<f64, SolverError> {
    let avg: CellField = rho.iter().zip(problem.base.iter()).map(|(r, b)| 0.5 * (r + b)).collect();
    let h: CellField = problem.base.iter().zip(rho.iter()).map(|(b, r)| b - r).collect();
    let a = if h.iter().all(|&v| v == 0.0) { 0.0 } else { hminus::action(problem.mesh, &avg, &h)? };
    Ok(a / problem.step + problem.objective.evaluate(problem.mesh, rho))
}

/// Solve one convex step by the interior-point method.
pub fn solve_step(problem: &StepProblem<'_>, config: &SolverConfig, guess: Guess<'_>) -> Result<StepSolution, SolverError> {
    config.validate()?;
    let mesh = problem.mesh;
    let n = mesh.n_cells();
    if problem.base.len() != n || problem.objective.potential.len() != n {
        return Err(SolverError::InvalidProblem("field sizes do not match the mesh".into()));
    }
    if !(problem.step > 0.0 && problem.step.is_finite()) {
        return Err(SolverError::InvalidProblem(format!("step scale {} must be positive", problem.step)));
    }
    if problem.base.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(SolverError::InvalidProblem("base density must be finite and nonnegative".into()));
    }
    let mass = mesh.mass(problem.base);
    if !(mass > 0.0) {
        return Err(SolverError::InvalidProblem("base density has no mass".into()));
    }
    let scale = mass / mesh.volume();
    let rho0 = interior_start(mesh, guess.rho.unwrap_or(problem.base), mass, scale);
    let phi0 = match guess.phi {
        Some(p) if p.len() == n => p.0.clone(),
        _ => vec![0.0; n],
    };
    let mut system = StepSystem { problem, sym: mesh.symbolic(2, 1) };
    let start = system.project(Point { rho: rho0, phi: phi0 });
    let (x, stats) = interior_point(&mut system, start, config, scale)?;
    Ok(StepSolution {
        rho: CellField(x.rho),
        phi: CellField(x.phi),
        iterations: stats.iterations,
        residual: stats.residual,
        barrier: stats.barrier,
    })
}

/// Floor a density at `1e-10 * scale` and rescale it to `mass`.
pub(crate) fn interior_start(mesh: &Mesh, rho: &[f64], mass: f64, scale: f64) -> Vec<f64> {
    let floor = 1e-10 * scale;
    let mut r: Vec<f64> = rho.iter().map(|&v| if v.is_finite() { v.max(floor) } else { floor }).collect();
    let c = mass / mesh.mass(&r);
    r.iter_mut().for_each(|v| *v *= c);
    r
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct NewtonStats {
    pub iterations: usize,
    pub residual: f64,
    pub barrier: f64,
}

/// A barrier-parametrized nonlinear system solved by damped Newton.
pub(crate) trait BarrierSystem {
    type State: Clone;
    /// Newton residual `F(x; mu)`; the direction solves `J dx = -F`.
    fn residual(&self, x: &Self::State, mu: f64) -> Vec<f64>;
    /// Max-norm of the residual, scaled to per-volume units.
    fn norm(&self, f: &[f64]) -> f64;
    /// Smooth merit function whose descent direction is the Newton step.
    fn merit(&self, f: &[f64]) -> f64;
    fn direction(&mut self, x: &Self::State, mu: f64, f: &[f64]) -> Result<Self::State, SolverError>;
    /// Largest step in `(0, 1]` satisfying the fraction-to-boundary rule.
    fn max_step(&self, x: &Self::State, dx: &Self::State, fraction: f64) -> f64;
    fn advance(&self, x: &Self::State, dx: &Self::State, t: f64, mu: f64) -> Self::State;
}

pub(crate) fn interior_point<S: BarrierSystem>(
    system: &mut S,
    start: S::State,
    config: &SolverConfig,
    scale: f64,
) -> Result<(S::State, NewtonStats), SolverError> {
    let final_tol = config.newton_tol * scale;
    let mut mu = config.barrier_init * scale;
    let mut x = start;
    let mut total = 0;
    loop {
        let last = mu < config.barrier_final * scale;
        let tol = if last { final_tol } else { final_tol.max(mu) };
        let mut f = system.residual(&x, mu);
        let mut iters = 0;
        loop {
            let norm = system.norm(&f);
            if !norm.is_finite() {
                return Err(SolverError::NoConvergence { residual: norm, iterations: total, barrier: mu });
            }
            if norm <= tol {
                break;
            }
            if iters >= config.max_newton {
                return Err(SolverError::NoConvergence { residual: norm, iterations: total, barrier: mu });
            }
            let dx = system.direction(&x, mu, &f)?;
            let t_max = system.max_step(&x, &dx, config.fraction_to_boundary);
            if !(t_max > 1e-14) {
                return Err(SolverError::Positivity { barrier: mu });
            }
            let m0 = system.merit(&f);
            let mut t = t_max;
            let (x_new, f_new) = loop {
                let xt = system.advance(&x, &dx, t, mu);
                let ft = system.residual(&xt, mu);
                let mt = system.merit(&ft);
                if (mt.is_finite() && mt <= (1.0 - 1e-4 * t) * m0) || t < 1e-8 {
                    break (xt, ft);
                }
                t *= 0.5;
            };
            x = x_new;
            f = f_new;
            iters += 1;
            total += 1;
        }
        if last {
            let residual = system.norm(&f);
            return Ok((x, NewtonStats { iterations: total, residual, barrier: mu }));
        }
        mu *= config.barrier_shrink;
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Point {
    pub rho: Vec<f64>,
    pub phi: Vec<f64>,
}

struct StepSystem<'p, 'a> {
    problem: &'p StepProblem<'a>,
    sym: Arc<Symbolic>,
}

impl StepSystem<'_, '_> {
    /// Replace `phi` by the exact solution of the continuity equation for the
    /// current `rho`, keeping its mean. Where the density is nearly zero the
    /// potential is weakly determined and the linearized update alone is poor.
    fn project(&self, x: Point) -> Point {
        let mesh = self.problem.mesh;
        let (w, _) = self.edge_terms(&x);
        let h: CellField = self.problem.base.iter().zip(&x.rho).map(|(b, r)| b - r).collect();
        match hminus::solve_with_mobility(mesh, &w, &h) {
            Ok(phi0) => {
                let c = mesh.mass(&x.phi) / mesh.volume();
                Point { phi: phi0.iter().map(|p| p + c).collect(), rho: x.rho }
            }
            Err(_) => x,
        }
    }

    fn edge_terms(&self, x: &Point) -> (Vec<f64>, Vec<f64>) {
        let base = self.problem.base;
        let mesh = self.problem.mesh;
        mesh.edges()
            .iter()
            .map(|e| {
                let w = 0.5 * (e.weight_k * (x.rho[e.k] + base[e.k]) + e.weight_l * (x.rho[e.l] + base[e.l]));
                (w, (x.phi[e.l] - x.phi[e.k]) / e.dist)
            })
            .unzip()
    }
}

impl BarrierSystem for StepSystem<'_, '_> {
    type State = Point;

    /// `[r_rho; r_phi / s]` with `r_phi = m (base - rho) + sum W (phi_L - phi_K) m/d`.
    fn residual(&self, x: &Point, mu: f64) -> Vec<f64> {
        let p = self.problem;
        let mesh = p.mesh;
        let n = mesh.n_cells();
        let s = p.step;
        let m = mesh.measures();
        let mut f = vec![0.0; 2 * n];
        for k in 0..n {
            let g = p.objective.integrand.first(x.rho[k]) + p.objective.potential[k];
            f[k] = m[k] * (-x.phi[k] / s + g - mu / x.rho[k]);
            f[n + k] = m[k] * (p.base[k] - x.rho[k]);
        }
        let (w, grad) = self.edge_terms(x);
        for ((e, w), g) in mesh.edges().iter().zip(&w).zip(&grad) {
            let flux = w * g * e.measure;
            f[n + e.k] += flux;
            f[n + e.l] -= flux;
            let q = g * g * e.diamond() / (4.0 * s);
            f[e.k] -= e.weight_k * q;
            f[e.l] -= e.weight_l * q;
        }
        for v in &mut f[n..] {
            *v /= s;
        }
        f
    }

    fn norm(&self, f: &[f64]) -> f64 {
        let m = self.problem.mesh.measures();
        let n = m.len();
        let s = self.problem.step;
        (0..n).fold(0.0_f64, |acc, k| acc.max((f[k] / m[k]).abs()).max((f[n + k] * s / m[k]).abs()))
    }

    fn merit(&self, f: &[f64]) -> f64 {
        let m = self.problem.mesh.measures();
        let n = m.len();
        let s = self.problem.step;
        (0..n).map(|k| (f[k] * f[k] + (f[n + k] * s).powi(2)) / m[k]).sum()
    }

    fn direction(&mut self, x: &Point, mu: f64, f: &[f64]) -> Result<Point, SolverError> {
        let p = self.problem;
        let mesh = p.mesh;
        let n = mesh.n_cells();
        let s = p.step;
        let m = mesh.measures();
        let d: Vec<f64> = (0..n).map(|k| m[k] * (p.objective.integrand.second(x.rho[k]) + mu / (x.rho[k] * x.rho[k]))).collect();
        // Rows of the mixed block C = d^2/drho dphi, diagonal entry first.
        let mut c: Vec<Vec<(usize, f64)>> = (0..n).map(|k| vec![(k, -m[k] / s)]).collect();
        let mut schur = SymMatrix::zeros(Arc::clone(&self.sym));
        let (w, grad) = self.edge_terms(x);
        for ((e, w), g) in mesh.edges().iter().zip(&w).zip(&grad) {
            let a = g * e.measure / (2.0 * s);
            c[e.k][0].1 += e.weight_k * a;
            c[e.k].push((e.l, -e.weight_k * a));
            c[e.l][0].1 -= e.weight_l * a;
            c[e.l].push((e.k, e.weight_l * a));
            let t = w * e.transmissibility() / s;
            schur.add(e.k, e.k, t);
            schur.add(e.l, e.l, t);
            schur.add(e.k, e.l, -t);
        }
        for (k, row) in c.iter().enumerate() {
            for (a, &(i, ci)) in row.iter().enumerate() {
                schur.add(i, i, ci * ci / d[k]);
                for &(j, cj) in &row[a + 1..] {
                    schur.add(i, j, ci * cj / d[k]);
                }
            }
        }
        // rhs = F_phi - C^T D^{-1} F_rho
        let mut rhs = f[n..].to_vec();
        for (k, row) in c.iter().enumerate() {
            let y = f[k] / d[k];
            for &(i, ci) in row {
                rhs[i] -= ci * y;
            }
        }
        let factor = schur.factor()?;
        factor.check_positive()?;
        let mut dphi = factor.solve(&rhs);
        let ax = schur.mul_vec(&dphi);
        let corr: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        for (v, dv) in dphi.iter_mut().zip(factor.solve(&corr)) {
            *v += dv;
        }
        let drho = (0..n)
            .map(|k| {
                let cphi: f64 = c[k].iter().map(|&(j, cj)| cj * dphi[j]).sum();
                -(f[k] + cphi) / d[k]
            })
            .collect();
        Ok(Point { rho: drho, phi: dphi })
    }

    fn max_step(&self, x: &Point, dx: &Point, fraction: f64) -> f64 {
        max_positive_step(&x.rho, &dx.rho, fraction)
    }

    fn advance(&self, x: &Point, dx: &Point, t: f64, mu: f64) -> Point {
        let next = Point {
            rho: x.rho.iter().zip(&dx.rho).map(|(a, b)| a + t * b).collect(),
            phi: x.phi.iter().zip(&dx.phi).map(|(a, b)| a + t * b).collect(),
        };
        let projected = self.project(next.clone());
        if self.merit(&self.residual(&projected, mu)) <= self.merit(&self.residual(&next, mu)) {
            projected
        } else {
            next
        }
    }
}

pub(crate) fn max_positive_step(x: &[f64], dx: &[f64], fraction: f64) -> f64 {
    x.iter().zip(dx).fold(1.0_f64, |t, (&v, &dv)| if dv < 0.0 { t.min(fraction * v / -dv) } else { t })
}

/// Solution of the naive BDF2 step: the density and both dual potentials.
#[derive(Clone, Debug, PartialEq)]
pub struct Bdf2Solution {
    pub rho: CellField,
    pub phi_prev: CellField,
    pub phi_prevprev: CellField,
    pub iterations: usize,
    pub residual: f64,
}

/// Stationary point of
/// `c1 A((rho + prev)/2; prev - rho) - c2 A((rho + prevprev)/2; prevprev - rho) + E(rho)`
/// with `c1 = alpha / ((1 - beta) tau)`, `c2 = beta / ((1 - beta) tau)`.
///
/// The objective is not convex and may be unbounded below, so failure is an
/// expected outcome and is reported, not retried.
pub fn solve_bdf2_naive(
    mesh: &Mesh,
    prev: &CellField,
    prevprev: &CellField,
    tau: f64,
    alpha: f64,
    energy: &Energy,
    config: &SolverConfig,
) -> Result<Bdf2Solution, SolverError> {
    config.validate()?;
    let n = mesh.n_cells();
    if prev.len() != n || prevprev.len() != n || energy.potential.len() != n {
        return Err(SolverError::InvalidProblem("field sizes do not match the mesh".into()));
    }
    let beta = alpha - 1.0;
    if !(alpha > 1.0 && beta < 1.0 && tau > 0.0) {
        return Err(SolverError::InvalidProblem(format!("need tau > 0 and alpha in (1, 2), got tau={tau}, alpha={alpha}")));
    }
    let mass = mesh.mass(prev);
    if !(mass > 0.0) {
        return Err(SolverError::InvalidProblem("previous density has no mass".into()));
    }
    let scale = mass / mesh.volume();
    let band = mesh.edges().iter().map(|e| e.l - e.k).max().unwrap_or(0);
    let mut system = Bdf2System {
        mesh,
        prev,
        prevprev,
        c1: alpha / ((1.0 - beta) * tau),
        c2: beta / ((1.0 - beta) * tau),
        energy,
        band: 3 * band + 2,
    };
    let start = Bdf2Point { rho: interior_start(mesh, prev, mass, scale), phi1: vec![0.0; n], phi2: vec![0.0; n] };
    let (x, stats) = interior_point(&mut system, start, config, scale)?;
    Ok(Bdf2Solution {
        rho: CellField(x.rho),
        phi_prev: CellField(x.phi1),
        phi_prevprev: CellField(x.phi2),
        iterations: stats.iterations,
        residual: stats.residual,
    })
}

#[derive(Clone, Debug)]
struct Bdf2Point {
    rho: Vec<f64>,
    phi1: Vec<f64>,
    phi2: Vec<f64>,
}

struct Bdf2System<'a> {
    mesh: &'a Mesh,
    prev: &'a CellField,
    prevprev: &'a CellField,
    c1: f64,
    c2: f64,
    energy: &'a Energy,
    band: usize,
}

impl Bdf2System<'_> {
    fn mobility(&self, rho: &[f64], base: &[f64]) -> Vec<f64> {
        self.mesh
            .edges()
            .iter()
            .map(|e| 0.5 * (e.weight_k * (rho[e.k] + base[e.k]) + e.weight_l * (rho[e.l] + base[e.l])))
            .collect()
    }
}

impl BarrierSystem for Bdf2System<'_> {
    type State = Bdf2Point;

    /// Interleaved `[r_rho, c1 r_1, -c2 r_2]` per cell.
    fn residual(&self, x: &Bdf2Point, mu: f64) -> Vec<f64> {
        let mesh = self.mesh;
        let n = mesh.n_cells();
        let m = mesh.measures();
        let (c1, c2) = (self.c1, self.c2);
        let mut f = vec![0.0; 3 * n];
        for k in 0..n {
            let g = self.energy.integrand.first(x.rho[k]) + self.energy.potential[k];
            f[3 * k] = m[k] * (-c1 * x.phi1[k] + c2 * x.phi2[k] + g - mu / x.rho[k]);
            f[3 * k + 1] = c1 * m[k] * (self.prev[k] - x.rho[k]);
            f[3 * k + 2] = -c2 * m[k] * (self.prevprev[k] - x.rho[k]);
        }
        let w1 = self.mobility(&x.rho, self.prev);
        let w2 = self.mobility(&x.rho, self.prevprev);
        for (s, e) in mesh.edges().iter().enumerate() {
            let g1 = (x.phi1[e.l] - x.phi1[e.k]) / e.dist;
            let g2 = (x.phi2[e.l] - x.phi2[e.k]) / e.dist;
            let f1 = c1 * w1[s] * g1 * e.measure;
            let f2 = -c2 * w2[s] * g2 * e.measure;
            f[3 * e.k + 1] += f1;
            f[3 * e.l + 1] -= f1;
            f[3 * e.k + 2] += f2;
            f[3 * e.l + 2] -= f2;
            let q = (c1 * g1 * g1 - c2 * g2 * g2) * e.diamond() / 4.0;
            f[3 * e.k] -= e.weight_k * q;
            f[3 * e.l] -= e.weight_l * q;
        }
        f
    }

    fn norm(&self, f: &[f64]) -> f64 {
        let m = self.mesh.measures();
        (0..m.len()).fold(0.0_f64, |acc, k| {
            acc.max((f[3 * k] / m[k]).abs())
                .max((f[3 * k + 1] / (self.c1 * m[k])).abs())
                .max((f[3 * k + 2] / (self.c2 * m[k])).abs())
        })
    }

    fn merit(&self, f: &[f64]) -> f64 {
        let m = self.mesh.measures();
        (0..m.len())
            .map(|k| (f[3 * k].powi(2) + (f[3 * k + 1] / self.c1).powi(2) + (f[3 * k + 2] / self.c2).powi(2)) / m[k])
            .sum()
    }

    fn direction(&mut self, x: &Bdf2Point, mu: f64, f: &[f64]) -> Result<Bdf2Point, SolverError> {
        let mesh = self.mesh;
        let n = mesh.n_cells();
        let m = mesh.measures();
        let (c1, c2) = (self.c1, self.c2);
        let mut a = BandLu::zeros(3 * n, self.band, self.band);
        let sym = |a: &mut BandLu, i: usize, j: usize, v: f64| {
            a.add(i, j, v);
            if i != j {
                a.add(j, i, v);
            }
        };
        for k in 0..n {
            let r = x.rho[k];
            sym(&mut a, 3 * k, 3 * k, m[k] * (self.energy.integrand.second(r) + mu / (r * r)));
            sym(&mut a, 3 * k, 3 * k + 1, -c1 * m[k]);
            sym(&mut a, 3 * k, 3 * k + 2, c2 * m[k]);
        }
        let w1 = self.mobility(&x.rho, self.prev);
        let w2 = self.mobility(&x.rho, self.prevprev);
        for (s, e) in mesh.edges().iter().enumerate() {
            let (rk, rl) = (3 * e.k, 3 * e.l);
            for (comp, c, w, phi) in [(1, c1, w1[s], &x.phi1), (2, -c2, w2[s], &x.phi2)] {
                let g = (phi[e.l] - phi[e.k]) / e.dist;
                let t = c * w * e.transmissibility();
                let (pk, pl) = (rk + comp, rl + comp);
                sym(&mut a, pk, pk, -t);
                sym(&mut a, pl, pl, -t);
                sym(&mut a, pk, pl, t);
                let h = c * g * e.measure / 2.0;
                sym(&mut a, rk, pk, e.weight_k * h);
                sym(&mut a, rk, pl, -e.weight_k * h);
                sym(&mut a, rl, pk, e.weight_l * h);
                sym(&mut a, rl, pl, -e.weight_l * h);
            }
        }
        // The potentials share one null direction; fix phi_prevprev at cell 0.
        let pin = c2 * mesh.edges().first().map(|e| e.transmissibility()).unwrap_or(1.0);
        a.set_identity_row(2, pin);
        let mut rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        rhs[2] = 0.0;
        a.factor().map_err(SolverError::Linear)?;
        let dx = a.solve(&rhs);
        let mut out = Bdf2Point { rho: vec![0.0; n], phi1: vec![0.0; n], phi2: vec![0.0; n] };
        for k in 0..n {
            out.rho[k] = dx[3 * k];
            out.phi1[k] = dx[3 * k + 1];
            out.phi2[k] = dx[3 * k + 2];
        }
        Ok(out)
    }

    fn max_step(&self, x: &Bdf2Point, dx: &Bdf2Point, fraction: f64) -> f64 {
        max_positive_step(&x.rho, &dx.rho, fraction)
    }

    fn advance(&self, x: &Bdf2Point, dx: &Bdf2Point, t: f64, _mu: f64) -> Bdf2Point {
        let step = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| a + t * b).collect();
        Bdf2Point { rho: step(&x.rho, &dx.rho), phi1: step(&x.phi1, &dx.phi1), phi2: step(&x.phi2, &dx.phi2) }
    }
}

/// Convenience wrapper used by tests and the harness: the mean-zero potential
/// of a step solution recomputed from scratch.
pub fn step_potential(problem: &StepProblem<'_>, rho: &CellField) -> Result<CellField, SolverError> {
    let avg: CellField = rho.iter().zip(problem.base.iter()).map(|(r, b)| 0.5 * (r + b)).collect();
    let h: CellField = problem.base.iter().zip(rho.iter()).map(|(b, r)| b - r).collect();
    Ok(hminus::solve_potential(problem.mesh, &avg, &h)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn fp(mesh: &Mesh, v: impl Fn([f64; 2]) -> f64) -> Energy {
        Energy::fokker_planck(mesh, v).unwrap()
    }

    #[test]
    fn zero_linear_objective_keeps_base() {
        let mesh = Mesh::interval(12, 0.0, 1.0).unwrap();
        let base = mesh.sample(|x| 1.0 + 0.5 * (6.0 * x[0]).sin());
        let g = Energy::linear(&CellField::zeros(12));
        let p = StepProblem { mesh: &mesh, base: &base, step: 4.0 / 3.0, objective: &g };
        let sol = solve_step(&p, &SolverConfig::default(), Guess::default()).unwrap();
        for (a, b) in sol.rho.iter().zip(base.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(sol.phi.max_abs() < 1e-8);
    }

    #[test]
    fn uniform_state_is_fixed_for_entropy() {
        let mesh = Mesh::cartesian(5, 4, (0.0, 1.0), (0.0, 1.0)).unwrap();
        let base = CellField::constant(20, 2.0);
        let e = fp(&mesh, |_| 0.0);
        let p = StepProblem { mesh: &mesh, base: &base, step: 0.01, objective: &e };
        let sol = solve_step(&p, &SolverConfig::default(), Guess::default()).unwrap();
        assert!(sol.rho.iter().all(|r| (r - 2.0).abs() < 1e-8));
    }

    #[test]
    fn step_satisfies_kkt_and_conserves_mass() {
        let mesh = Mesh::interval(40, 0.0, 1.0).unwrap();
        let base = mesh.sample(|x| (-50.0 * (x[0] - 0.5).powi(2)).exp());
        let e = fp(&mesh, |x| -x[0]);
        let p = StepProblem { mesh: &mesh, base: &base, step: 0.01, objective: &e };
        let cfg = SolverConfig::default();
        let sol = solve_step(&p, &cfg, Guess::default()).unwrap();
        let mass = mesh.mass(&base);
        assert!((mesh.mass(&sol.rho) - mass).abs() <= 1e-9 * mass);
        let scale = mass / mesh.volume();
        let r = kkt_residual(&p, &sol.rho, &sol.phi, sol.barrier);
        assert!(r.max() <= 2.0 * cfg.newton_tol * scale, "{r:?}");
        assert!(sol.barrier <= cfg.barrier_final * scale);
        // The step potential coincides with the mean-zero one up to a constant.
        let phi0 = step_potential(&p, &sol.rho).unwrap();
        let shift = sol.phi[0] - phi0[0];
        for (a, b) in sol.phi.iter().zip(phi0.iter()) {
            assert!((a - b - shift).abs() < 1e-7);
        }
        // Minimizer dominance against the base.
        let j = objective(&p, &sol.rho).unwrap();
        assert!(j <= objective(&p, &base).unwrap() + 1e-9);
    }

    #[test]
    fn empty_cells_in_base_are_handled() {
        let mesh = Mesh::interval(30, 0.0, 1.0).unwrap();
        let base = mesh.sample(|x| if x[0] <= 0.3 { 1.0 } else { 0.0 });
        let e = Energy::porous_medium(&mesh, 2.0, |x| -x[0]).unwrap();
        let p = StepProblem { mesh: &mesh, base: &base, step: 0.002, objective: &e };
        let sol = solve_step(&p, &SolverConfig::default(), Guess::default()).unwrap();
        assert!(sol.rho.iter().all(|&r| r > 0.0));
        assert!((mesh.mass(&sol.rho) - 0.3).abs() < 1e-10);
    }

    #[test]
    fn warm_start_does_not_change_answer() {
        let mesh = Mesh::interval(20, 0.0, 1.0).unwrap();
        let base = mesh.sample(|x| 1.0 + x[0]);
        let e = fp(&mesh, |_| 0.0);
        let p = StepProblem { mesh: &mesh, base: &base, step: 0.05, objective: &e };
        let cfg = SolverConfig::default();
        let cold = solve_step(&p, &cfg, Guess::default()).unwrap();
        let guess = CellField::constant(20, 1.5);
        let warm = solve_step(&p, &cfg, Guess { rho: Some(&guess), phi: None }).unwrap();
        for (a, b) in cold.rho.iter().zip(warm.rho.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let mesh = Mesh::interval(3, 0.0, 1.0).unwrap();
        let e = fp(&mesh, |_| 0.0);
        let zero = CellField::zeros(3);
        let p = StepProblem { mesh: &mesh, base: &zero, step: 0.1, objective: &e };
        assert!(matches!(solve_step(&p, &SolverConfig::default(), Guess::default()), Err(SolverError::InvalidProblem(_))));
        let one = CellField::constant(3, 1.0);
        let p = StepProblem { mesh: &mesh, base: &one, step: -1.0, objective: &e };
        assert!(solve_step(&p, &SolverConfig::default(), Guess::default()).is_err());
        let bad = SolverConfig { barrier_shrink: 1.5, ..SolverConfig::default() };
        assert!(matches!(bad.validate(), Err(SolverError::InvalidConfig(_))));
    }

    /// Dense action on a tiny mesh, independent of the sparse factorization.
    fn dense_action(mesh: &Mesh, weight: &[f64], h: &[f64]) -> f64 {
        let n = mesh.n_cells();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for e in mesh.edges() {
            let w = e.weight_k * weight[e.k] + e.weight_l * weight[e.l];
            let t = w * e.measure / e.dist;
            a[(e.k, e.k)] += t;
            a[(e.l, e.l)] += t;
            a[(e.k, e.l)] -= t;
            a[(e.l, e.k)] -= t;
        }
        let b = DVector::from_iterator(n, h.iter().zip(mesh.measures()).map(|(h, m)| h * m));
        // Pseudo-inverse solve on the range of the Laplacian.
        let x = a.clone().svd(true, true).solve(&b, 1e-13).expect("svd solve");
        0.5 * b.dot(&x)
    }

    /// Derivative-free minimization over the mass simplex, with nested dense action solves.
    fn brute_force_step(mesh: &Mesh, base: &[f64], s: f64, e: &Energy) -> Vec<f64> {
        let m = mesh.measures().to_vec();
        let total: f64 = base.iter().zip(&m).map(|(b, m)| b * m).sum();
        let objective = |masses: [f64; 2]| -> f64 {
            let third = total - masses[0] - masses[1];
            if masses[0] <= 0.0 || masses[1] <= 0.0 || third <= 0.0 {
                return f64::INFINITY;
            }
            let rho = [masses[0] / m[0], masses[1] / m[1], third / m[2]];
            let avg: Vec<f64> = rho.iter().zip(base).map(|(r, b)| 0.5 * (r + b)).collect();
            let h: Vec<f64> = base.iter().zip(&rho).map(|(b, r)| b - r).collect();
            dense_action(mesh, &avg, &h) / s + e.evaluate(mesh, &rho)
        };
        let mut best = [base[0] * m[0], base[1] * m[1]];
        let mut fbest = objective(best);
        let mut step = 0.1 * total;
        while step > 1e-11 {
            let mut improved = false;
            for (dx, dy) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
                let cand = [best[0] + step * dx, best[1] + step * dy];
                let fc = objective(cand);
                if fc < fbest {
                    best = cand;
                    fbest = fc;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        vec![best[0], best[1], total - best[0] - best[1]]
    }

    #[test]
    fn three_cells_against_brute_force() {
        let cases: [(f64, [f64; 3], f64); 3] =
            [(1.0, [1.0, 0.5, 1.5], 0.05), (-3.0, [0.2, 2.0, 0.8], 0.1), (0.0, [3.0, 0.1, 0.1], 0.02)];
        for (g, base, s) in cases {
            let mesh = Mesh::interval(3, 0.0, 1.0).unwrap();
            let e = fp(&mesh, |x| -g * x[0]);
            let base = CellField(base.to_vec());
            let p = StepProblem { mesh: &mesh, base: &base, step: s, objective: &e };
            let sol = solve_step(&p, &SolverConfig::default(), Guess::default()).unwrap();
            let reference = brute_force_step(&mesh, &base, s, &e);
            for k in 0..3 {
                let mass = sol.rho[k] * mesh.measures()[k];
                assert!((mass - reference[k]).abs() < 1e-4, "cell {k}: {mass} vs {}", reference[k]);
            }
        }
    }

    #[test]
    fn bdf2_keeps_stationary_state() {
        let mesh = Mesh::interval(10, 0.0, 1.0).unwrap();
        let e = fp(&mesh, |x| -x[0]);
        let eq = mesh.sample(|x| x[0].exp());
        let sol = solve_bdf2_naive(&mesh, &eq, &eq, 0.05, 4.0 / 3.0, &e, &SolverConfig::default()).unwrap();
        for (a, b) in sol.rho.iter().zip(eq.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn bdf2_conserves_mass_on_smooth_data() {
        let mesh = Mesh::interval(20, 0.0, 1.0).unwrap();
        let e = fp(&mesh, |x| -x[0]);
        let a = mesh.sample(|x| 1.0 + 0.3 * (std::f64::consts::PI * x[0]).cos());
        let b = mesh.sample(|x| 1.0 + 0.2 * (std::f64::consts::PI * x[0]).cos());
        let mass = mesh.mass(&b);
        let sol = solve_bdf2_naive(&mesh, &b, &a, 0.01, 4.0 / 3.0, &e, &SolverConfig::default()).unwrap();
        assert!((mesh.mass(&sol.rho) - mass).abs() <= 1e-9 * mass);
    }
}
