//! Discrete extrapolation of a pair of densities along the Wasserstein geodesic.
//!
//! `E_alpha(mu, nu)` solves the potential of the interpolation from `mu` to `nu`,
//! advances it with one explicit Hamilton-Jacobi step and recovers the density
//! through a linearized JKO step with a linear objective. For `alpha` close to 1
//! this approximates the geodesic extended past `nu` to time `alpha`.

use std::fmt;
use std::str::FromStr;

use crate::energies::Energy;
use crate::hminus;
use crate::mesh::{CellField, EdgeField, Mesh};
use crate::solver::{solve_step, Guess, SolverConfig, SolverError, StepProblem, StepSolution};

/// Coefficient in front of `1/2 L^*|grad phi|^2` in the Hamilton-Jacobi step.
///
/// The interpolation potential lives at the midpoint of `[0, 1]`, so an Euler
/// step to time `alpha` has length `(alpha + beta) / 2`. The reciprocal
/// variant is kept for comparison; it makes EVBDF2 first order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HjPrefactor {
    /// `(alpha + beta) / 2`.
    #[default]
    Elapsed,
    /// `2 / (alpha + beta)`.
    Reciprocal,
}

impl HjPrefactor {
    pub fn coefficient(self, alpha: f64) -> f64 {
        let beta = alpha - 1.0;
        match self {
            HjPrefactor::Reciprocal => 2.0 / (alpha + beta),
            HjPrefactor::Elapsed => (alpha + beta) / 2.0,
        }
    }
}

impl FromStr for HjPrefactor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reciprocal" => Ok(HjPrefactor::Reciprocal),
            "elapsed" => Ok(HjPrefactor::Elapsed),
            other => Err(format!("unknown prefactor `{other}` (expected reciprocal or elapsed)")),
        }
    }
}

impl fmt::Display for HjPrefactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HjPrefactor::Reciprocal => "reciprocal",
            HjPrefactor::Elapsed => "elapsed",
        })
    }
}

/// `phi - c * 1/2 L^*|grad phi|^2`.
pub fn hj_euler_step(mesh: &Mesh, phi: &CellField, alpha: f64, prefactor: HjPrefactor) -> CellField {
    let g = mesh.gradient(phi);
    let g2: EdgeField = g.iter().map(|v| v * v).collect();
    let l = mesh.reconstruct_adjoint(&g2);
    phi.axpy(-0.5 * prefactor.coefficient(alpha), &l)
}

/// `E_alpha(mu, nu)`.
pub fn extrapolate(
    mesh: &Mesh,
    mu: &CellField,
    nu: &CellField,
    alpha: f64,
    prefactor: HjPrefactor,
    config: &SolverConfig,
) -> Result<StepSolution, SolverError> {
    check_pair(mesh, mu, nu)?;
    let avg: CellField = mu.iter().zip(nu.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
    let h: CellField = nu.iter().zip(mu.iter()).map(|(a, b)| a - b).collect();
    let phi = if h.iter().all(|&v| v == 0.0) { CellField::zeros(mesh.n_cells()) } else { hminus::solve_potential(mesh, &avg, &h)? };
    extrapolate_with_potential(mesh, mu, &phi, alpha, prefactor, config)
}

/// `E_alpha` when the interpolation potential from `mu` is already known.
pub fn extrapolate_with_potential(
    mesh: &Mesh,
    mu: &CellField,
    phi: &CellField,
    alpha: f64,
    prefactor: HjPrefactor,
    config: &SolverConfig,
) -> Result<StepSolution, SolverError> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(SolverError::InvalidProblem(format!("extrapolation parameter must exceed 1, got {alpha}")));
    }
    if phi.len() != mesh.n_cells() {
        return Err(SolverError::InvalidProblem("potential size does not match the mesh".into()));
    }
    let phi_alpha = hj_euler_step(mesh, phi, alpha, prefactor);
    let objective = Energy::linear(&phi_alpha);
    let problem = StepProblem { mesh, base: mu, step: alpha, objective: &objective };
    solve_step(&problem, config, Guess::default())
}

fn check_pair(mesh: &Mesh, mu: &CellField, nu: &CellField) -> Result<(), SolverError> {
    if mu.len() != mesh.n_cells() || nu.len() != mesh.n_cells() {
        return Err(SolverError::InvalidProblem("field sizes do not match the mesh".into()));
    }
    let (a, b) = (mesh.mass(mu), mesh.mass(nu));
    if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
        return Err(SolverError::InvalidProblem(format!("masses differ: {a} vs {b}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use approx::assert_relative_eq;

    fn bump(mesh: &Mesh, c: f64, w: f64) -> CellField {
        let raw = mesh.sample(|x| 1e-3 + (-(x[0] - c).powi(2) / (2.0 * w * w)).exp());
        let m = mesh.mass(&raw);
        raw.scaled(1.0 / m)
    }

    #[test]
    fn fixed_point() {
        let mesh = Mesh::interval(30, 0.0, 1.0).unwrap();
        let mu = bump(&mesh, 0.4, 0.1);
        let e = extrapolate(&mesh, &mu, &mu, 4.0 / 3.0, HjPrefactor::default(), &SolverConfig::default()).unwrap();
        for (a, b) in e.rho.iter().zip(mu.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn hj_step_hand_values() {
        // Unit cells: L^*|grad|^2 at K is half the sum of squared jumps to its neighbours.
        let mesh = Mesh::interval(3, 0.0, 3.0).unwrap();
        let phi = CellField(vec![0.0, 1.0, 3.0]);
        let l = [0.5, 0.5 * (1.0 + 4.0), 0.5 * 4.0];
        for p in [HjPrefactor::Reciprocal, HjPrefactor::Elapsed] {
            let c = p.coefficient(1.5);
            let out = hj_euler_step(&mesh, &phi, 1.5, p);
            for k in 0..3 {
                assert_relative_eq!(out[k], phi[k] - 0.5 * c * l[k], epsilon = 1e-14);
            }
        }
        assert_relative_eq!(HjPrefactor::Reciprocal.coefficient(4.0 / 3.0), 1.2, epsilon = 1e-14);
        assert_relative_eq!(HjPrefactor::Elapsed.coefficient(4.0 / 3.0), 5.0 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn parses_prefactor() {
        assert_eq!("elapsed".parse::<HjPrefactor>().unwrap(), HjPrefactor::Elapsed);
        assert_eq!(HjPrefactor::Reciprocal.to_string().parse::<HjPrefactor>().unwrap(), HjPrefactor::Reciprocal);
        assert!("half".parse::<HjPrefactor>().is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let mesh = Mesh::interval(5, 0.0, 1.0).unwrap();
        let mu = CellField::constant(5, 1.0);
        let nu = CellField::constant(5, 2.0);
        let cfg = SolverConfig::default();
        assert!(extrapolate(&mesh, &mu, &nu, 1.5, HjPrefactor::default(), &cfg).is_err());
        assert!(extrapolate(&mesh, &mu, &mu, 1.0, HjPrefactor::default(), &cfg).is_err());
    }

    fn translation_error(n: usize, prefactor: HjPrefactor) -> (f64, f64, f64) {
        let mesh = Mesh::interval(n, 0.0, 1.0).unwrap();
        let mu = bump(&mesh, 0.40, 0.07);
        let nu = bump(&mesh, 0.40 + 2.0 / n as f64, 0.07);
        let alpha = 4.0 / 3.0;
        let e = extrapolate(&mesh, &mu, &nu, alpha, prefactor, &SolverConfig::default()).unwrap();
        let samples = 20_000;
        let q0 = oracles::quantiles_1d(&mesh, &mu, samples).unwrap();
        let q1 = oracles::quantiles_1d(&mesh, &nu, samples).unwrap();
        let qe = oracles::metric_extrapolation_1d(&q0, &q1, alpha).unwrap();
        let reference = oracles::density_from_quantiles(&mesh, &qe, 1.0);
        let l1: f64 = e.rho.iter().zip(reference.iter()).zip(mesh.measures()).map(|((a, b), m)| (a - b).abs() * m).sum();
        let q = oracles::quantiles_1d(&mesh, &e.rho, samples).unwrap();
        let spread = oracles::w2_1d(&q1, &q).unwrap();
        let d = oracles::w2_1d(&q0, &q1).unwrap();
        (l1, spread, d)
    }

    #[test]
    fn matches_quantile_reference_on_translation() {
        // The pair moves by 2h, as consecutive states of a flow with tau ~ h.
        for p in [HjPrefactor::Reciprocal, HjPrefactor::Elapsed] {
            let mut last = f64::INFINITY;
            for n in [50, 100, 200] {
                let (l1, spread, d) = translation_error(n, p);
                let h = 1.0 / n as f64;
                assert!(l1 <= h, "{p} n={n}: L1 {l1}");
                assert!(l1 < last, "{p} n={n}: {l1} vs {last}");
                // W2(nu, E) <= (alpha - 1) W2(mu, nu) up to discretization
                assert!(spread <= d / 3.0 + 0.5 * h, "{p} n={n}: {spread} vs {d}");
                last = l1;
            }
        }
    }
}
