//! Discrete energies `E(rho) = sum_K (f(rho_K) + V_K rho_K) m_K`.

use thiserror::Error;

use crate::mesh::{CellField, Mesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("porous-medium exponent must exceed 1, got {0}")]
    Exponent(f64),
    #[error("potential is not finite at cell {0}")]
    Potential(usize),
}

/// Per-cell internal energy density `f`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Integrand {
    /// `r log r`.
    Entropy,
    /// `r^delta / (delta - 1)`.
    Power { delta: f64 },
    /// No internal energy: the functional is the linear form `<V, rho>`.
    Zero,
}

impl Integrand {
    #[inline]
    pub fn value(self, r: f64) -> f64 {
        match self {
            Integrand::Entropy => {
                if r == 0.0 {
                    0.0
                } else {
                    r * r.ln()
                }
            }
            Integrand::Power { delta } => r.powf(delta) / (delta - 1.0),
            Integrand::Zero => 0.0,
        }
    }

    #[inline]
    pub fn first(self, r: f64) -> f64 {
        match self {
            Integrand::Entropy => r.ln() + 1.0,
            Integrand::Power { delta } => delta * r.powf(delta - 1.0) / (delta - 1.0),
            Integrand::Zero => 0.0,
        }
    }

    #[inline]
    pub fn second(self, r: f64) -> f64 {
        match self {
            Integrand::Entropy => 1.0 / r,
            Integrand::Power { delta } => delta * r.powf(delta - 2.0),
            Integrand::Zero => 0.0,
        }
    }
}

/// Convex energy on a fixed mesh: integrand plus a potential sampled at cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct Energy {
    pub integrand: Integrand,
    pub potential: CellField,
}

impl Energy {
    /// Entropy plus potential energy: the Fokker-Planck equation.
    pub fn fokker_planck(mesh: &Mesh, v: impl Fn([f64; 2]) -> f64) -> Result<Energy, EnergyError> {
        Energy::with_potential(Integrand::Entropy, mesh.sample(v))
    }

    /// `rho^delta / (delta - 1)` plus potential energy: the porous-medium equation.
    pub fn porous_medium(mesh: &Mesh, delta: f64, v: impl Fn([f64; 2]) -> f64) -> Result<Energy, EnergyError> {
        if !(delta > 1.0) || !delta.is_finite() {
            return Err(EnergyError::Exponent(delta));
        }
        Energy::with_potential(Integrand::Power { delta }, mesh.sample(v))
    }

    /// The linear functional `rho -> -<phi, rho>`.
    pub fn linear(phi: &CellField) -> Energy {
        Energy { integrand: Integrand::Zero, potential: phi.scaled(-1.0) }
    }

    pub fn with_potential(integrand: Integrand, potential: CellField) -> Result<Energy, EnergyError> {
        if let Some(k) = potential.iter().position(|v| !v.is_finite()) {
            return Err(EnergyError::Potential(k));
        }
        Ok(Energy { integrand, potential })
    }

    pub fn evaluate(&self, mesh: &Mesh, rho: &[f64]) -> f64 {
        assert_eq!(rho.len(), self.potential.len(), "density length mismatch");
        rho.iter()
            .zip(self.potential.iter())
            .zip(mesh.measures())
            .map(|((&r, v), m)| (self.integrand.value(r) + v * r) * m)
            .sum()
    }

    /// Per-cell derivative `f'(rho_K) + V_K` (the cell-product gradient).
    pub fn gradient(&self, rho: &[f64]) -> CellField {
        assert_eq!(rho.len(), self.potential.len(), "density length mismatch");
        rho.iter().zip(self.potential.iter()).map(|(&r, v)| self.integrand.first(r) + v).collect()
    }

    pub fn hessian_diag(&self, rho: &[f64]) -> CellField {
        assert_eq!(rho.len(), self.potential.len(), "density length mismatch");
        rho.iter().map(|&r| self.integrand.second(r)).collect()
    }

    /// Whether constant densities are critical points (zero potential).
    pub fn has_uniform_equilibrium(&self) -> bool {
        self.potential.iter().all(|&v| v == self.potential[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5 * x.abs().max(1e-3);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn fokker_planck_hand_values() {
        let mesh = Mesh::interval(10, 0.0, 1.0).unwrap();
        let e = Energy::fokker_planck(&mesh, |_| 0.0).unwrap();
        assert_eq!(e.evaluate(&mesh, &[1.0; 10]), 0.0);
        let drift = Energy::fokker_planck(&mesh, |x| -x[0]).unwrap();
        assert_relative_eq!(drift.evaluate(&mesh, &[1.0; 10]), -0.5, epsilon = 1e-14);
        assert_eq!(Integrand::Entropy.value(0.0), 0.0);
    }

    #[test]
    fn porous_medium_hand_values() {
        let mesh = Mesh::interval(8, 0.0, 1.0).unwrap();
        let e = Energy::porous_medium(&mesh, 2.0, |_| 0.0).unwrap();
        assert_relative_eq!(e.evaluate(&mesh, &[1.0; 8]), 1.0, epsilon = 1e-14);
        assert!(matches!(Energy::porous_medium(&mesh, 1.0, |_| 0.0), Err(EnergyError::Exponent(_))));
        assert!(Energy::porous_medium(&mesh, 0.5, |_| 0.0).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for f in [Integrand::Entropy, Integrand::Power { delta: 2.0 }, Integrand::Power { delta: 3.5 }] {
            for r in [0.1, 1.0, 10.0] {
                let d1 = central(|x| f.value(x), r);
                assert_relative_eq!(f.first(r), d1, max_relative = 1e-6);
                let d2 = central(|x| f.first(x), r);
                assert_relative_eq!(f.second(r), d2, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn linear_energy_is_negated_pairing() {
        let mesh = Mesh::interval(3, 0.0, 1.0).unwrap();
        let phi = CellField(vec![1.0, -2.0, 0.5]);
        let e = Energy::linear(&phi);
        let rho = [0.3, 0.2, 0.1];
        let pairing: f64 = rho.iter().zip(phi.iter()).map(|(r, p)| r * p / 3.0).sum();
        assert_relative_eq!(e.evaluate(&mesh, &rho), -pairing, epsilon = 1e-15);
        assert!(e.hessian_diag(&rho).iter().all(|&v| v == 0.0));
    }

    fn energies() -> impl Strategy<Value = Integrand> {
        prop_oneof![Just(Integrand::Entropy), (1.1f64..4.0).prop_map(|delta| Integrand::Power { delta })]
    }

    proptest! {
        #[test]
        fn gradient_matches_evaluate(f in energies(), rho in proptest::collection::vec(0.05f64..5.0, 6), k in 0usize..6) {
            let mesh = Mesh::interval(6, 0.0, 1.0).unwrap();
            let e = Energy::with_potential(f, mesh.sample(|x| x[0].sin())).unwrap();
            let g = e.gradient(&rho);
            let along = |t: f64| {
                let mut r = rho.clone();
                r[k] = t;
                e.evaluate(&mesh, &r)
            };
            let fd = central(along, rho[k]) / mesh.measures()[k];
            prop_assert!((g[k] - fd).abs() <= 1e-6 * (1.0 + g[k].abs()));
            let h = e.hessian_diag(&rho);
            let fd2 = central(|t| {
                let mut r = rho.clone();
                r[k] = t;
                e.gradient(&r)[k]
            }, rho[k]);
            prop_assert!((h[k] - fd2).abs() <= 1e-5 * (1.0 + h[k].abs()));
        }

        #[test]
        fn convexity(f in energies(), a in proptest::collection::vec(0.01f64..5.0, 5), b in proptest::collection::vec(0.01f64..5.0, 5), t in 0.0f64..1.0) {
            let mesh = Mesh::interval(5, 0.0, 1.0).unwrap();
            let e = Energy::with_potential(f, mesh.sample(|x| -x[0])).unwrap();
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
            let lhs = e.evaluate(&mesh, &mix);
            let rhs = t * e.evaluate(&mesh, &a) + (1.0 - t) * e.evaluate(&mesh, &b);
            prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
        }
    }
}
