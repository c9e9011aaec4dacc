//! Weighted dual Sobolev action and its potential.
//!
//! For a mobility `w` and a zero-mass source `h`,
//!
//! ```text
//! A(w; h) = sup_phi <h, phi> - 1/2 <L w, |grad phi|^2>
//! ```
//!
//! The supremum is attained where `h + div((L w) grad phi) = 0`, a weighted
//! graph Laplacian system, and equals `1/2 <h, phi>` there.

use thiserror::Error;

use crate::linalg::{self, SymMatrix};
use crate::mesh::{CellField, Mesh, Space};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("unbounded dual: source has nonzero total mass {total:e}")]
    UnboundedDual { total: f64 },
    #[error("singular mobility: weight {weight:e} on edge {edge}")]
    SingularMobility { edge: usize, weight: f64 },
    #[error("potential solve failed, relative residual {residual:e}")]
    LinearSolve { residual: f64 },
}

/// Relative tolerance on `<h, 1>` before the dual is declared unbounded.
const BALANCE_TOL: f64 = 1e-10;
/// Relative max-norm residual accepted from the linear solve.
const RESIDUAL_TOL: f64 = 1e-11;

/// Mean-zero maximizer of the action for mobility `L weight`.
pub fn solve_potential(mesh: &Mesh, weight: &CellField, h: &CellField) -> Result<CellField, PotentialError> {
    assert_eq!(weight.len(), mesh.n_cells(), "weight length mismatch");
    let mobility = mesh.reconstruct(weight);
    solve_with_mobility(mesh, &mobility, h)
}

/// `A(weight; h)`, evaluated as `1/2 <h, phi*>`.
pub fn action(mesh: &Mesh, weight: &CellField, h: &CellField) -> Result<f64, PotentialError> {
    let phi = solve_potential(mesh, weight, h)?;
    Ok(0.5 * mesh.inner(Space::Cells, h, &phi))
}

/// Primal form of the action, `<h, phi> - 1/2 <L w, |grad phi|^2>`, at a given `phi`.
pub fn action_at(mesh: &Mesh, weight: &CellField, h: &CellField, phi: &CellField) -> f64 {
    let w = mesh.reconstruct(weight);
    let g = mesh.gradient(phi);
    let g2: Vec<f64> = g.iter().map(|v| v * v).collect();
    mesh.inner(Space::Cells, h, phi) - 0.5 * mesh.inner(Space::Edges, &w, &g2)
}

/// `-div((L weight) grad phi)`.
pub fn laplacian_apply(mesh: &Mesh, weight: &CellField, phi: &CellField) -> CellField {
    let w = mesh.reconstruct(weight);
    let flux: crate::mesh::FluxField = mesh.gradient(phi).iter().zip(w.iter()).map(|(g, w)| g * w).collect();
    mesh.divergence(&flux).scaled(-1.0)
}

/// Same as [`solve_potential`] with the edge mobility given directly.
pub(crate) fn solve_with_mobility(mesh: &Mesh, mobility: &[f64], h: &CellField) -> Result<CellField, PotentialError> {
    let n = mesh.n_cells();
    assert_eq!(h.len(), n, "source length mismatch");
    assert_eq!(mobility.len(), mesh.n_edges(), "mobility length mismatch");
    if let Some((edge, &weight)) = mobility.iter().enumerate().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
        return Err(PotentialError::SingularMobility { edge, weight });
    }
    let total = mesh.mass(h);
    let scale: f64 = h.iter().zip(mesh.measures()).map(|(h, m)| h.abs() * m).sum();
    if total.abs() > BALANCE_TOL * scale {
        return Err(PotentialError::UnboundedDual { total });
    }
    if scale == 0.0 || n == 1 {
        return Ok(CellField::zeros(n));
    }
    // Remove the rounding-level imbalance so the pinned system is consistent.
    let mean = total / mesh.volume();
    let balanced: CellField = h.iter().map(|v| v - mean).collect();

    let mut a = SymMatrix::zeros(mesh.symbolic(1, 1));
    for (e, w) in mesh.edges().iter().zip(mobility) {
        let t = w * e.transmissibility();
        a.add(e.k, e.k, t);
        a.add(e.l, e.l, t);
        a.add(e.k, e.l, -t);
    }
    // Pin the best-connected cell: pinning inside a nearly empty region leaves
    // the rest of the graph attached through vanishing conductances.
    let (k0, d0) = (0..n).map(|k| (k, a.get(k, k))).fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
    a.pin(k0, if d0 > 0.0 { d0 } else { 1.0 });
    let mut rhs: Vec<f64> = balanced.iter().zip(mesh.measures()).map(|(h, m)| h * m).collect();
    rhs[k0] = 0.0;
    let (mut phi, _) =
        linalg::solve_refined(&a, &rhs, 2).map_err(|_| PotentialError::LinearSolve { residual: f64::INFINITY })?;
    let shift = mesh.mass(&phi) / mesh.volume();
    phi.iter_mut().for_each(|p| *p -= shift);
    let phi = CellField(phi);

    let residual = relative_residual(mesh, mobility, &balanced, &phi);
    if !(residual <= RESIDUAL_TOL) {
        return Err(PotentialError::LinearSolve { residual });
    }
    Ok(phi)
}

/// `max_K |h_K + div(w grad phi)_K|`, relative to the size of the terms involved.
fn relative_residual(mesh: &Mesh, mobility: &[f64], h: &[f64], phi: &[f64]) -> f64 {
    let n = mesh.n_cells();
    let mut r = h.to_vec();
    let mut mag = vec![0.0; n];
    for (e, w) in mesh.edges().iter().zip(mobility) {
        let f = w * e.transmissibility() * (phi[e.l] - phi[e.k]);
        r[e.k] += f / mesh.measures()[e.k];
        r[e.l] -= f / mesh.measures()[e.l];
        mag[e.k] += f.abs() / mesh.measures()[e.k];
        mag[e.l] += f.abs() / mesh.measures()[e.l];
    }
    let scale = h.iter().chain(&mag).fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    r.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / scale
}
