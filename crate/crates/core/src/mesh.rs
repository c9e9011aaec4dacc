//! Two-point flux approximation (TPFA) meshes and the discrete calculus on them.
//!
//! A [`Mesh`] stores cells (center, measure) and internal edges only: the
//! flows considered here carry no-flux boundary conditions, so boundary edges
//! never hold a flux unknown. Every internal edge is stored once, oriented from
//! its lower-index cell `k` to its higher-index cell `l`, which lets a
//! conservative flux be represented by one scalar per edge.
//!
//! Three inner-product spaces live on a mesh:
//!
//! | space        | type          | inner product                        |
//! |--------------|---------------|--------------------------------------|
//! | cells        | [`CellField`] | `sum_K a_K b_K m_K`                  |
//! | edges        | [`EdgeField`] | `sum_s u_s v_s m_s d_s`              |
//! | fluxes       | [`FluxField`] | `sum_s F_s G_s m_s d_s`              |
//!
//! The operators [`Mesh::divergence`] and [`Mesh::gradient`] are negative
//! adjoints of each other, and [`Mesh::reconstruct`] / [`Mesh::reconstruct_adjoint`]
//! are adjoint with respect to the cell and edge products.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::{Deref, DerefMut};
use std::path::Path;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::linalg::{ordering, Symbolic};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh needs at least one cell per direction, got {0}")]
    NoCells(usize),
    #[error("degenerate domain [{lo}, {hi}]")]
    DegenerateDomain { lo: f64, hi: f64 },
    #[error("invalid mesh file, line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid mesh geometry: {0}")]
    Geometry(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An internal edge `sigma = K|L` with `k < l`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub k: usize,
    pub l: usize,
    /// Edge measure `m_sigma` (1 in one dimension).
    pub measure: f64,
    /// Center distance `d_sigma = |x_L - x_K|`.
    pub dist: f64,
    /// Distance from `x_K` to the edge midpoint.
    pub dist_k: f64,
    /// Distance from `x_L` to the edge midpoint.
    pub dist_l: f64,
    /// Reconstruction weight of cell `k`; `weight_k + weight_l == 1`.
    pub weight_k: f64,
    pub weight_l: f64,
}

impl Edge {
    /// Inner-product weight `m_sigma * d_sigma` (the diamond measure times the dimension).
    #[inline]
    pub fn diamond(&self) -> f64 {
        self.measure * self.dist
    }

    /// TPFA transmissibility `m_sigma / d_sigma`.
    #[inline]
    pub fn transmissibility(&self) -> f64 {
        self.measure / self.dist
    }

    fn new(k: usize, l: usize, measure: f64, dist: f64, dist_k: f64, dist_l: f64) -> Self {
        let (k, l, dist_k, dist_l) = if k < l { (k, l, dist_k, dist_l) } else { (l, k, dist_l, dist_k) };
        let weight_k = dist_k / dist;
        Edge { k, l, measure, dist, dist_k, dist_l, weight_k, weight_l: 1.0 - weight_k }
    }
}

macro_rules! field_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, Default, PartialEq)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn zeros(len: usize) -> Self {
                $name(vec![0.0; len])
            }

            pub fn constant(len: usize, value: f64) -> Self {
                $name(vec![value; len])
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }

            pub fn max_abs(&self) -> f64 {
                self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
            }

            /// `self + c * other`, elementwise.
            pub fn axpy(&self, c: f64, other: &$name) -> $name {
                assert_eq!(self.len(), other.len(), "field length mismatch");
                $name(self.0.iter().zip(&other.0).map(|(a, b)| a + c * b).collect())
            }

            pub fn scaled(&self, c: f64) -> $name {
                $name(self.0.iter().map(|a| c * a).collect())
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                $name(v)
            }
        }

        impl FromIterator<f64> for $name {
            fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
                $name(iter.into_iter().collect())
            }
        }
    };
}

field_newtype!(
    /// One value per cell: a density (mass per volume) or a potential.
    CellField
);
field_newtype!(
    /// One value per internal edge.
    EdgeField
);
field_newtype!(
    /// Conservative flux `F_{K,sigma}` per internal edge, oriented from `k` to `l`.
    FluxField
);

/// Which of the three discrete inner-product spaces a pair of vectors lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Cells,
    Edges,
    Fluxes,
}

/// Immutable TPFA-admissible mesh in one or two space dimensions.
pub struct Mesh {
    dim: usize,
    centers: Vec<[f64; 2]>,
    measures: Vec<f64>,
    edges: Vec<Edge>,
    /// Edge indices incident to each cell.
    cell_edges: Vec<Vec<usize>>,
    size: f64,
    symbolic_cache: Mutex<Vec<SymbolicEntry>>,
}

/// Cached symbolic factorization keyed by `(ring, block)`.
type SymbolicEntry = ((usize, usize), Arc<Symbolic>);

impl fmt::Debug for Mesh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mesh")
            .field("dim", &self.dim)
            .field("cells", &self.centers.len())
            .field("edges", &self.edges.len())
            .field("size", &self.size)
            .finish()
    }
}

impl Clone for Mesh {
    fn clone(&self) -> Self {
        Mesh::from_parts(self.dim, self.centers.clone(), self.measures.clone(), self.edges.clone(), self.size)
            .expect("cloning a valid mesh")
    }
}

impl Mesh {
    /// Uniform partition of `[a, b]` into `n_cells` intervals.
    pub fn interval(n_cells: usize, a: f64, b: f64) -> Result<Mesh, MeshError> {
        if n_cells == 0 {
            return Err(MeshError::NoCells(0));
        }
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(MeshError::DegenerateDomain { lo: a, hi: b });
        }
        let h = (b - a) / n_cells as f64;
        let centers = (0..n_cells).map(|i| [a + (i as f64 + 0.5) * h, 0.0]).collect();
        let measures = vec![h; n_cells];
        let edges = (1..n_cells).map(|i| Edge::new(i - 1, i, 1.0, h, 0.5 * h, 0.5 * h)).collect();
        Mesh::from_parts(1, centers, measures, edges, h)
    }

    /// Axis-aligned `nx` by `ny` grid of `[x0, x1] x [y0, y1]`, cells numbered row-major
    /// (`index = j * nx + i`).
    pub fn cartesian(nx: usize, ny: usize, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) -> Result<Mesh, MeshError> {
        if nx == 0 || ny == 0 {
            return Err(MeshError::NoCells(nx.min(ny)));
        }
        if !(x0 < x1) {
            return Err(MeshError::DegenerateDomain { lo: x0, hi: x1 });
        }
        if !(y0 < y1) {
            return Err(MeshError::DegenerateDomain { lo: y0, hi: y1 });
        }
        let dx = (x1 - x0) / nx as f64;
        let dy = (y1 - y0) / ny as f64;
        let idx = |i: usize, j: usize| j * nx + i;
        let mut centers = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                centers.push([x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy]);
            }
        }
        let measures = vec![dx * dy; nx * ny];
        let mut edges = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                if i + 1 < nx {
                    edges.push(Edge::new(idx(i, j), idx(i + 1, j), dy, dx, 0.5 * dx, 0.5 * dx));
                }
                if j + 1 < ny {
                    edges.push(Edge::new(idx(i, j), idx(i, j + 1), dx, dy, 0.5 * dy, 0.5 * dy));
                }
            }
        }
        Mesh::from_parts(2, centers, measures, edges, dx.hypot(dy))
    }

    /// Assemble a mesh from explicit geometry. Weights are `d_{K,sigma} / d_sigma`.
    pub fn from_geometry(
        dim: usize,
        centers: Vec<[f64; 2]>,
        measures: Vec<f64>,
        edges: Vec<(usize, usize, f64, f64, f64, f64)>,
    ) -> Result<Mesh, MeshError> {
        let edges: Vec<Edge> = edges
            .into_iter()
            .map(|(k, l, m, d, dk, dl)| Edge::new(k, l, m, d, dk, dl))
            .collect();
        // Mesh size proxy: twice the largest center-to-edge distance, or the cell
        // extent in 1D.
        let size = if dim == 1 {
            measures.iter().cloned().fold(0.0, f64::max)
        } else {
            edges.iter().map(|e| 2.0 * e.dist_k.max(e.dist_l)).fold(0.0, f64::max)
        };
        Mesh::from_parts(dim, centers, measures, edges, size)
    }

    fn from_parts(dim: usize, centers: Vec<[f64; 2]>, measures: Vec<f64>, edges: Vec<Edge>, size: f64) -> Result<Mesh, MeshError> {
        if !(dim == 1 || dim == 2) {
            return Err(MeshError::Geometry(format!("dimension {dim} not supported")));
        }
        let n = centers.len();
        if n == 0 || measures.len() != n {
            return Err(MeshError::Geometry("cell list empty or inconsistent".into()));
        }
        if let Some(k) = measures.iter().position(|m| !(*m > 0.0)) {
            return Err(MeshError::Geometry(format!("cell {k} has nonpositive measure")));
        }
        let mut cell_edges = vec![Vec::new(); n];
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for (s, e) in edges.iter().enumerate() {
            if e.k == e.l || e.l >= n {
                return Err(MeshError::Geometry(format!("edge {s} joins cells {} and {}", e.k, e.l)));
            }
            if !seen.insert((e.k, e.l)) {
                return Err(MeshError::Geometry(format!("edge ({}, {}) listed twice", e.k, e.l)));
            }
            if !(e.measure > 0.0 && e.dist > 0.0 && e.dist_k >= 0.0 && e.dist_l >= 0.0) {
                return Err(MeshError::Geometry(format!("edge {s} has nonpositive geometry")));
            }
            cell_edges[e.k].push(s);
            cell_edges[e.l].push(s);
        }
        Ok(Mesh { dim, centers, measures, edges, cell_edges, size, symbolic_cache: Mutex::new(Vec::new()) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.centers.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Internal edges touching cell `k`.
    pub fn cell_edges(&self, k: usize) -> &[usize] {
        &self.cell_edges[k]
    }

    /// Mesh size `h`: the largest cell diameter.
    pub fn size(&self) -> f64 {
        self.size
    }

    pub fn volume(&self) -> f64 {
        self.measures.iter().sum()
    }

    /// Sample a function at cell centers.
    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> CellField {
        self.centers.iter().map(|&x| f(x)).collect()
    }

    /// `<a, 1>_T`, the total mass of a density.
    pub fn mass(&self, a: &[f64]) -> f64 {
        assert_eq!(a.len(), self.n_cells(), "cell field length mismatch");
        a.iter().zip(&self.measures).map(|(a, m)| a * m).sum()
    }

    /// `(div F)_K = (1/m_K) sum_{sigma in K} F_{K,sigma} m_sigma`.
    pub fn divergence(&self, flux: &FluxField) -> CellField {
        assert_eq!(flux.len(), self.n_edges(), "flux field length mismatch");
        let mut out = vec![0.0; self.n_cells()];
        for (e, f) in self.edges.iter().zip(flux.iter()) {
            out[e.k] += f * e.measure;
            out[e.l] -= f * e.measure;
        }
        for (o, m) in out.iter_mut().zip(&self.measures) {
            *o /= m;
        }
        CellField(out)
    }

    /// `(grad a)_{K,sigma} = (a_L - a_K) / d_sigma`.
    pub fn gradient(&self, a: &CellField) -> FluxField {
        assert_eq!(a.len(), self.n_cells(), "cell field length mismatch");
        self.edges.iter().map(|e| (a[e.l] - a[e.k]) / e.dist).collect()
    }

    /// Weighted arithmetic average of cell values onto edges.
    pub fn reconstruct(&self, a: &CellField) -> EdgeField {
        assert_eq!(a.len(), self.n_cells(), "cell field length mismatch");
        self.edges.iter().map(|e| e.weight_k * a[e.k] + e.weight_l * a[e.l]).collect()
    }

    /// Adjoint of [`Mesh::reconstruct`]: `sum_{sigma in K} lambda_{K,sigma} u_sigma m_sigma d_sigma / m_K`.
    pub fn reconstruct_adjoint(&self, u: &EdgeField) -> CellField {
        assert_eq!(u.len(), self.n_edges(), "edge field length mismatch");
        let mut out = vec![0.0; self.n_cells()];
        for (e, u) in self.edges.iter().zip(u.iter()) {
            let w = u * e.diamond();
            out[e.k] += e.weight_k * w;
            out[e.l] += e.weight_l * w;
        }
        for (o, m) in out.iter_mut().zip(&self.measures) {
            *o /= m;
        }
        CellField(out)
    }

    /// Inner product in one of the three discrete spaces.
    pub fn inner(&self, space: Space, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len(), "inner product operands differ in length");
        match space {
            Space::Cells => {
                assert_eq!(a.len(), self.n_cells(), "cell field length mismatch");
                a.iter().zip(b).zip(&self.measures).map(|((a, b), m)| a * b * m).sum()
            }
            // Under the oriented one-scalar representation the flux product
            // (F_K G_K + F_L G_L) m d / 2 reduces to F G m d.
            Space::Edges | Space::Fluxes => {
                assert_eq!(a.len(), self.n_edges(), "edge field length mismatch");
                a.iter().zip(b).zip(&self.edges).map(|((a, b), e)| a * b * e.diamond()).sum()
            }
        }
    }

    /// Symbolic LDL^T analysis for matrices whose graph couples cells up to
    /// `ring` edges apart, with `block` unknowns per cell. Cached per mesh.
    pub(crate) fn symbolic(&self, ring: usize, block: usize) -> Arc<Symbolic> {
        let mut cache = self.symbolic_cache.lock().expect("symbolic cache poisoned");
        if let Some((_, s)) = cache.iter().find(|(key, _)| *key == (ring, block)) {
            return Arc::clone(s);
        }
        let adjacency = self.ring_adjacency(ring);
        let n = self.n_cells() * block;
        let mut graph: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, nbrs) in adjacency.iter().enumerate() {
            for a in 0..block {
                let row = &mut graph[k * block + a];
                for &j in nbrs.iter().chain(std::iter::once(&k)) {
                    for b in 0..block {
                        row.push(j * block + b);
                    }
                }
                row.sort_unstable();
                row.dedup();
            }
        }
        let coords: Vec<[f64; 2]> = (0..n).map(|i| self.centers[i / block]).collect();
        let perm = ordering::nested_dissection(&graph, &coords);
        let sym = Arc::new(Symbolic::new(&graph, perm));
        cache.push(((ring, block), Arc::clone(&sym)));
        sym
    }

    /// Cells within `ring` edge hops of each cell (excluding itself).
    pub(crate) fn ring_adjacency(&self, ring: usize) -> Vec<Vec<usize>> {
        let n = self.n_cells();
        let direct: Vec<Vec<usize>> = (0..n)
            .map(|k| {
                self.cell_edges[k]
                    .iter()
                    .map(|&s| {
                        let e = &self.edges[s];
                        if e.k == k {
                            e.l
                        } else {
                            e.k
                        }
                    })
                    .collect()
            })
            .collect();
        let mut out = direct.clone();
        for _ in 1..ring {
            out = out
                .iter()
                .enumerate()
                .map(|(k, nbrs)| {
                    let mut next = nbrs.clone();
                    for &j in nbrs {
                        next.extend_from_slice(&direct[j]);
                    }
                    next.sort_unstable();
                    next.dedup();
                    next.retain(|&j| j != k);
                    next
                })
                .collect();
        }
        out
    }

    /// Read the plain-text mesh format: a header `d n_cells n_edges`, one line
    /// `x [y] m_K` per cell, then one line `K L m_sigma d_sigma d_Ksigma d_Lsigma` per edge.
    pub fn read(reader: impl BufRead) -> Result<Mesh, MeshError> {
        let mut lines = reader
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty() && !s.trim_start().starts_with('#')).unwrap_or(true));
        let parse_err = |line: usize, msg: &str| MeshError::Parse { line, msg: msg.to_string() };
        let mut next_numbers = |expect: usize| -> Result<(usize, Vec<f64>), MeshError> {
            let (no, line) = lines.next().ok_or_else(|| parse_err(0, "unexpected end of file"))?;
            let line = line?;
            let nums: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let nums = nums.map_err(|e| parse_err(no, &e.to_string()))?;
            if nums.len() != expect {
                return Err(parse_err(no, &format!("expected {expect} values, found {}", nums.len())));
            }
            Ok((no, nums))
        };
        let (no, header) = next_numbers(3)?;
        let dim = header[0] as usize;
        if !(dim == 1 || dim == 2) || header[0].fract() != 0.0 {
            return Err(parse_err(no, "dimension must be 1 or 2"));
        }
        let (n_cells, n_edges) = (header[1] as usize, header[2] as usize);
        let mut centers = Vec::with_capacity(n_cells);
        let mut measures = Vec::with_capacity(n_cells);
        for _ in 0..n_cells {
            let (_, v) = next_numbers(dim + 1)?;
            centers.push(if dim == 1 { [v[0], 0.0] } else { [v[0], v[1]] });
            measures.push(v[dim]);
        }
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let (no, v) = next_numbers(6)?;
            if v[0] < 0.0 || v[1] < 0.0 || v[0].fract() != 0.0 || v[1].fract() != 0.0 {
                return Err(parse_err(no, "cell indices must be nonnegative integers"));
            }
            edges.push((v[0] as usize, v[1] as usize, v[2], v[3], v[4], v[5]));
        }
        Mesh::from_geometry(dim, centers, measures, edges)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
        let file = std::fs::File::open(path)?;
        Mesh::read(std::io::BufReader::new(file))
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.dim, self.n_cells(), self.n_edges())?;
        for (c, m) in self.centers.iter().zip(&self.measures) {
            if self.dim == 1 {
                writeln!(w, "{:e} {:e}", c[0], m)?;
            } else {
                writeln!(w, "{:e} {:e} {:e}", c[0], c[1], m)?;
            }
        }
        for e in &self.edges {
            writeln!(w, "{} {} {:e} {:e} {:e} {:e}", e.k, e.l, e.measure, e.dist, e.dist_k, e.dist_l)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interval_geometry() {
        let mesh = Mesh::interval(50, 0.0, 1.0).unwrap();
        assert!(mesh.measures().iter().all(|&m| (m - 0.02).abs() < 1e-15));
        assert_eq!(mesh.n_edges(), 49);

        let single = Mesh::interval(1, 0.0, 1.0).unwrap();
        assert_eq!(single.n_cells(), 1);
        assert_eq!(single.n_edges(), 0);

        let four = Mesh::interval(4, 0.0, 2.0).unwrap();
        assert_eq!(four.n_edges(), 3);
        for e in four.edges() {
            assert_relative_eq!(e.dist, 0.5);
            assert_relative_eq!(e.weight_k, 0.5);
            assert_eq!(e.weight_k + e.weight_l, 1.0);
            assert_relative_eq!(e.dist_k + e.dist_l, e.dist);
        }
    }

    #[test]
    fn interval_rejects_bad_input() {
        assert!(matches!(Mesh::interval(0, 0.0, 1.0), Err(MeshError::NoCells(0))));
        assert!(matches!(Mesh::interval(3, 1.0, 1.0), Err(MeshError::DegenerateDomain { .. })));
        assert!(Mesh::interval(3, 2.0, 1.0).is_err());
    }

    #[test]
    fn cartesian_geometry() {
        let m = Mesh::cartesian(2, 2, (0.0, 1.0), (0.0, 1.0)).unwrap();
        assert_eq!(m.n_cells(), 4);
        assert_eq!(m.n_edges(), 4);
        assert!(m.measures().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let one = Mesh::cartesian(1, 1, (0.0, 1.0), (0.0, 1.0)).unwrap();
        assert_eq!(one.n_edges(), 0);

        let m = Mesh::cartesian(3, 2, (0.0, 3.0), (0.0, 2.0)).unwrap();
        assert!(m.measures().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(m.edges().iter().all(|e| (e.dist - 1.0).abs() < 1e-15));
        assert_eq!(m.n_edges(), 2 * 2 + 3);

        assert!(Mesh::cartesian(0, 2, (0.0, 1.0), (0.0, 1.0)).is_err());
        assert!(Mesh::cartesian(2, 2, (0.0, 1.0), (1.0, 1.0)).is_err());
    }

    #[test]
    fn divergence_hand_values() {
        let mesh = Mesh::interval(3, 0.0, 1.0).unwrap();
        assert_eq!(mesh.divergence(&FluxField::zeros(2)).0, vec![0.0; 3]);
        let div = mesh.divergence(&FluxField(vec![1.0, 1.0]));
        assert_relative_eq!(div[0], 3.0);
        assert_relative_eq!(div[1], 0.0);
        assert_relative_eq!(div[2], -3.0);
        assert!(mesh.mass(&div).abs() < 1e-15);
    }

    #[test]
    fn gradient_is_exact_on_linears() {
        let mesh = Mesh::interval(7, 0.0, 1.0).unwrap();
        let g = mesh.gradient(&mesh.sample(|x| x[0]));
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let c = mesh.gradient(&CellField::constant(7, 4.2));
        assert!(c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reconstruction_hand_values() {
        let mesh = Mesh::interval(2, 0.0, 1.0).unwrap();
        assert_relative_eq!(mesh.reconstruct(&CellField(vec![0.0, 1.0]))[0], 0.5);
        assert_eq!(mesh.reconstruct(&CellField::constant(2, 3.0)).0, vec![3.0]);

        let mesh = Mesh::interval(3, 0.0, 1.0).unwrap();
        let r = mesh.reconstruct_adjoint(&EdgeField(vec![1.0, 0.0]));
        assert_relative_eq!(r[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(r[1], 0.5, epsilon = 1e-14);
        assert_relative_eq!(r[2], 0.0);
        assert_eq!(mesh.reconstruct_adjoint(&EdgeField::zeros(2)).0, vec![0.0; 3]);
    }

    #[test]
    fn inner_products() {
        let mesh = Mesh::interval(10, 0.0, 1.0).unwrap();
        let one = CellField::constant(10, 1.0);
        assert_relative_eq!(mesh.inner(Space::Cells, &one, &one), 1.0, epsilon = 1e-14);
    }

    #[test]
    #[should_panic(expected = "length mismatch")]
    fn divergence_size_mismatch_panics() {
        let mesh = Mesh::interval(3, 0.0, 1.0).unwrap();
        mesh.divergence(&FluxField::zeros(5));
    }

    #[test]
    fn file_round_trip() {
        let mesh = Mesh::cartesian(3, 2, (0.0, 1.0), (0.0, 0.5)).unwrap();
        let mut buf = Vec::new();
        mesh.write(&mut buf).unwrap();
        let back = Mesh::read(&buf[..]).unwrap();
        assert_eq!(back.n_cells(), 6);
        assert_eq!(back.edges(), mesh.edges());
        assert_eq!(back.measures(), mesh.measures());
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        let text = "1 2 1\n0.25 0.5\n0.75 0.5\n0 1 1.0 oops 0.25 0.25\n";
        match Mesh::read(text.as_bytes()) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let self_edge = "1 2 1\n0.25 0.5\n0.75 0.5\n1 1 1.0 0.5 0.25 0.25\n";
        assert!(matches!(Mesh::read(self_edge.as_bytes()), Err(MeshError::Geometry(_))));
    }

    #[test]
    fn ring_adjacency_on_grid() {
        let m = Mesh::cartesian(4, 4, (0.0, 1.0), (0.0, 1.0)).unwrap();
        let r1 = m.ring_adjacency(1);
        let r2 = m.ring_adjacency(2);
        // interior cell (1,1) = 5
        assert_eq!(r1[5].len(), 4);
        assert_eq!(r2[5].len(), 4 + 4 + 2);
    }
}
