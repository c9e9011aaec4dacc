//! Sparse symmetric factorization and a small banded LU.
//!
//! The symmetric systems met by the solvers (pinned weighted Laplacians and
//! the Schur complements of the interior-point Newton systems) share their
//! sparsity pattern across every Newton iteration on a given mesh, so the
//! symbolic analysis ([`Symbolic`]) is done once and reused by every numeric
//! [`LdlFactor`].

pub mod band;
pub mod ordering;

use std::sync::Arc;

use thiserror::Error;

pub use band::BandLu;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("zero pivot at column {0}")]
    ZeroPivot(usize),
    #[error("matrix is not positive definite (pivot {pivot:e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },
    #[error("singular banded system at row {0}")]
    Singular(usize),
}

/// Pattern and fill-reducing analysis of a symmetric sparse matrix.
#[derive(Debug)]
pub struct Symbolic {
    n: usize,
    /// Full symmetric pattern, CSR with sorted columns (diagonal included).
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    pinv: Vec<usize>,
    parent: Vec<Option<usize>>,
    l_ptr: Vec<usize>,
}

impl Symbolic {
    /// `graph[i]` lists every column with a structural entry in row `i`,
    /// including `i` itself. The graph must be symmetric.
    pub fn new(graph: &[Vec<usize>], perm: Vec<usize>) -> Symbolic {
        let n = graph.len();
        assert_eq!(perm.len(), n, "permutation length mismatch");
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        for row in graph {
            let mut r = row.clone();
            r.sort_unstable();
            r.dedup();
            cols.extend(r);
            row_ptr.push(cols.len());
        }
        let mut pinv = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }
        assert!(pinv.iter().all(|&p| p != usize::MAX), "ordering is not a permutation");

        // Elimination tree and column counts of L (LDL symbolic phase).
        let mut parent = vec![None; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            let kk = perm[k];
            for &j in &cols[row_ptr[kk]..row_ptr[kk + 1]] {
                let mut i = pinv[j];
                if i < k {
                    while flag[i] != k {
                        if parent[i].is_none() {
                            parent[i] = Some(k);
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i].expect("elimination tree parent");
                    }
                }
            }
        }
        let mut l_ptr = vec![0; n + 1];
        for k in 0..n {
            l_ptr[k + 1] = l_ptr[k] + lnz[k];
        }
        Symbolic { n, row_ptr, cols, perm, pinv, parent, l_ptr }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored off-diagonal entries in the factor.
    pub fn factor_nnz(&self) -> usize {
        self.l_ptr[self.n]
    }
}

/// Symmetric matrix whose values follow a shared [`Symbolic`] pattern.
#[derive(Clone, Debug)]
pub struct SymMatrix {
    sym: Arc<Symbolic>,
    values: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(sym: Arc<Symbolic>) -> SymMatrix {
        let nnz = sym.cols.len();
        SymMatrix { sym, values: vec![0.0; nnz] }
    }

    pub fn dim(&self) -> usize {
        self.sym.n
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        let row = &self.sym.cols[self.sym.row_ptr[i]..self.sym.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(p) => self.sym.row_ptr[i] + p,
            Err(_) => panic!("entry ({i}, {j}) outside the symbolic pattern"),
        }
    }

    /// Add `v` at `(i, j)` and, off the diagonal, at `(j, i)`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self.slot(i, j);
        self.values[p] += v;
        if i != j {
            let q = self.slot(j, i);
            self.values[q] += v;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.sym.cols[self.sym.row_ptr[i]..self.sym.row_ptr[i + 1]];
        row.binary_search(&j).map(|p| self.values[self.sym.row_ptr[i] + p]).unwrap_or(0.0)
    }

    /// Replace row and column `i` by the identity row scaled by `diag`.
    pub fn pin(&mut self, i: usize, diag: f64) {
        let (a, b) = (self.sym.row_ptr[i], self.sym.row_ptr[i + 1]);
        for p in a..b {
            let j = self.sym.cols[p];
            if j != i {
                self.values[p] = 0.0;
                let q = self.slot(j, i);
                self.values[q] = 0.0;
            } else {
                self.values[p] = diag;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let s = &self.sym;
        (0..s.n)
            .map(|i| (s.row_ptr[i]..s.row_ptr[i + 1]).map(|p| self.values[p] * x[s.cols[p]]).sum())
            .collect()
    }

    /// Numeric LDL^T factorization in the symbolic ordering.
    pub fn factor(&self) -> Result<LdlFactor, LinalgError> {
        let s = &*self.sym;
        let n = s.n;
        let nnz = s.factor_nnz();
        let mut l_idx = vec![0usize; nnz];
        let mut l_val = vec![0.0; nnz];
        let mut d = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            y[k] = 0.0;
            let mut top = n;
            flag[k] = k;
            let kk = s.perm[k];
            for p in s.row_ptr[kk]..s.row_ptr[kk + 1] {
                let mut i = s.pinv[s.cols[p]];
                if i <= k {
                    y[i] += self.values[p];
                    let mut len = 0;
                    while flag[i] != k {
                        pattern[len] = i;
                        len += 1;
                        flag[i] = k;
                        i = s.parent[i].expect("elimination tree parent");
                    }
                    while len > 0 {
                        top -= 1;
                        len -= 1;
                        pattern[top] = pattern[len];
                    }
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            while top < n {
                let i = pattern[top];
                top += 1;
                let yi = y[i];
                y[i] = 0.0;
                let p2 = s.l_ptr[i] + lnz[i];
                for p in s.l_ptr[i]..p2 {
                    y[l_idx[p]] -= l_val[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                l_idx[p2] = k;
                l_val[p2] = l_ki;
                lnz[i] += 1;
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(LinalgError::ZeroPivot(s.perm[k]));
            }
        }
        Ok(LdlFactor { sym: Arc::clone(&self.sym), l_idx, l_val, d })
    }
}

/// `P A P^T = L D L^T` with unit lower-triangular `L`.
#[derive(Clone, Debug)]
pub struct LdlFactor {
    sym: Arc<Symbolic>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    /// Fails unless every pivot is positive.
    pub fn check_positive(&self) -> Result<(), LinalgError> {
        match self.d.iter().position(|&v| !(v > 0.0)) {
            Some(k) => Err(LinalgError::NotPositiveDefinite { column: self.sym.perm[k], pivot: self.d[k] }),
            None => Ok(()),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = &*self.sym;
        let n = s.n;
        assert_eq!(b.len(), n, "right-hand side length mismatch");
        let mut x: Vec<f64> = (0..n).map(|k| b[s.perm[k]]).collect();
        for j in 0..n {
            let xj = x[j];
            for p in s.l_ptr[j]..s.l_ptr[j + 1] {
                x[self.l_idx[p]] -= self.l_val[p] * xj;
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut xj = x[j];
            for p in s.l_ptr[j]..s.l_ptr[j + 1] {
                xj -= self.l_val[p] * x[self.l_idx[p]];
            }
            x[j] = xj;
        }
        let mut out = vec![0.0; n];
        for k in 0..n {
            out[s.perm[k]] = x[k];
        }
        out
    }
}

/// Solve `A x = b` with a fresh factorization plus `refine` steps of iterative
/// refinement; returns the solution and the final residual max-norm.
pub fn solve_refined(a: &SymMatrix, b: &[f64], refine: usize) -> Result<(Vec<f64>, f64), LinalgError> {
    let f = a.factor()?;
    let mut x = f.solve(b);
    let mut res = residual(a, &x, b);
    for _ in 0..refine {
        let dx = f.solve(&res);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        res = residual(a, &x, b);
    }
    let rmax = res.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok((x, rmax))
}

fn residual(a: &SymMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.mul_vec(x);
    b.iter().zip(&ax).map(|(b, ax)| b - ax).collect()
}
