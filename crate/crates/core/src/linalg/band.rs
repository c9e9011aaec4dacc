//! Banded LU with partial pivoting, for the small indefinite systems of the
//! naive BDF2 step.

use super::LinalgError;

/// General square band matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row-major storage of width `kl + ku + kl + 1`; row `i` covers columns
    /// `i - kl ..= i + ku + kl` (the extra `kl` absorbs pivoting fill).
    width: usize,
    data: Vec<f64>,
    piv: Vec<usize>,
    factored: bool,
}

impl BandLu {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> BandLu {
        let width = 2 * kl + ku + 1;
        BandLu { n, kl, ku, width, data: vec![0.0; n * width], piv: vec![0; n], factored: false }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width + (j + self.kl - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(!self.factored);
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside band");
        let p = self.at(i, j);
        self.data[p] += v;
    }

    /// Zero row `i` and put `diag` on its diagonal.
    pub fn set_identity_row(&mut self, i: usize, diag: f64) {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku + self.kl).min(self.n - 1);
        for j in lo..=hi {
            let p = self.at(i, j);
            self.data[p] = 0.0;
        }
        let p = self.at(i, i);
        self.data[p] = diag;
    }

    pub fn factor(&mut self) -> Result<(), LinalgError> {
        let n = self.n;
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.at(k, k)].abs();
            for i in k + 1..=last {
                let v = self.data[self.at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(LinalgError::Singular(k));
            }
            self.piv[k] = p;
            let jmax = (k + self.ku + self.kl).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (a, b) = (self.at(k, j), self.at(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.at(k, k)];
            for i in k + 1..=last {
                let ik = self.at(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let kj = self.data[self.at(k, j)];
                        let ij = self.at(i, j);
                        self.data[ij] -= l * kj;
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert!(self.factored, "factor() must be called first");
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let last = (k + self.kl).min(n - 1);
            for i in k + 1..=last {
                x[i] -= self.data[self.at(i, k)] * x[k];
            }
        }
        for k in (0..n).rev() {
            let jmax = (k + self.ku + self.kl).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=jmax {
                s -= self.data[self.at(k, j)] * x[j];
            }
            x[k] = s / self.data[self.at(k, k)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_with_pivoting() {
        // [[0, 1, 0], [2, 1, 1], [0, 3, 4]] needs a row swap at k = 0.
        let mut a = BandLu::zeros(3, 1, 1);
        a.add(0, 1, 1.0);
        a.add(1, 0, 2.0);
        a.add(1, 1, 1.0);
        a.add(1, 2, 1.0);
        a.add(2, 1, 3.0);
        a.add(2, 2, 4.0);
        a.factor().unwrap();
        let x = a.solve(&[1.0, 5.0, 11.0]);
        let expect = [1.0, 1.0, 2.0];
        for (u, v) in x.iter().zip(expect) {
            assert!((u - v).abs() < 1e-14, "{x:?}");
        }
    }

    #[test]
    fn singular_detected() {
        let mut a = BandLu::zeros(2, 1, 1);
        a.add(0, 0, 1.0);
        a.add(0, 1, 1.0);
        a.add(1, 0, 1.0);
        a.add(1, 1, 1.0);
        assert!(a.factor().is_err());
    }
}
