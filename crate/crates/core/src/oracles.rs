//! Exact solutions and one-dimensional transport references.
//!
//! In one dimension the Wasserstein distance is the `L^2` distance between
//! quantile functions, so extrapolations reduce to operations on sorted
//! samples: free flow sorts the linearly extrapolated quantiles, while the
//! metric extrapolation projects them onto the monotone cone.

use std::f64::consts::PI;

use thiserror::Error;

use crate::mesh::{CellField, Mesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("sample counts differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("density has no mass")]
    ZeroMass,
    #[error("quantile oracles need a one-dimensional mesh")]
    NotOneDimensional,
    #[error("extrapolation parameter must exceed 1, got {0}")]
    Alpha(f64),
}

/// Exact Fokker-Planck solution on `[0, 1]` with potential `V(x) = -g x`.
pub fn fp_exact(t: f64, x: f64, g: f64) -> f64 {
    (-(PI * PI + g * g / 4.0) * t + g * x / 2.0).exp() * (PI * (PI * x).cos() + g / 2.0 * (PI * x).sin())
        + PI * (g * (x - 0.5)).exp()
}

/// Unit-mass Barenblatt profile of the porous-medium equation in dimension `d`.
pub fn barenblatt(t: f64, x: [f64; 2], delta: f64, d: usize, x0: [f64; 2]) -> f64 {
    assert!(t > 0.0, "Barenblatt profile needs t > 0");
    assert!(delta > 1.0, "Barenblatt profile needs delta > 1");
    let df = d as f64;
    let lambda = barenblatt_lambda(delta, d);
    let m = barenblatt_m(delta, d);
    let r2: f64 = (0..d).map(|a| (x[a] - x0[a]).powi(2)).sum();
    let core = (m - 0.5 * lambda * r2 / t.powf(2.0 * lambda)).max(0.0);
    t.powf(-df * lambda) * ((delta - 1.0) / delta).powf(1.0 / (delta - 1.0)) * core.powf(1.0 / (delta - 1.0))
}

pub fn barenblatt_lambda(delta: f64, d: usize) -> f64 {
    1.0 / (d as f64 * (delta - 1.0) + 2.0)
}

/// The constant giving unit mass in two dimensions.
pub fn barenblatt_m(delta: f64, d: usize) -> f64 {
    let lambda = barenblatt_lambda(delta, d);
    (delta / (delta - 1.0)).powf(1.0 / delta) * (lambda * delta / (2.0 * PI * (delta - 1.0))).powf((delta - 1.0) / delta)
}

/// Support radius of the Barenblatt profile at time `t`.
pub fn barenblatt_radius(t: f64, delta: f64, d: usize) -> f64 {
    let lambda = barenblatt_lambda(delta, d);
    (2.0 * barenblatt_m(delta, d) / lambda).sqrt() * t.powf(lambda)
}

/// Quantile function of a piecewise-constant density at `samples` midpoint mass levels.
pub fn quantiles_1d(mesh: &Mesh, rho: &[f64], samples: usize) -> Result<Vec<f64>, OracleError> {
    if mesh.dim() != 1 {
        return Err(OracleError::NotOneDimensional);
    }
    assert_eq!(rho.len(), mesh.n_cells(), "density length mismatch");
    let masses: Vec<f64> = rho.iter().zip(mesh.measures()).map(|(r, m)| r.max(0.0) * m).collect();
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(OracleError::ZeroMass);
    }
    let mut out = Vec::with_capacity(samples);
    let mut k = 0;
    let mut below = 0.0;
    for j in 0..samples {
        let level = (j as f64 + 0.5) / samples as f64 * total;
        while k + 1 < masses.len() && below + masses[k] < level {
            below += masses[k];
            k += 1;
        }
        let left = mesh.centers()[k][0] - 0.5 * mesh.measures()[k];
        let frac = if masses[k] > 0.0 { ((level - below) / masses[k]).clamp(0.0, 1.0) } else { 0.5 };
        out.push(left + frac * mesh.measures()[k]);
    }
    Ok(out)
}

/// Cell densities of the measure whose sorted quantile samples are `q`, with total `mass`.
///
/// The quantile function is taken piecewise linear between samples, so the
/// cell masses are differences of its inverse at the cell faces.
pub fn density_from_quantiles(mesh: &Mesh, q: &[f64], mass: f64) -> CellField {
    let m = q.len() as f64;
    let cdf = |x: f64| {
        let j = q.partition_point(|&v| v <= x);
        if j == 0 {
            0.0
        } else if j == q.len() {
            1.0
        } else {
            (j as f64 - 0.5 + (x - q[j - 1]) / (q[j] - q[j - 1])) / m
        }
    };
    mesh.centers()
        .iter()
        .zip(mesh.measures())
        .map(|(c, &h)| mass * (cdf(c[0] + 0.5 * h) - cdf(c[0] - 0.5 * h)) / h)
        .collect()
}

/// Discrete `L^2` distance between quantile samples.
pub fn w2_1d(q0: &[f64], q1: &[f64]) -> Result<f64, OracleError> {
    same_len(q0, q1)?;
    let s: f64 = q0.iter().zip(q1).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((s / q0.len() as f64).sqrt())
}

/// Metric extrapolation: monotone projection of `alpha q1 - beta q0`.
pub fn metric_extrapolation_1d(q0: &[f64], q1: &[f64], alpha: f64) -> Result<Vec<f64>, OracleError> {
    Ok(pav(&linear_extrapolation(q0, q1, alpha)?))
}

/// Free-flow extrapolation: particles move on straight lines, then are re-sorted.
pub fn free_flow_1d(q0: &[f64], q1: &[f64], alpha: f64) -> Result<Vec<f64>, OracleError> {
    let mut y = linear_extrapolation(q0, q1, alpha)?;
    y.sort_by(f64::total_cmp);
    Ok(y)
}

fn linear_extrapolation(q0: &[f64], q1: &[f64], alpha: f64) -> Result<Vec<f64>, OracleError> {
    same_len(q0, q1)?;
    if !(alpha > 1.0) {
        return Err(OracleError::Alpha(alpha));
    }
    let beta = alpha - 1.0;
    Ok(q0.iter().zip(q1).map(|(a, b)| alpha * b - beta * a).collect())
}

fn same_len(a: &[f64], b: &[f64]) -> Result<(), OracleError> {
    if a.len() != b.len() {
        return Err(OracleError::SizeMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Pool-adjacent-violators: least-squares projection onto nondecreasing sequences.
pub fn pav(y: &[f64]) -> Vec<f64> {
    // Blocks of (sum, count).
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 <= s1 / c1 as f64 {
                break;
            }
            blocks.pop();
            let last = blocks.len() - 1;
            blocks[last] = (s0 + s1, c0 + c1);
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for (s, c) in blocks {
        out.extend(std::iter::repeat_n(s / c as f64, c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Exhaustive monotone projection: every partition into consecutive blocks
    /// with block means as values, keeping the best feasible one.
    fn brute_force_monotone(y: &[f64]) -> Vec<f64> {
        let m = y.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << (m - 1)) {
            let mut g = Vec::with_capacity(m);
            let mut start = 0;
            for i in 0..m {
                if i == m - 1 || mask & (1 << i) != 0 {
                    let mean = y[start..=i].iter().sum::<f64>() / (i + 1 - start) as f64;
                    g.extend(std::iter::repeat_n(mean, i + 1 - start));
                    start = i + 1;
                }
            }
            if g.windows(2).any(|w| w[0] > w[1] + 1e-15) {
                continue;
            }
            let sse: f64 = g.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(b, _)| sse < *b) {
                best = Some((sse, g));
            }
        }
        best.expect("the all-pooled partition is feasible").1
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn fp_exact_hand_value_and_mass() {
        assert_relative_eq!(fp_exact(0.0, 0.0, 1.0), PI + PI * (-0.5f64).exp(), epsilon = 1e-14);
        let m0 = simpson(|x| fp_exact(0.0, x, 1.0), 0.0, 1.0, 2000);
        for t in [0.1, 0.25] {
            let mt = simpson(|x| fp_exact(t, x, 1.0), 0.0, 1.0, 2000);
            assert!((mt - m0).abs() < 1e-10, "{mt} vs {m0}");
        }
        assert!((fp_exact(20.0, 0.3, 0.0) - PI).abs() < 1e-12);
    }

    #[test]
    fn fp_exact_solves_the_equation() {
        // d_t rho = d_xx rho + d_x(rho V'), V = -g x
        let g = 1.0;
        for &(t, x) in &[(0.01, 0.2), (0.1, 0.5), (0.2, 0.9), (0.05, 0.37)] {
            let (ht, hx) = (1e-5, 1e-4);
            let dt = (fp_exact(t + ht, x, g) - fp_exact(t - ht, x, g)) / (2.0 * ht);
            let dxx = (fp_exact(t, x + hx, g) - 2.0 * fp_exact(t, x, g) + fp_exact(t, x - hx, g)) / (hx * hx);
            let dx = (fp_exact(t, x + hx, g) - fp_exact(t, x - hx, g)) / (2.0 * hx);
            let residual = dt - dxx + g * dx;
            assert!(residual.abs() < 1e-6 * (1.0 + dt.abs()) + 1e-5, "residual {residual}");
        }
    }

    #[test]
    fn fp_exact_has_no_flux_at_boundary() {
        for t in [0.0, 0.1] {
            for x in [0.0, 1.0] {
                let h = 1e-6;
                let dx = (fp_exact(t, x + h, 1.0) - fp_exact(t, x - h, 1.0)) / (2.0 * h);
                assert!((dx - fp_exact(t, x, 1.0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn barenblatt_unit_mass_and_scaling() {
        for delta in [2.0, 3.0, 4.0] {
            let t = 1e-4;
            let r = barenblatt_radius(t, delta, 2);
            // mass = pi * int f d(r^2); r^2 = R^2 (1 - y^6) removes the edge singularity
            let radial = |y: f64| {
                let r2 = r * r * (1.0 - y.powi(6));
                PI * barenblatt(t, [0.5 + r2.sqrt(), 0.5], delta, 2, [0.5, 0.5]) * r * r * 6.0 * y.powi(5)
            };
            let mass = simpson(radial, 0.0, 1.0, 4000);
            assert!((mass - 1.0).abs() < 1e-8, "delta {delta}: mass {mass}");
            let lambda = barenblatt_lambda(delta, 2);
            assert_relative_eq!(barenblatt_radius(2.0 * t, delta, 2) / r, 2f64.powf(lambda), epsilon = 1e-10);
            let peak = barenblatt(t, [0.5, 0.5], delta, 2, [0.5, 0.5]);
            assert!(barenblatt(t, [0.5 + 0.3 * r, 0.5], delta, 2, [0.5, 0.5]) < peak);
            assert_eq!(barenblatt(t, [0.5 + 1.01 * r, 0.5], delta, 2, [0.5, 0.5]), 0.0);
        }
    }

    #[test]
    fn quantile_basics() {
        let mesh = Mesh::interval(10, 0.0, 1.0).unwrap();
        let q = quantiles_1d(&mesh, &[1.0; 10], 100).unwrap();
        for (j, x) in q.iter().enumerate() {
            assert!((x - (j as f64 + 0.5) / 100.0).abs() < 1e-12);
        }
        let mut spike = vec![0.0; 10];
        spike[3] = 5.0;
        let q = quantiles_1d(&mesh, &spike, 50).unwrap();
        assert!(q.iter().all(|&x| (0.3..=0.4).contains(&x)));
        assert_eq!(quantiles_1d(&mesh, &[0.0; 10], 10), Err(OracleError::ZeroMass));
        let two_d = Mesh::cartesian(2, 2, (0.0, 1.0), (0.0, 1.0)).unwrap();
        assert_eq!(quantiles_1d(&two_d, &[1.0; 4], 10), Err(OracleError::NotOneDimensional));
    }

    #[test]
    fn quantile_round_trip() {
        let mesh = Mesh::interval(20, 0.0, 1.0).unwrap();
        let rho = mesh.sample(|x| 1.0 + (5.0 * x[0]).sin().powi(2));
        let mass = mesh.mass(&rho);
        let q = quantiles_1d(&mesh, &rho, 10_000).unwrap();
        let back = density_from_quantiles(&mesh, &q, mass);
        for k in 0..20 {
            let m = mesh.measures()[k];
            assert!((back[k] * m - rho[k] * m).abs() < 1e-4);
        }
    }

    #[test]
    fn w2_closed_forms() {
        let q: Vec<f64> = (0..1000).map(|j| (j as f64 + 0.5) / 1000.0).collect();
        assert_eq!(w2_1d(&q, &q).unwrap(), 0.0);
        let shifted: Vec<f64> = q.iter().map(|x| x + 0.3).collect();
        assert_relative_eq!(w2_1d(&q, &shifted).unwrap(), 0.3, epsilon = 1e-12);
        let doubled: Vec<f64> = q.iter().map(|x| 2.0 * x).collect();
        assert_relative_eq!(w2_1d(&q, &doubled).unwrap(), 1.0 / 3f64.sqrt(), epsilon = 1e-6);
        assert_eq!(w2_1d(&q, &q[1..]), Err(OracleError::SizeMismatch(1000, 999)));
    }

    #[test]
    fn crossing_pair() {
        let q0 = [-1.0, 1.0];
        let q1 = [0.0, 0.0];
        assert_eq!(free_flow_1d(&q0, &q1, 2.0).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(metric_extrapolation_1d(&q0, &q1, 2.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn monotone_extrapolation_is_linear() {
        let q0 = [0.0, 0.1, 0.2];
        let q1 = [0.1, 0.2, 0.3];
        let e = metric_extrapolation_1d(&q0, &q1, 4.0 / 3.0).unwrap();
        let f = free_flow_1d(&q0, &q1, 4.0 / 3.0).unwrap();
        for j in 0..3 {
            assert_relative_eq!(e[j], q1[j] + 0.1 / 3.0, epsilon = 1e-14);
            assert_eq!(e[j], f[j]);
        }
        for (a, b) in metric_extrapolation_1d(&q0, &q0, 1.5).unwrap().iter().zip(q0) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(metric_extrapolation_1d(&q0, &q1, 1.0), Err(OracleError::Alpha(1.0)));
    }

    fn sorted(v: Vec<f64>) -> Vec<f64> {
        let mut v = v;
        v.sort_by(f64::total_cmp);
        v
    }

    proptest! {
        #[test]
        fn pav_matches_brute_force(y in proptest::collection::vec(-5.0f64..5.0, 1..=12)) {
            let a = pav(&y);
            let b = brute_force_monotone(&y);
            prop_assert!(a.windows(2).all(|w| w[0] <= w[1]));
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }

        #[test]
        fn extrapolations_are_dissipative(
            a in proptest::collection::vec(-3.0f64..3.0, 2..=40),
            b in proptest::collection::vec(-3.0f64..3.0, 2..=40),
            alpha in 1.01f64..2.0,
        ) {
            let m = a.len().min(b.len());
            let q0 = sorted(a[..m].to_vec());
            let q1 = sorted(b[..m].to_vec());
            let beta = alpha - 1.0;
            let d = w2_1d(&q0, &q1).unwrap();
            let metric = metric_extrapolation_1d(&q0, &q1, alpha).unwrap();
            prop_assert!(metric.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(w2_1d(&q1, &metric).unwrap() <= beta * d + 1e-12);
            let free = free_flow_1d(&q0, &q1, alpha).unwrap();
            prop_assert!(w2_1d(&q1, &free).unwrap() <= beta * d + 1e-12);
        }
    }
}
