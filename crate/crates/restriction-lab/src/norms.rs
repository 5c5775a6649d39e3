//! `L^p` norms on grids, exact torus mean values of the curve's exponential
//! sums, the brute-force solution-counting oracle, and log-log exponent fits.
//!
//! For even `p = 2s` the torus norm `||S||_{2s}^{2s}` of
//! `S(x) = sum_n a_n e(x1 n + x2 n^d)` is a trigonometric polynomial average,
//! so sampling on a `(2sN+1) x (2sN^d+1)` grid is exact quadrature, not an
//! approximation. With unit coefficients the same number counts solutions of
//! `sum n_i = sum m_i`, `sum n_i^d = sum m_i^d`, which the independent
//! meet-in-the-middle oracle [`vinogradov_count`] enumerates directly.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::geom::Domain;

/// One mean-value instance: `N` terms, curve exponent `d`, moment `p = 2s`,
/// and the coefficient vector.
#[derive(Debug, Clone)]
pub struct MeanValueProblem {
    pub terms: usize,
    pub curve_exponent: u32,
    pub half_power: u32,
    pub coefficients: Vec<Complex64>,
}

impl MeanValueProblem {
    /// Unit-coefficient instance (`a_n = 1`).
    pub fn unit(terms: usize, curve_exponent: u32, half_power: u32) -> Result<Self> {
        Self::new(terms, curve_exponent, half_power, vec![Complex64::new(1.0, 0.0); terms])
    }

    pub fn new(
        terms: usize,
        curve_exponent: u32,
        half_power: u32,
        coefficients: Vec<Complex64>,
    ) -> Result<Self> {
        if terms < 1 {
            return Err(Error::validation("need at least one term"));
        }
        if curve_exponent < 3 {
            return Err(Error::validation("curve exponent must be an integer >= 3"));
        }
        if half_power < 1 {
            return Err(Error::validation("half power s must be >= 1"));
        }
        if coefficients.len() != terms {
            return Err(Error::validation(format!(
                "coefficient count {} does not match N = {}",
                coefficients.len(),
                terms
            )));
        }
        Ok(MeanValueProblem { terms, curve_exponent, half_power, coefficients })
    }
}

/// Riemann-sum `L^p` norm of a field over a ball or box:
/// `(sum |f(x)|^p h^2)^(1/p)` over grid points inside the domain.
pub fn lp_norm(field: &Field, p: f64, domain: &Domain) -> Result<f64> {
    if p < 1.0 {
        return Err(Error::validation(format!("p must be >= 1, got {p}")));
    }
    let h = field.spacing;
    let mut acc = 0.0f64;
    let mut hits = 0usize;
    for iy in 0..field.ny {
        for ix in 0..field.nx {
            let x = field.point(ix, iy);
            if domain.contains(x) {
                hits += 1;
                acc += field.at(ix, iy).norm().powf(p);
            }
        }
    }
    if hits == 0 {
        return Err(Error::validation("domain does not intersect the field grid"));
    }
    Ok((acc * h * h).powf(1.0 / p))
}

/// Exact `||S||_{L^{2s}(T^2)}^{2s}` for the exponential sum of `prob`.
///
/// Refuses odd or non-even moments: the exactness guarantee only exists for
/// `p = 2s`. The memory budget caps the quadrature grid.
pub fn exp_sum_lp_torus(prob: &MeanValueProblem) -> Result<f64> {
    exp_sum_lp_torus_on_grid(prob, 0, 0)
}

/// Same as [`exp_sum_lp_torus`] with explicit grid sizes (0 means the exact
/// minimum); larger grids must not change the value.
pub fn exp_sum_lp_torus_on_grid(prob: &MeanValueProblem, k1: usize, k2: usize) -> Result<f64> {
    let n = prob.terms;
    let s = prob.half_power as usize;
    let d = prob.curve_exponent;
    let nd = (n as u64).pow(d);
    let k1 = if k1 == 0 { 2 * s * n + 1 } else { k1 };
    let k2 = if k2 == 0 { (2 * s as u64 * nd + 1) as usize } else { k2 };
    if k1 < 2 * s * n + 1 || (k2 as u64) < 2 * s as u64 * nd + 1 {
        return Err(Error::validation(
            "quadrature grid below the exactness threshold".to_string(),
        ));
    }
    let budget: usize = 1 << 28; // table + row storage stays in the low hundreds of MB
    if k2.checked_mul(k1).map_or(true, |v| v > budget) {
        return Err(Error::budget(format!(
            "quadrature grid {k1} x {k2} exceeds the configured budget"
        )));
    }

    // Exact twiddle tables: S(k, l) = sum_n a_n w1[(n k) mod K1] w2[(n^d l) mod K2].
    let table1 = roots_of_unity(k1);
    let table2 = roots_of_unity(k2);
    let n_mod1: Vec<usize> = (1..=n).map(|v| v % k1).collect();
    let nd_mod2: Vec<usize> = (1..=n as u64)
        .map(|v| (v.pow(d) % k2 as u64) as usize)
        .collect();

    let total: f64 = (0..k1)
        .into_par_iter()
        .map(|k| {
            // Coefficients premultiplied by the x1 phase for this row.
            let row_coeff: Vec<Complex64> = (0..n)
                .map(|i| prob.coefficients[i] * table1[(n_mod1[i] * k) % k1])
                .collect();
            let mut row_sum = 0.0f64;
            let mut idx: Vec<usize> = vec![0; n];
            for l in 0..k2 {
                let mut s_val = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    s_val += row_coeff[i] * table2[idx[i]];
                    idx[i] += nd_mod2[i];
                    if idx[i] >= k2 {
                        idx[i] -= k2;
                    }
                }
                let _ = l;
                row_sum += s_val.norm_sqr().powi(s as i32);
            }
            row_sum
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();

    Ok(total / (k1 as f64 * k2 as f64))
}

fn roots_of_unity(k: usize) -> Vec<Complex64> {
    (0..k)
        .map(|j| {
            let t = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
            Complex64::new(t.cos(), t.sin())
        })
        .collect()
}

/// Count solutions of `sum n_i = sum m_i` and `sum n_i^d = sum m_i^d` with
/// all variables in `1..=N`, `s` variables per side, by hashing the s-fold
/// (sum, power-sum) pairs and summing squared multiplicities.
pub fn vinogradov_count(n: usize, s: u32, d: u32) -> Result<u64> {
    if n < 1 || s < 1 || d < 1 {
        return Err(Error::validation("need n, s, d >= 1"));
    }
    let tuples = (n as u128).pow(s);
    if tuples.saturating_mul(s as u128) > 200_000_000 {
        return Err(Error::budget(format!(
            "enumeration of {tuples} tuples exceeds the budget"
        )));
    }
    let mut counts: std::collections::HashMap<(u64, u64), u64> = std::collections::HashMap::new();
    let mut stack = vec![1usize; s as usize];
    loop {
        let sum: u64 = stack.iter().map(|&v| v as u64).sum();
        let pow: u64 = stack.iter().map(|&v| (v as u64).pow(d)).sum();
        *counts.entry((sum, pow)).or_insert(0) += 1;
        // Odometer over {1..N}^s.
        let mut pos = 0;
        loop {
            if pos == s as usize {
                return Ok(counts.values().map(|&c| c * c).sum());
            }
            stack[pos] += 1;
            if stack[pos] <= n {
                break;
            }
            stack[pos] = 1;
            pos += 1;
        }
    }
}

/// A fitted power law through positive (scale, value) points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentFit {
    pub points: Vec<(f64, f64)>,
    /// Slope of the least-squares line through (log scale, log value).
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

/// Least-squares power-law fit; the slope is the empirical exponent.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<ExponentFit> {
    if points.len() < 2 {
        return Err(Error::validation("need at least two points to fit"));
    }
    for &(x, y) in points {
        if !(x > 0.0 && y > 0.0) {
            return Err(Error::validation(format!(
                "nonpositive point ({x}, {y}) in exponent fit"
            )));
        }
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::validation("degenerate abscissae in exponent fit"));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let residual = (logs
        .iter()
        .map(|&(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(ExponentFit { points: points.to_vec(), slope, intercept, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain grid-free brute force over all 2s-tuples; the independent
    /// oracle for the oracle.
    fn brute_force_count(n: usize, s: u32, d: u32) -> u64 {
        let s = s as usize;
        let mut count = 0u64;
        let total = (n as u64).pow(2 * s as u32);
        for code in 0..total {
            let mut c = code;
            let mut vals = vec![0u64; 2 * s];
            for v in vals.iter_mut() {
                *v = c % n as u64 + 1;
                c /= n as u64;
            }
            let (ln, rn): (u64, u64) = (
                vals[..s].iter().sum(),
                vals[s..].iter().sum(),
            );
            let (lp, rp): (u64, u64) = (
                vals[..s].iter().map(|&v| v.pow(d)).sum(),
                vals[s..].iter().map(|&v| v.pow(d)).sum(),
            );
            if ln == rn && lp == rp {
                count += 1;
            }
        }
        count
    }

    #[test]
    fn count_s1_is_diagonal() {
        for n in [1, 2, 5, 9] {
            assert_eq!(vinogradov_count(n, 1, 3).unwrap(), n as u64);
        }
    }

    #[test]
    fn count_matches_exhaustive_small() {
        assert_eq!(vinogradov_count(2, 2, 3).unwrap(), 6);
        assert_eq!(brute_force_count(2, 2, 3), 6);
        assert_eq!(vinogradov_count(3, 2, 3).unwrap(), 15);
        assert_eq!(brute_force_count(3, 2, 3), 15);
        assert_eq!(vinogradov_count(8, 2, 3).unwrap(), 120);
        assert_eq!(brute_force_count(3, 3, 3), vinogradov_count(3, 3, 3).unwrap());
    }

    #[test]
    fn count_closed_form_quartic_pairs() {
        // For s = 2 and d >= 2 only multiset-equal solutions exist: 2N^2 - N.
        for n in [2usize, 5, 12, 32] {
            let expect = (2 * n * n - n) as u64;
            assert_eq!(vinogradov_count(n, 2, 3).unwrap(), expect);
            assert_eq!(vinogradov_count(n, 2, 4).unwrap(), expect);
        }
    }

    #[test]
    fn count_diagonal_lower_bound() {
        for (n, s, d) in [(4, 2, 3), (5, 3, 3), (6, 2, 4)] {
            let diag = (n as u64).pow(s);
            assert!(vinogradov_count(n, s, d).unwrap() >= diag);
        }
    }

    #[test]
    fn count_budget_refusal() {
        assert!(matches!(
            vinogradov_count(100_000, 3, 3),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn torus_parseval_s1() {
        for (n, d) in [(2usize, 3u32), (5, 3), (7, 4)] {
            let prob = MeanValueProblem::unit(n, d, 1).unwrap();
            let v = exp_sum_lp_torus(&prob).unwrap();
            assert!((v - n as f64).abs() < 1e-9, "N={n} d={d}: {v}");
        }
    }

    #[test]
    fn torus_matches_counting_fixtures() {
        let p = MeanValueProblem::unit(3, 3, 2).unwrap();
        assert!((exp_sum_lp_torus(&p).unwrap() - 15.0).abs() < 1e-8);
        let p = MeanValueProblem::unit(2, 3, 2).unwrap();
        assert!((exp_sum_lp_torus(&p).unwrap() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn torus_grid_doubling_is_stable() {
        let prob = MeanValueProblem::unit(4, 3, 2).unwrap();
        let base = exp_sum_lp_torus(&prob).unwrap();
        let k1 = 2 * 2 * 4 + 1;
        let k2 = 2 * 2 * 64 + 1;
        let wide = exp_sum_lp_torus_on_grid(&prob, 2 * k1, k2).unwrap();
        let tall = exp_sum_lp_torus_on_grid(&prob, k1, 2 * k2).unwrap();
        assert!((wide - base).abs() / base < 1e-10);
        assert!((tall - base).abs() / base < 1e-10);
    }

    #[test]
    fn torus_with_nonunit_coefficients() {
        // Parseval with arbitrary coefficients at s = 1.
        let coeffs = vec![
            Complex64::new(0.3, -1.2),
            Complex64::new(2.0, 0.5),
            Complex64::new(-0.7, 0.1),
        ];
        let expect: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        let prob = MeanValueProblem::new(3, 3, 1, coeffs).unwrap();
        assert!((exp_sum_lp_torus(&prob).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn fit_exact_power_law() {
        let f = fit_exponent(&[(2.0, 4.0), (4.0, 16.0), (8.0, 64.0)]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn fit_flat_line() {
        let f = fit_exponent(&[(2.0, 3.7), (4.0, 3.7)]).unwrap();
        assert!(f.slope.abs() < 1e-12);
    }

    #[test]
    fn fit_three_halves_decay() {
        let f = fit_exponent(&[(2.0, 1.0), (4.0, 0.3536), (8.0, 0.125)]).unwrap();
        assert!((f.slope + 1.5).abs() < 1e-3, "slope {}", f.slope);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_exponent(&[(2.0, 4.0)]).is_err());
        assert!(fit_exponent(&[(2.0, 4.0), (4.0, -1.0)]).is_err());
        assert!(fit_exponent(&[(0.0, 4.0), (4.0, 1.0)]).is_err());
    }
}
