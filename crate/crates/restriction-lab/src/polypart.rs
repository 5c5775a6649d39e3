//! Polynomial partitioning: bisection of mass families by sign of a
//! bivariate polynomial, the iterated cell decomposition with its factor-2
//! mass guarantee, the wall (a neighborhood of the zero set), and
//! tube-versus-cell incidence counts.
//!
//! The bisecting polynomial is found by seeded multi-start Gauss-Newton on
//! the coefficient sphere: the hard sign counts are smoothed by a tanh
//! profile whose temperature anneals toward zero, and each stage solves the
//! small m x m normal system of the per-mass imbalances. Existence is
//! guaranteed by the ham-sandwich argument; the search only has to land
//! within the stated imbalance tolerance, not at the exact zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{AxisBox, Vec2};
use crate::tiles::Tube;

/// A real bivariate polynomial of bounded total degree, coefficients in
/// graded order (degree 0, then 1, ...; within a degree, decreasing power
/// of x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial2 {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

/// Number of monomials of total degree <= `degree`.
pub fn poly_dim(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// Graded monomial exponents `(a, b)` for degree bound `degree`, in
/// coefficient order.
pub fn monomials(degree: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(poly_dim(degree));
    for t in 0..=degree {
        for a in (0..=t).rev() {
            out.push((a, t - a));
        }
    }
    out
}

impl Polynomial2 {
    pub fn new(degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != poly_dim(degree) {
            return Err(Error::validation(format!(
                "degree {degree} needs {} coefficients, got {}",
                poly_dim(degree),
                coeffs.len()
            )));
        }
        Ok(Polynomial2 { degree, coeffs })
    }

    pub fn zero(degree: usize) -> Self {
        Polynomial2 { degree, coeffs: vec![0.0; poly_dim(degree)] }
    }

    /// Build from explicit `(x power, y power, coefficient)` terms.
    pub fn from_terms(degree: usize, terms: &[(usize, usize, f64)]) -> Result<Self> {
        let mut p = Polynomial2::zero(degree);
        let mono = monomials(degree);
        for &(a, b, c) in terms {
            let idx = mono
                .iter()
                .position(|&(x, y)| x == a && y == b)
                .ok_or_else(|| Error::validation(format!("monomial x^{a} y^{b} out of range")))?;
            p.coeffs[idx] = c;
        }
        Ok(p)
    }

    pub fn random_unit(degree: usize, rng: &mut impl Rng) -> Self {
        let mut coeffs: Vec<f64> = (0..poly_dim(degree))
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let n = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        for c in coeffs.iter_mut() {
            *c /= n;
        }
        Polynomial2 { degree, coeffs }
    }

    pub fn coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Rescale to the unit coefficient sphere; `Z(P)` is scale-invariant.
    pub fn normalized(&self) -> Polynomial2 {
        let n = self.coeff_norm();
        Polynomial2 {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c / n).collect(),
        }
    }

    pub fn eval(&self, p: Vec2) -> f64 {
        let mut xp = [0.0f64; 32];
        let mut yp = [0.0f64; 32];
        powers(p.x, self.degree, &mut xp);
        powers(p.y, self.degree, &mut yp);
        let mut acc = 0.0;
        let mut idx = 0;
        for t in 0..=self.degree {
            for a in (0..=t).rev() {
                acc += self.coeffs[idx] * xp[a] * yp[t - a];
                idx += 1;
            }
        }
        acc
    }

    pub fn gradient(&self, p: Vec2) -> Vec2 {
        let mut xp = [0.0f64; 32];
        let mut yp = [0.0f64; 32];
        powers(p.x, self.degree, &mut xp);
        powers(p.y, self.degree, &mut yp);
        let mut gx = 0.0;
        let mut gy = 0.0;
        let mut idx = 0;
        for t in 0..=self.degree {
            for a in (0..=t).rev() {
                let b = t - a;
                let c = self.coeffs[idx];
                if a > 0 {
                    gx += c * a as f64 * xp[a - 1] * yp[b];
                }
                if b > 0 {
                    gy += c * b as f64 * xp[a] * yp[b - 1];
                }
                idx += 1;
            }
        }
        Vec2::new(gx, gy)
    }

    pub fn multiply(&self, other: &Polynomial2) -> Polynomial2 {
        let degree = self.degree + other.degree;
        let mut out = Polynomial2::zero(degree);
        let index_of = |a: usize, b: usize| -> usize {
            let t = a + b;
            t * (t + 1) / 2 + (t - a)
        };
        for (i, &(a1, b1)) in monomials(self.degree).iter().enumerate() {
            if self.coeffs[i] == 0.0 {
                continue;
            }
            for (j, &(a2, b2)) in monomials(other.degree).iter().enumerate() {
                out.coeffs[index_of(a1 + a2, b1 + b2)] += self.coeffs[i] * other.coeffs[j];
            }
        }
        out
    }

    /// `self + k * other`, padded to the larger degree.
    pub fn add_scaled(&self, other: &Polynomial2, k: f64) -> Polynomial2 {
        let degree = self.degree.max(other.degree);
        let mut out = Polynomial2::zero(degree);
        for (i, &(a, b)) in monomials(self.degree).iter().enumerate() {
            let t = a + b;
            out.coeffs[t * (t + 1) / 2 + (t - a)] += self.coeffs[i];
        }
        for (i, &(a, b)) in monomials(other.degree).iter().enumerate() {
            let t = a + b;
            out.coeffs[t * (t + 1) / 2 + (t - a)] += k * other.coeffs[i];
        }
        out
    }
}

fn powers(x: f64, degree: usize, buf: &mut [f64; 32]) {
    buf[0] = 1.0;
    for i in 1..=degree {
        buf[i] = buf[i - 1] * x;
    }
}

/// A weighted point of a mass distribution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub pos: Vec2,
    pub weight: f64,
}

/// Either weighted points or a nonnegative density on a grid.
#[derive(Debug, Clone)]
pub enum MassDistribution {
    Points(Vec<WeightedPoint>),
    Density {
        origin: Vec2,
        spacing: f64,
        nx: usize,
        ny: usize,
        values: Vec<f64>,
    },
}

impl MassDistribution {
    pub fn uniform_square(domain: &AxisBox, per_axis: usize) -> MassDistribution {
        let sx = domain.width() / per_axis as f64;
        MassDistribution::Density {
            origin: domain.min,
            spacing: sx,
            nx: per_axis,
            ny: per_axis,
            values: vec![1.0; per_axis * per_axis],
        }
    }

    pub fn random_points(domain: &AxisBox, count: usize, rng: &mut impl Rng) -> MassDistribution {
        MassDistribution::Points(
            (0..count)
                .map(|_| WeightedPoint {
                    pos: Vec2::new(
                        rng.gen_range(domain.min.x..domain.max.x),
                        rng.gen_range(domain.min.y..domain.max.y),
                    ),
                    weight: 1.0,
                })
                .collect(),
        )
    }

    /// Flatten to weighted points (density cells become their centers).
    pub fn to_points(&self) -> Vec<WeightedPoint> {
        match self {
            MassDistribution::Points(p) => p.clone(),
            MassDistribution::Density { origin, spacing, nx, ny, values } => {
                let mut out = Vec::with_capacity(nx * ny);
                for iy in 0..*ny {
                    for ix in 0..*nx {
                        let w = values[iy * nx + ix];
                        if w > 0.0 {
                            out.push(WeightedPoint {
                                pos: Vec2::new(
                                    origin.x + (ix as f64 + 0.5) * spacing,
                                    origin.y + (iy as f64 + 0.5) * spacing,
                                ),
                                weight: w,
                            });
                        }
                    }
                }
                out
            }
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.to_points().iter().map(|p| p.weight).sum()
    }
}

#[derive(Debug, Clone)]
pub struct BisectConfig {
    /// Acceptable per-mass imbalance `|mu+ - mu-| / mu`.
    pub tolerance: f64,
    pub restarts: usize,
    /// Gauss-Newton steps per annealing stage.
    pub steps_per_stage: usize,
    /// Annealing stages (temperature shrinks by 0.3 each).
    pub stages: usize,
    pub seed: u64,
}

impl Default for BisectConfig {
    fn default() -> Self {
        BisectConfig { tolerance: 0.02, restarts: 8, steps_per_stage: 10, stages: 14, seed: 0 }
    }
}

/// Mass of `points` on each side of `{poly = 0}`. Points exactly on the
/// zero set count half to each side.
pub fn sign_split(poly: &Polynomial2, points: &[WeightedPoint]) -> (f64, f64) {
    let mut plus = 0.0;
    let mut minus = 0.0;
    for pt in points {
        let v = poly.eval(pt.pos);
        if v > 0.0 {
            plus += pt.weight;
        } else if v < 0.0 {
            minus += pt.weight;
        } else {
            plus += pt.weight / 2.0;
            minus += pt.weight / 2.0;
        }
    }
    (plus, minus)
}

/// Worst per-mass hard-sign imbalance of `poly` over the point sets.
pub fn max_imbalance(poly: &Polynomial2, sets: &[&[WeightedPoint]]) -> f64 {
    let mut worst = 0.0f64;
    for pts in sets {
        let (plus, minus) = sign_split(poly, pts);
        let total = plus + minus;
        if total > 0.0 {
            worst = worst.max((plus - minus).abs() / total);
        }
    }
    worst
}

/// Find a polynomial on the unit coefficient sphere whose sign bisects every
/// listed mass to within the configured imbalance.
///
/// Requires the polynomial space to be large enough: `dim(budget) - 1 >= m`.
/// On failure the best imbalance found is reported in the error.
pub fn bisect(
    masses: &[MassDistribution],
    degree_budget: usize,
    cfg: &BisectConfig,
) -> Result<Polynomial2> {
    if masses.is_empty() {
        return Err(Error::validation("no masses to bisect"));
    }
    if poly_dim(degree_budget) - 1 < masses.len() {
        return Err(Error::validation(format!(
            "degree budget {degree_budget} gives {} free directions for {} masses",
            poly_dim(degree_budget) - 1,
            masses.len()
        )));
    }
    let point_sets: Vec<Vec<WeightedPoint>> = masses.iter().map(|m| m.to_points()).collect();
    for (i, pts) in point_sets.iter().enumerate() {
        let total: f64 = pts.iter().map(|p| p.weight).sum();
        if !(total > 0.0) {
            return Err(Error::validation(format!("mass {i} has no weight")));
        }
    }
    let sets: Vec<&[WeightedPoint]> = point_sets.iter().map(|v| v.as_slice()).collect();
    bisect_points(&sets, degree_budget, cfg)
}

/// One mass set lifted to monomial features (point-major rows).
struct LiftedSet {
    feats: Vec<f64>,
    weights: Vec<f64>,
    total: f64,
}

fn lift_sets(sets: &[&[WeightedPoint]], degree: usize) -> Vec<LiftedSet> {
    let dim = poly_dim(degree);
    sets.iter()
        .map(|pts| {
            let mut feats = Vec::with_capacity(pts.len() * dim);
            let mut weights = Vec::with_capacity(pts.len());
            let mut total = 0.0;
            for pt in *pts {
                let mut xp = [0.0f64; 32];
                let mut yp = [0.0f64; 32];
                powers(pt.pos.x, degree, &mut xp);
                powers(pt.pos.y, degree, &mut yp);
                for t in 0..=degree {
                    for a in (0..=t).rev() {
                        feats.push(xp[a] * yp[t - a]);
                    }
                }
                weights.push(pt.weight);
                total += pt.weight;
            }
            LiftedSet { feats, weights, total }
        })
        .collect()
}

fn hard_imbalance_lifted(c: &[f64], sets: &[LiftedSet]) -> f64 {
    let dim = c.len();
    let mut worst = 0.0f64;
    for set in sets {
        let mut acc = 0.0;
        for (p, &w) in set.weights.iter().enumerate() {
            let v: f64 = set.feats[p * dim..(p + 1) * dim]
                .iter()
                .zip(c.iter())
                .map(|(f, ci)| f * ci)
                .sum();
            acc += w * v.signum();
        }
        worst = worst.max(acc.abs() / set.total);
    }
    worst
}

fn bisect_points(
    sets: &[&[WeightedPoint]],
    degree_budget: usize,
    cfg: &BisectConfig,
) -> Result<Polynomial2> {
    let dim = poly_dim(degree_budget);
    let m = sets.len();
    let lifted = lift_sets(sets, degree_budget);

    let results: Vec<(f64, usize, Vec<f64>)> = (0..cfg.restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha12Rng::seed_from_u64(
                cfg.seed ^ (restart as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            let mut c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
            normalize(&mut c);

            // Temperature from the median |P| over the pooled points.
            let mut vals: Vec<f64> = lifted
                .iter()
                .flat_map(|set| {
                    let c = &c;
                    (0..set.weights.len()).map(move |p| {
                        set.feats[p * dim..(p + 1) * dim]
                            .iter()
                            .zip(c.iter())
                            .map(|(f, ci)| f * ci)
                            .sum::<f64>()
                            .abs()
                    })
                })
                .collect();
            let mid = vals.len() / 2;
            vals.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
            let mut tau = vals[mid].max(1e-12);

            let mut best_c = c.clone();
            let mut best_score = hard_imbalance_lifted(&c, &lifted);
            let mut residual = vec![0.0f64; m];
            let mut jac = vec![0.0f64; m * dim];
            for _ in 0..cfg.stages {
                for _ in 0..cfg.steps_per_stage {
                    residual.iter_mut().for_each(|r| *r = 0.0);
                    jac.iter_mut().for_each(|j| *j = 0.0);
                    for (i, set) in lifted.iter().enumerate() {
                        for (p, &w) in set.weights.iter().enumerate() {
                            let row = &set.feats[p * dim..(p + 1) * dim];
                            let v: f64 =
                                row.iter().zip(c.iter()).map(|(f, ci)| f * ci).sum();
                            let t = (v / tau).tanh();
                            residual[i] += w * t / set.total;
                            let sech2 = 1.0 - t * t;
                            if sech2 > 1e-14 {
                                let g = w * sech2 / (tau * set.total);
                                for (jj, f) in row.iter().enumerate() {
                                    jac[i * dim + jj] += g * f;
                                }
                            }
                        }
                    }
                    let worst = residual.iter().fold(0.0f64, |a, r| a.max(r.abs()));
                    if worst < 1e-6 {
                        break;
                    }
                    // Least-norm Gauss-Newton step via the m x m normal system.
                    let mut gram = vec![0.0f64; m * m];
                    for i in 0..m {
                        for j in i..m {
                            let mut s = 0.0;
                            for k in 0..dim {
                                s += jac[i * dim + k] * jac[j * dim + k];
                            }
                            gram[i * m + j] = s;
                            gram[j * m + i] = s;
                        }
                    }
                    let trace: f64 = (0..m).map(|i| gram[i * m + i]).sum();
                    let damp = 1e-9 * (trace / m as f64).max(1e-30);
                    for i in 0..m {
                        gram[i * m + i] += damp;
                    }
                    let rhs: Vec<f64> = residual.iter().map(|r| -r).collect();
                    let Some(y) = solve_dense(&mut gram, &rhs, m) else { break };
                    let mut delta = vec![0.0f64; dim];
                    for i in 0..m {
                        for k in 0..dim {
                            delta[k] += jac[i * dim + k] * y[i];
                        }
                    }
                    let dn = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
                    if dn > 0.5 {
                        for d in delta.iter_mut() {
                            *d *= 0.5 / dn;
                        }
                    }
                    for (ci, di) in c.iter_mut().zip(delta.iter()) {
                        *ci += di;
                    }
                    normalize(&mut c);
                }
                let score = hard_imbalance_lifted(&c, &lifted);
                if score < best_score {
                    best_score = score;
                    best_c = c.clone();
                }
                if best_score <= 0.5 * cfg.tolerance {
                    break;
                }
                tau *= 0.3;
            }
            (best_score, restart, best_c)
        })
        .collect();

    let (score, _, coeffs) = results
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("at least one restart");

    if score > cfg.tolerance {
        return Err(Error::BisectFailed { best_imbalance: score });
    }
    let mut coeffs = coeffs;
    normalize(&mut coeffs);
    Polynomial2::new(degree_budget, coeffs)
}

/// Gaussian elimination with partial pivoting; `a` is n x n row-major.
fn solve_dense(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            x.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= a[col * n + k] * x[k];
        }
        x[col] = s / a[col * n + col];
    }
    Some(x)
}

fn normalize(coeffs: &mut [f64]) {
    let n = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    if n > 0.0 {
        for c in coeffs.iter_mut() {
            *c /= n;
        }
    } else {
        coeffs[0] = 1.0;
    }
}

#[derive(Debug, Clone)]
pub struct PartitionConfig {
    pub bisect: BisectConfig,
    /// Side of the sign-labeling grid.
    pub grid: usize,
    /// Gradient floor factor: crossings need `|grad P| >= factor * max |grad P|`.
    pub singular_factor: f64,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            bisect: BisectConfig::default(),
            grid: 1024,
            singular_factor: 1e-6,
            seed: 0,
        }
    }
}

/// Pixel geometry shared by label and wall grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelGrid {
    pub origin: Vec2,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl PixelGrid {
    pub fn cover(domain: &AxisBox, per_axis: usize) -> PixelGrid {
        PixelGrid {
            origin: domain.min,
            spacing: domain.width().max(domain.height()) / per_axis as f64,
            nx: per_axis,
            ny: per_axis,
        }
    }

    pub fn center(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (ix as f64 + 0.5) * self.spacing,
            self.origin.y + (iy as f64 + 0.5) * self.spacing,
        )
    }

    pub fn index_of(&self, p: Vec2) -> Option<usize> {
        let fx = (p.x - self.origin.x) / self.spacing;
        let fy = (p.y - self.origin.y) / self.spacing;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        if ix >= self.nx || iy >= self.ny {
            return None;
        }
        Some(iy * self.nx + ix)
    }

    pub fn pixel_area(&self) -> f64 {
        self.spacing * self.spacing
    }
}

/// Result of the iterated partition: the product polynomial, the labeled
/// cell grid, per-cell masses, and the sign-change ribbon (the wall in its
/// `rho -> 0` limit). Cells are the sign orthants of the bisection factors,
/// the sets the factor-2 mass guarantee is built for.
#[derive(Debug, Clone)]
pub struct Partition {
    pub polynomial: Polynomial2,
    pub factors: Vec<Polynomial2>,
    pub grid: PixelGrid,
    /// Cell id per pixel; -1 marks pixels on a factor zero set.
    pub labels: Vec<i32>,
    pub signs: Vec<i8>,
    pub cell_count: usize,
    /// Total mass per cell id.
    pub masses: Vec<f64>,
    /// Mass sitting exactly on the zero set (assigned to the wall).
    pub wall_mass: f64,
    /// Sign-change ribbon pixels.
    pub ribbon: Vec<bool>,
    /// One-pixel-thin slivers observed while labeling.
    pub thin_crossings: usize,
    pub domain: AxisBox,
}

impl Partition {
    pub fn label_at(&self, p: Vec2) -> Option<i32> {
        self.grid.index_of(p).map(|i| self.labels[i])
    }

    /// Nonempty cell masses (mass above `floor`).
    pub fn nonempty_masses(&self, floor: f64) -> Vec<f64> {
        self.masses.iter().copied().filter(|&m| m > floor).collect()
    }

    /// Pixels of each cell not covered by `wall`: the pruned cells.
    pub fn pruned_pixel_counts(&self, wall: &WallMask) -> Vec<usize> {
        let mut counts = vec![0usize; self.cell_count];
        for i in 0..self.labels.len() {
            let l = self.labels[i];
            if l >= 0 && !wall.mask[i] {
                counts[l as usize] += 1;
            }
        }
        counts
    }
}

/// Iterated simultaneous bisection: each level bisects all current parts
/// with one factor of minimal admissible degree; the final polynomial is
/// the product of factors nudged off its singularities.
pub fn partition(
    mass: &MassDistribution,
    degree: usize,
    domain: &AxisBox,
    cfg: &PartitionConfig,
) -> Result<Partition> {
    if degree < 1 {
        return Err(Error::validation("partition degree must be >= 1"));
    }
    let points = mass.to_points();
    if points.is_empty() {
        return Err(Error::validation("mass is empty on the domain"));
    }

    // Level loop: parts are index sets into `points`.
    let mut parts: Vec<Vec<usize>> = vec![(0..points.len()).collect()];
    let mut factors: Vec<Polynomial2> = Vec::new();
    let mut used_degree = 0usize;
    let mut level = 0u64;
    loop {
        let m = parts.iter().filter(|p| p.len() > 1).count().max(1);
        let mut k = 1usize;
        while poly_dim(k) - 1 < m {
            k += 1;
        }
        if used_degree + k > degree {
            break;
        }
        let sets_data: Vec<Vec<WeightedPoint>> = parts
            .iter()
            .filter(|idx| idx.len() > 1)
            .map(|idx| idx.iter().map(|&i| points[i]).collect())
            .collect();
        if sets_data.is_empty() {
            break;
        }
        let sets: Vec<&[WeightedPoint]> = sets_data.iter().map(|v| v.as_slice()).collect();
        let bcfg = BisectConfig {
            seed: cfg
                .bisect
                .seed
                .wrapping_add(cfg.seed)
                .wrapping_add(level.wrapping_mul(0x517c_c1b7_2722_0a95)),
            ..cfg.bisect.clone()
        };
        let factor = bisect_points(&sets, k, &bcfg)?;
        // Split every part by the factor sign; points landing exactly on the
        // zero set leave the cell tree (their product sign is zero).
        let mut next: Vec<Vec<usize>> = Vec::with_capacity(parts.len() * 2);
        for part in &parts {
            let mut plus = Vec::new();
            let mut minus = Vec::new();
            for &i in part {
                let v = factor.eval(points[i].pos);
                if v > 0.0 {
                    plus.push(i);
                } else if v < 0.0 {
                    minus.push(i);
                }
            }
            next.push(plus);
            next.push(minus);
        }
        parts = next;
        factors.push(factor);
        used_degree += k;
        level += 1;
    }

    let mut product = factors
        .iter()
        .skip(1)
        .fold(factors[0].clone(), |acc, f| acc.multiply(f));
    product = product.normalized();

    // Nudge off singular crossings: add a random degree-`degree` polynomial
    // with doubling amplitude until every detected crossing has gradient
    // above the floor.
    let grid = PixelGrid::cover(domain, cfg.grid);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0xa076_1d64_78bd_642f);
    let noise = Polynomial2::random_unit(degree, &mut rng);
    let grad_max = max_gradient(&product, domain);
    let floor = cfg.singular_factor * grad_max;
    let mut eps = 1e-9;
    let mut perturbed = product.clone();
    for _ in 0..40 {
        if min_crossing_gradient(&perturbed, &grid) >= floor {
            break;
        }
        perturbed = product.add_scaled(&noise, eps).normalized();
        eps *= 2.0;
    }
    let polynomial = perturbed;

    // Sign grid of the perturbed product (drives the wall and the ribbon).
    let mut signs = vec![0i8; grid.nx * grid.ny];
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let v = polynomial.eval(grid.center(ix, iy));
            signs[iy * grid.nx + ix] = if v > 0.0 {
                1
            } else if v < 0.0 {
                -1
            } else {
                0
            };
        }
    }
    let ribbon = sign_ribbon(&signs, grid.nx, grid.ny);
    let thin_crossings = count_thin(&signs, grid.nx, grid.ny);

    // Cells are the sign orthants of the bisection tree: the factor sign
    // vector at each pixel, with codes mapped to dense ids in scan order.
    // These are the sets the factor-2 mass guarantee is constructed for; a
    // connected component of {P != 0} always lies in exactly one of them.
    let orthant_code = |p: Vec2| -> Option<usize> {
        let mut code = 0usize;
        for (bit, f) in factors.iter().enumerate() {
            let v = f.eval(p);
            if v == 0.0 {
                return None;
            }
            if v > 0.0 {
                code |= 1 << bit;
            }
        }
        Some(code)
    };
    let mut code_to_label: std::collections::HashMap<usize, i32> =
        std::collections::HashMap::new();
    let mut labels = vec![-1i32; grid.nx * grid.ny];
    let mut next_label = 0i32;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            if let Some(code) = orthant_code(grid.center(ix, iy)) {
                let l = *code_to_label.entry(code).or_insert_with(|| {
                    let l = next_label;
                    next_label += 1;
                    l
                });
                labels[iy * grid.nx + ix] = l;
            }
        }
    }
    let cell_count = next_label as usize;

    // Per-cell masses; points on a factor zero set, or whose pixel label
    // disagrees with their own orthant (sub-pixel ribbon points), go to the
    // wall.
    let mut masses = vec![0.0f64; cell_count];
    let mut wall_mass = 0.0;
    for pt in &points {
        let own = orthant_code(pt.pos).and_then(|c| code_to_label.get(&c).copied());
        let idx = grid.index_of(pt.pos);
        match (own, idx) {
            (Some(l), Some(i)) if labels[i] == l => masses[l as usize] += pt.weight,
            _ => wall_mass += pt.weight,
        }
    }

    // A mass-bearing cell that is entirely ribbon means the grid cannot
    // separate it from the zero set.
    let total_mass: f64 = points.iter().map(|p| p.weight).sum();
    let mut all_ribbon = vec![true; cell_count];
    for i in 0..labels.len() {
        if labels[i] >= 0 && !ribbon[i] {
            all_ribbon[labels[i] as usize] = false;
        }
    }
    for (cell, &ar) in all_ribbon.iter().enumerate() {
        if ar && masses[cell] > 0.01 * total_mass {
            return Err(Error::GridTooCoarse(format!(
                "cell {cell} carries {:.1}% of the mass but is thinner than 2 grid steps",
                100.0 * masses[cell] / total_mass
            )));
        }
    }

    Ok(Partition {
        polynomial,
        factors,
        grid,
        labels,
        signs,
        cell_count,
        masses,
        wall_mass,
        ribbon,
        thin_crossings,
        domain: *domain,
    })
}

fn max_gradient(poly: &Polynomial2, domain: &AxisBox) -> f64 {
    let probe = PixelGrid::cover(domain, 64);
    let mut best = 0.0f64;
    for iy in 0..probe.ny {
        for ix in 0..probe.nx {
            best = best.max(poly.gradient(probe.center(ix, iy)).norm());
        }
    }
    best
}

/// Smallest interpolated gradient norm over detected zero crossings.
fn min_crossing_gradient(poly: &Polynomial2, grid: &PixelGrid) -> f64 {
    let step = (grid.nx / 256).max(1);
    let mut worst = f64::INFINITY;
    let mut prev_v;
    for iy in (0..grid.ny).step_by(step) {
        prev_v = poly.eval(grid.center(0, iy));
        for ix in (step..grid.nx).step_by(step) {
            let v = poly.eval(grid.center(ix, iy));
            if prev_v * v < 0.0 {
                let t = prev_v / (prev_v - v);
                let a = grid.center(ix - step, iy);
                let b = grid.center(ix, iy);
                let z = Vec2::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
                worst = worst.min(poly.gradient(z).norm());
            }
            prev_v = v;
        }
    }
    worst
}

/// Pixels adjacent (4-neighborhood) to an opposite sign or an exact zero.
fn sign_ribbon(signs: &[i8], nx: usize, ny: usize) -> Vec<bool> {
    let mut ribbon = vec![false; signs.len()];
    for iy in 0..ny {
        for ix in 0..nx {
            let i = iy * nx + ix;
            if signs[i] == 0 {
                ribbon[i] = true;
                continue;
            }
            let s = signs[i];
            let hit = (ix > 0 && signs[i - 1] != s)
                || (ix + 1 < nx && signs[i + 1] != s)
                || (iy > 0 && signs[i - nx] != s)
                || (iy + 1 < ny && signs[i + nx] != s);
            ribbon[i] = hit;
        }
    }
    ribbon
}

/// One-pixel slivers: sign flips on both sides within two steps.
fn count_thin(signs: &[i8], nx: usize, ny: usize) -> usize {
    let mut count = 0;
    for iy in 0..ny {
        for ix in 1..nx - 1 {
            let i = iy * nx + ix;
            if signs[i] != 0 && signs[i - 1] == signs[i + 1] && signs[i - 1] != signs[i] {
                count += 1;
            }
        }
    }
    for iy in 1..ny - 1 {
        for ix in 0..nx {
            let i = iy * nx + ix;
            if signs[i] != 0 && signs[i - nx] == signs[i + nx] && signs[i - nx] != signs[i] {
                count += 1;
            }
        }
    }
    count
}

/// Grid mask of points within distance `rho` of the zero set.
#[derive(Debug, Clone)]
pub struct WallMask {
    pub grid: PixelGrid,
    pub mask: Vec<bool>,
    pub rho: f64,
    /// Euclidean distance (physical units) from each pixel center to the
    /// nearest sign-change pixel.
    pub distance: Vec<f64>,
}

impl WallMask {
    pub fn contains(&self, p: Vec2) -> bool {
        self.grid.index_of(p).map(|i| self.mask[i]).unwrap_or(false)
    }

    pub fn area(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 * self.grid.pixel_area()
    }

    /// Pixel-center coordinates of the masked region.
    pub fn points(&self) -> Vec<Vec2> {
        let mut out = Vec::new();
        for iy in 0..self.grid.ny {
            for ix in 0..self.grid.nx {
                if self.mask[iy * self.grid.nx + ix] {
                    out.push(self.grid.center(ix, iy));
                }
            }
        }
        out
    }
}

/// The `rho`-neighborhood of `Z(P)` as a mask on the partition's grid:
/// sign-change detection followed by a two-pass exact distance transform.
pub fn wall(part: &Partition, rho: f64) -> Result<WallMask> {
    if !(rho > 0.0) {
        return Err(Error::validation("wall radius must be positive"));
    }
    Ok(wall_from_signs(&part.signs, part.grid, rho))
}

/// Wall of an arbitrary polynomial on a fresh grid over `domain`.
pub fn wall_for_poly(
    poly: &Polynomial2,
    domain: &AxisBox,
    per_axis: usize,
    rho: f64,
) -> Result<WallMask> {
    if !(rho > 0.0) {
        return Err(Error::validation("wall radius must be positive"));
    }
    let grid = PixelGrid::cover(domain, per_axis);
    let mut signs = vec![0i8; grid.nx * grid.ny];
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let v = poly.eval(grid.center(ix, iy));
            signs[iy * grid.nx + ix] = if v > 0.0 {
                1
            } else if v < 0.0 {
                -1
            } else {
                0
            };
        }
    }
    Ok(wall_from_signs(&signs, grid, rho))
}

fn wall_from_signs(signs: &[i8], grid: PixelGrid, rho: f64) -> WallMask {
    let ribbon = sign_ribbon(signs, grid.nx, grid.ny);
    let dist2 = exact_distance_sq(&ribbon, grid.nx, grid.ny);
    let px = grid.spacing;
    let distance: Vec<f64> = dist2.iter().map(|&d2| d2.sqrt() * px).collect();
    let mask: Vec<bool> = distance.iter().map(|&d| d <= rho).collect();
    WallMask { grid, mask, rho, distance }
}

/// Exact squared Euclidean distance (in pixels) to the seed set, by the
/// separable lower-envelope transform, one pass per axis.
fn exact_distance_sq(seed: &[bool], nx: usize, ny: usize) -> Vec<f64> {
    const INF: f64 = 1e18;
    let mut d = vec![INF; nx * ny];
    for (i, &s) in seed.iter().enumerate() {
        if s {
            d[i] = 0.0;
        }
    }
    let mut f = vec![0.0f64; ny.max(nx)];
    let mut out_col = vec![0.0f64; ny];
    for ix in 0..nx {
        for iy in 0..ny {
            f[iy] = d[iy * nx + ix];
        }
        dt_1d(&f[..ny], &mut out_col);
        for iy in 0..ny {
            d[iy * nx + ix] = out_col[iy];
        }
    }
    let mut out_row = vec![0.0f64; nx];
    for iy in 0..ny {
        f[..nx].copy_from_slice(&d[iy * nx..iy * nx + nx]);
        dt_1d(&f[..nx], &mut out_row);
        d[iy * nx..iy * nx + nx].copy_from_slice(&out_row);
    }
    d
}

/// 1D squared-distance lower envelope.
fn dt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -1e20;
    z[1] = 1e20;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                if k == 0 {
                    // Degenerate cell; replace the anchor.
                    break;
                }
                k -= 1;
            } else {
                break;
            }
        }
        if s <= z[k] && k == 0 {
            v[0] = q;
            z[0] = -1e20;
            z[1] = 1e20;
            continue;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = 1e20;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        out[q] = dq * dq + f[p];
    }
}

/// Number of distinct cells met by the tube's central axis, sampled at
/// half-pixel resolution.
pub fn tube_cell_incidence(part: &Partition, tube: &Tube) -> usize {
    let half = tube.dir.scale(tube.length / 2.0);
    segment_cell_incidence(part, tube.center - half, tube.center + half)
}

/// Distinct cells met by a segment (for line-axis probes), sampled at
/// half-pixel resolution; ribbon pixels do not count as cells.
pub fn segment_cell_incidence(part: &Partition, a: Vec2, b: Vec2) -> usize {
    let step = part.grid.spacing / 2.0;
    let len = (b - a).norm();
    let n = ((len / step).ceil() as usize).max(1);
    let mut seen = std::collections::BTreeSet::new();
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let p = Vec2::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
        if let Some(idx) = part.grid.index_of(p) {
            let l = part.labels[idx];
            if l >= 0 && !part.ribbon[idx] {
                seen.insert(l);
            }
        }
    }
    seen.len()
}
