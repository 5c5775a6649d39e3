//! Seeded measurement batteries for the incidence-geometry bounds: Wongkew
//! neighborhood volumes, transverse segment counts, overlap and union sums,
//! and direction counts in a variety strip. Each battery returns plain rows
//! so the CLI can print CSV and the acceptance suite can assert the pinned
//! constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::{AxisBox, Domain, Vec2};
use crate::polypart::Polynomial2;
use crate::tiles::Tube;
use crate::variety::{
    direction_count, neighborhood_volume, overlap_sum, sample_variety, transverse_segments,
    TubeFamilyParams,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WongkewRow {
    pub index: usize,
    pub degree: usize,
    pub rho: f64,
    pub volume: f64,
    pub std_error: f64,
    /// Pinned bound `16 * D * rho * L`.
    pub bound: f64,
    /// Volume at `rho / 2`.
    pub halved_volume: f64,
}

/// Neighborhood volumes of random curves in the ball of radius `ball_radius`,
/// with the volume at half the radius alongside. Polynomials with an empty
/// variety in the ball are resampled (deterministically).
pub fn wongkew_battery(
    count: usize,
    max_degree: usize,
    rho: f64,
    ball_radius: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<WongkewRow>> {
    let domain = Domain::ball(Vec2::ZERO, ball_radius);
    let probe = AxisBox::centered_square(Vec2::ZERO, 2.0 * ball_radius);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(count);
    let mut index = 0;
    while rows.len() < count {
        let degree = 1 + rows.len() % max_degree;
        let poly = Polynomial2::random_unit(degree, &mut rng);
        index += 1;
        // Keep only curves that actually pass through the ball.
        let sample = sample_variety(&poly, &probe, 128, 1e-9);
        if !sample
            .points
            .iter()
            .any(|z| z.pos.norm() < 0.8 * ball_radius)
        {
            continue;
        }
        let (volume, std_error) =
            neighborhood_volume(&poly, rho, &domain, samples, seed ^ index)?;
        let (halved_volume, _) =
            neighborhood_volume(&poly, rho / 2.0, &domain, samples, seed ^ (index << 1))?;
        if volume == 0.0 {
            continue;
        }
        rows.push(WongkewRow {
            index: rows.len(),
            degree,
            rho,
            volume,
            std_error,
            bound: 16.0 * degree as f64 * rho * ball_radius,
            halved_volume,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentsRow {
    pub index: usize,
    pub degree: usize,
    pub count: usize,
    /// Pinned bound `2 * D^2`.
    pub bound: usize,
}

/// Transverse segment counts of random cubics against random tubes.
pub fn segments_battery(count: usize, angle: f64, seed: u64) -> Result<Vec<SegmentsRow>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(count);
    for index in 0..count {
        let degree = 3;
        let poly = Polynomial2::random_unit(degree, &mut rng);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let tube = Tube {
            center: Vec2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
            dir: Vec2::new(theta.cos(), theta.sin()),
            length: rng.gen_range(1.5..3.0),
            width: 0.1,
            dilation: 1.0,
        };
        let n = transverse_segments(&poly, &tube, angle, tube.width / 2.0, 1e-9)?;
        rows.push(SegmentsRow {
            index,
            degree,
            count: n,
            bound: 2 * degree * degree,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapRow {
    pub directions: usize,
    pub length: f64,
    pub width: f64,
    /// Clipping-based sum of pairwise intersection areas.
    pub total: f64,
    /// Hull-based direct summation (independent oracle).
    pub direct: f64,
    /// Pinned bound `8 ln(J) |T|`.
    pub bound: f64,
}

/// The centrally crossing family: `J` tubes at relative angles `j/J` radians
/// against the reference tube, all sharing its center.
pub fn crossing_family(length: f64, width: f64, directions: usize) -> (Tube, Vec<Tube>) {
    let reference = Tube {
        center: Vec2::ZERO,
        dir: Vec2::new(1.0, 0.0),
        length,
        width,
        dilation: 1.0,
    };
    let family = (1..=directions)
        .map(|j| {
            let theta = j as f64 / directions as f64;
            Tube {
                dir: Vec2::new(theta.cos(), theta.sin()),
                ..reference
            }
        })
        .collect();
    (reference, family)
}

/// Overlap sums of crossing families, checked against the hull-based oracle.
pub fn overlap_battery(cases: &[(f64, f64, usize)]) -> Result<Vec<OverlapRow>> {
    let mut rows = Vec::new();
    for &(length, width, directions) in cases {
        let (reference, family) = crossing_family(length, width, directions);
        let total = overlap_sum(&reference, &family)?;
        let direct: f64 = family
            .iter()
            .map(|s| hull_intersection_area(&s.polygon(1.0), &reference.polygon(1.0)))
            .sum();
        rows.push(OverlapRow {
            directions,
            length,
            width,
            total,
            direct,
            bound: 8.0 * (directions as f64).ln() * length * width,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnionRow {
    pub directions: usize,
    pub length: f64,
    pub width: f64,
    pub tube_sum: f64,
    pub union_area: f64,
    /// Pinned bound `8 ln(J) * union_area`.
    pub bound: f64,
}

/// Families with one tube per direction crossing near the origin: the total
/// tube area against the rasterized union area.
pub fn union_battery(families: usize, seed: u64) -> Result<Vec<UnionRow>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(families);
    for _ in 0..families {
        let width: f64 = rng.gen_range(0.5..1.5);
        let length: f64 = width * rng.gen_range(6.0..20.0);
        let max_j = (10.0 * length / width).floor() as usize;
        let directions = rng.gen_range(4..=max_j.min(64));
        let tubes: Vec<Tube> = (0..directions)
            .map(|j| {
                let theta = j as f64 * std::f64::consts::PI / directions as f64;
                Tube {
                    center: Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    dir: Vec2::new(theta.cos(), theta.sin()),
                    length,
                    width,
                    dilation: 1.0,
                }
            })
            .collect();
        let tube_sum: f64 = tubes.iter().map(|t| t.area()).sum();
        let union_area = raster_union_area(&tubes, 1024);
        rows.push(UnionRow {
            directions,
            length,
            width,
            tube_sum,
            union_area,
            bound: 8.0 * (directions as f64).ln() * union_area,
        });
    }
    Ok(rows)
}

fn raster_union_area(tubes: &[Tube], per_axis: usize) -> f64 {
    let mut bb = tubes[0].bounding_box(1.0);
    for t in &tubes[1..] {
        let b = t.bounding_box(1.0);
        bb.min.x = bb.min.x.min(b.min.x);
        bb.min.y = bb.min.y.min(b.min.y);
        bb.max.x = bb.max.x.max(b.max.x);
        bb.max.y = bb.max.y.max(b.max.y);
    }
    let hx = bb.width() / per_axis as f64;
    let hy = bb.height() / per_axis as f64;
    let mut hits = 0usize;
    for iy in 0..per_axis {
        for ix in 0..per_axis {
            let p = Vec2::new(
                bb.min.x + (ix as f64 + 0.5) * hx,
                bb.min.y + (iy as f64 + 0.5) * hy,
            );
            if tubes.iter().any(|t| t.contains(p, 1.0)) {
                hits += 1;
            }
        }
    }
    hits as f64 * hx * hy
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionsRow {
    pub directions: usize,
    pub count: usize,
    /// Pinned bound `8 ln(J)`.
    pub bound: f64,
}

/// The line-variety strip fixture: tubes over `J` directions through the
/// origin, counted when fully inside `B(L) ∩ {|y| <= W}`.
pub fn directions_fixture(directions: usize, length: f64, width: f64) -> Result<DirectionsRow> {
    let family = TubeFamilyParams { directions, length, width };
    let line = Polynomial2::from_terms(1, &[(0, 1, 1.0)]).expect("line poly");
    let tubes: Vec<Tube> = (0..directions)
        .map(|j| {
            let theta = j as f64 * std::f64::consts::PI / directions as f64;
            Tube {
                center: Vec2::ZERO,
                dir: Vec2::new(theta.cos(), theta.sin()),
                length,
                width,
                dilation: 1.0,
            }
        })
        .collect();
    let count = direction_count(&tubes, &line, Vec2::ZERO, length, width, &family)?;
    Ok(DirectionsRow {
        directions,
        count,
        bound: 8.0 * (directions as f64).ln(),
    })
}

/// Intersection area of two convex polygons by vertex enumeration and a
/// monotone-chain hull: the independent oracle for the clipping path.
pub fn hull_intersection_area(a: &[Vec2], b: &[Vec2]) -> f64 {
    let mut candidates: Vec<Vec2> = Vec::new();
    for &p in a {
        if point_in_convex(p, b) {
            candidates.push(p);
        }
    }
    for &p in b {
        if point_in_convex(p, a) {
            candidates.push(p);
        }
    }
    for i in 0..a.len() {
        let (a1, a2) = (a[i], a[(i + 1) % a.len()]);
        for j in 0..b.len() {
            let (b1, b2) = (b[j], b[(j + 1) % b.len()]);
            if let Some(p) = segment_intersection(a1, a2, b1, b2) {
                candidates.push(p);
            }
        }
    }
    if candidates.len() < 3 {
        return 0.0;
    }
    let hull = convex_hull(candidates);
    crate::geom::polygon_area(&hull)
}

fn point_in_convex(p: Vec2, poly: &[Vec2]) -> bool {
    let mut sign = 0.0f64;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let c = (b - a).cross(p - a);
        if c.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = c.signum();
        } else if c.signum() != sign {
            return false;
        }
    }
    true
}

fn segment_intersection(a1: Vec2, a2: Vec2, b1: Vec2, b2: Vec2) -> Option<Vec2> {
    let r = a2 - a1;
    let s = b2 - b1;
    let denom = r.cross(s);
    if denom.abs() < 1e-300 {
        return None;
    }
    let t = (b1 - a1).cross(s) / denom;
    let u = (b1 - a1).cross(r) / denom;
    if (-1e-12..=1.0 + 1e-12).contains(&t) && (-1e-12..=1.0 + 1e-12).contains(&u) {
        Some(Vec2::new(a1.x + r.x * t, a1.y + r.y * t))
    } else {
        None
    }
}

fn convex_hull(mut pts: Vec<Vec2>) -> Vec<Vec2> {
    pts.sort_by(|p, q| p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y)));
    pts.dedup_by(|p, q| (p.x - q.x).abs() < 1e-14 && (p.y - q.y).abs() < 1e-14);
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Vec2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2
            && (lower[lower.len() - 1] - lower[lower.len() - 2])
                .cross(p - lower[lower.len() - 1])
                <= 0.0
        {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2
            && (upper[upper.len() - 1] - upper[upper.len() - 2])
                .cross(p - upper[upper.len() - 1])
                <= 0.0
        {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_area_matches_clipping_on_random_rectangles() {
        use crate::geom::{clip_convex, polygon_area};
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..200 {
            let t1 = Tube {
                center: Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                dir: {
                    let a: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                    Vec2::new(a.cos(), a.sin())
                },
                length: rng.gen_range(1.0..4.0),
                width: rng.gen_range(0.2..1.0),
                dilation: 1.0,
            };
            let t2 = Tube {
                center: Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                dir: {
                    let a: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                    Vec2::new(a.cos(), a.sin())
                },
                ..t1
            };
            let p1 = t1.polygon(1.0).to_vec();
            let p2 = t2.polygon(1.0).to_vec();
            let clipped = polygon_area(&clip_convex(&p1, &p2));
            let hulled = hull_intersection_area(&p1, &p2);
            assert!(
                (clipped - hulled).abs() <= 1e-9 * (1.0 + clipped),
                "clip {clipped} hull {hulled}"
            );
        }
    }

    #[test]
    fn overlap_fixture_matches_oracle_and_bound() {
        let rows = overlap_battery(&[(10.0, 1.0, 10)]).unwrap();
        let row = &rows[0];
        assert!((row.total - row.direct).abs() <= 1e-9 * row.total);
        assert!(row.total <= row.bound);
        // Every pair is bounded by the strip model min(LW, W^2/sin).
        let (reference, family) = crossing_family(10.0, 1.0, 10);
        for (j, s) in family.iter().enumerate() {
            let theta = (j + 1) as f64 / 10.0;
            let pair = overlap_sum(&reference, &[*s]).unwrap();
            let model = (10.0f64).min(1.0 / theta.sin());
            assert!(pair <= model + 1e-9, "pair {pair} model {model}");
        }
    }

    #[test]
    fn union_battery_respects_pinned_bound() {
        for row in union_battery(12, 5).unwrap() {
            assert!(
                row.tube_sum <= row.bound,
                "sum {} bound {} (J={})",
                row.tube_sum,
                row.bound,
                row.directions
            );
        }
    }

    #[test]
    fn directions_fixture_is_small() {
        let row = directions_fixture(1000, 100.0, 1.0).unwrap();
        assert!(row.count >= 1);
        assert!((row.count as f64) <= row.bound);
    }

    #[test]
    fn segments_battery_under_guth_bound() {
        for row in segments_battery(25, 0.05, 3).unwrap() {
            assert!(row.count <= row.bound, "count {} at {}", row.count, row.index);
        }
    }

    #[test]
    fn wongkew_battery_scaling() {
        let rows = wongkew_battery(6, 4, 0.1, 2.0, 60_000, 17).unwrap();
        for row in &rows {
            assert!(row.volume <= row.bound, "vol {} bound {}", row.volume, row.bound);
            let ratio = row.halved_volume / row.volume;
            assert!(ratio >= 0.35 && ratio <= 0.65, "halving ratio {ratio}");
        }
    }
}
