//! Geometry of tubes against a plane algebraic curve `Z(P)`: nonsingular
//! point sampling, tangent angles, the scale-laddered tangential/transverse
//! classification over dyadic cube grids, and the measured counterparts of
//! the incidence lemmas (neighborhood volume, transverse segments, direction
//! counts, pairwise overlap sums).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{clip_convex, polygon_area, AxisBox, Cube, Domain, Vec2};
use crate::polypart::{Polynomial2, WallMask};
use crate::tiles::{
    cube_grid, parent_cube, root_cube, tangential_scale_ladder, transverse_scale_ladder,
    CubeGrid, CurveParams, GridMode, Tube,
};

/// One sampled nonsingular point of the variety.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VarietyPoint {
    pub pos: Vec2,
    /// Unit tangent to `Z(P)` (perpendicular to the gradient).
    pub tangent: Vec2,
    pub grad_norm: f64,
}

/// Discretization of the nonsingular part of `Z(P)` within a region.
#[derive(Debug, Clone)]
pub struct VarietySample {
    pub points: Vec<VarietyPoint>,
    pub singular_threshold: f64,
}

/// Detect sign changes on the edges of a `resolution x resolution` grid over
/// `region`, refine each crossing by 40 bisection steps, and keep the points
/// whose gradient clears `singular_threshold`. An empty sample is valid.
pub fn sample_variety(
    poly: &Polynomial2,
    region: &AxisBox,
    resolution: usize,
    singular_threshold: f64,
) -> VarietySample {
    let n = resolution;
    let hx = region.width() / n as f64;
    let hy = region.height() / n as f64;
    let mut values = vec![0.0f64; (n + 1) * (n + 1)];
    for iy in 0..=n {
        for ix in 0..=n {
            let p = Vec2::new(region.min.x + ix as f64 * hx, region.min.y + iy as f64 * hy);
            values[iy * (n + 1) + ix] = poly.eval(p);
        }
    }
    let node = |ix: usize, iy: usize| -> Vec2 {
        Vec2::new(region.min.x + ix as f64 * hx, region.min.y + iy as f64 * hy)
    };
    let mut points = Vec::new();
    let mut push_crossing = |a: Vec2, b: Vec2, fa: f64, fb: f64| {
        if fa == 0.0 {
            // Node exactly on the variety: keep it once (from the edge start).
            record_point(poly, a, singular_threshold, &mut points);
            return;
        }
        if fa * fb >= 0.0 {
            return;
        }
        let (mut lo, mut hi, mut flo) = (a, b, fa);
        for _ in 0..40 {
            let mid = Vec2::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
            let fm = poly.eval(mid);
            if fm == 0.0 {
                lo = mid;
                break;
            }
            if flo * fm < 0.0 {
                hi = mid;
            } else {
                lo = mid;
                flo = fm;
            }
        }
        record_point(poly, lo, singular_threshold, &mut points);
    };
    for iy in 0..=n {
        for ix in 0..n {
            push_crossing(
                node(ix, iy),
                node(ix + 1, iy),
                values[iy * (n + 1) + ix],
                values[iy * (n + 1) + ix + 1],
            );
        }
    }
    for ix in 0..=n {
        for iy in 0..n {
            push_crossing(
                node(ix, iy),
                node(ix, iy + 1),
                values[iy * (n + 1) + ix],
                values[(iy + 1) * (n + 1) + ix],
            );
        }
    }
    VarietySample { points, singular_threshold }
}

fn record_point(
    poly: &Polynomial2,
    pos: Vec2,
    singular_threshold: f64,
    out: &mut Vec<VarietyPoint>,
) {
    let grad = poly.gradient(pos);
    let grad_norm = grad.norm();
    if grad_norm >= singular_threshold {
        out.push(VarietyPoint {
            pos,
            tangent: grad.perp().normalized(),
            grad_norm,
        });
    }
}

/// Unsigned acute angle between the lines spanned by `a` and `b`.
pub fn angle_between_lines(a: Vec2, b: Vec2) -> f64 {
    let dot = a.dot(b).abs();
    let cross = a.cross(b).abs();
    cross.atan2(dot)
}

/// Angle between a tube's long axis and the variety tangent at `z`.
pub fn angle_to_variety(tube: &Tube, z: &VarietyPoint) -> f64 {
    angle_between_lines(tube.dir, z.tangent)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassKind {
    Tangential,
    Transverse,
    Cell,
}

/// Tubes attached to one cube at one scale of a ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TubeClass {
    pub kind: ClassKind,
    pub scale: f64,
    pub cube: Cube,
    /// Indices into the classified tube family.
    pub members: Vec<usize>,
}

/// Membership of every tube in `T_scale[Q]` for every cube of `grid`:
/// `T* ∩ W ∩ Q` nonempty and every sampled nonsingular point in `3Q ∩ 5T*`
/// within the angle threshold for the grid's mode.
pub fn classify(
    tubes: &[Tube],
    sample: &VarietySample,
    wall: &WallMask,
    grid: &CubeGrid,
    params: &CurveParams,
    delta: f64,
) -> Result<Vec<TubeClass>> {
    let threshold = angle_threshold(grid.mode, grid.scale, params, delta);
    let wall_pts = wall.points();
    let members = scale_members(tubes, sample, &wall_pts, grid, threshold);
    let kind = match grid.mode {
        GridMode::Tangential => ClassKind::Tangential,
        GridMode::Transverse => ClassKind::Transverse,
    };
    Ok(members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(qi, members)| TubeClass {
            kind,
            scale: grid.scale,
            cube: grid.cubes[qi],
            members,
        })
        .collect())
}

/// The angle threshold of a ladder rung: `scale * R^(-d+1+delta)` for the
/// tangential ladder, `scale / R` for the transverse one.
pub fn angle_threshold(mode: GridMode, scale: f64, params: &CurveParams, delta: f64) -> f64 {
    let r = params.scale();
    match mode {
        GridMode::Tangential => scale * r.powf(-params.curve_exponent + 1.0 + delta),
        GridMode::Transverse => scale / r,
    }
}

/// Per-cube member lists of `T_scale[Q]` over the whole grid.
fn scale_members(
    tubes: &[Tube],
    sample: &VarietySample,
    wall_pts: &[Vec2],
    grid: &CubeGrid,
    threshold: f64,
) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); grid.cubes.len()];
    for (ti, tube) in tubes.iter().enumerate() {
        // Wall points inside T*, variety points inside 5T*, computed once.
        let star = tube.dilation;
        let in_star: Vec<Vec2> = wall_pts
            .iter()
            .copied()
            .filter(|&p| tube.contains(p, star))
            .collect();
        if in_star.is_empty() {
            continue;
        }
        let nearby: Vec<&VarietyPoint> = sample
            .points
            .iter()
            .filter(|z| tube.contains(z.pos, 5.0 * star))
            .collect();
        for (qi, cube) in grid.cubes.iter().enumerate() {
            let qbox = cube.as_box();
            if !in_star.iter().any(|&p| qbox.contains(p)) {
                continue;
            }
            let big = cube.dilate(3.0).as_box();
            let ok = nearby.iter().all(|z| {
                !big.contains(z.pos) || angle_between_lines(tube.dir, z.tangent) <= threshold
            });
            if ok {
                members[qi].push(ti);
            }
        }
    }
    members
}

/// The full tangential/transverse peeling of a tube family against a wall.
#[derive(Debug, Clone)]
pub struct TangTranSplit {
    /// Tubes whose `T*` misses the wall entirely.
    pub cell: Vec<usize>,
    pub tang: Vec<TubeClass>,
    pub tran: Vec<TubeClass>,
    /// Wall-meeting tubes the ladders did not capture, attached to the
    /// top-scale complement class by the safeguard.
    pub safeguarded: usize,
}

impl TangTranSplit {
    /// Every class a tube index appears in.
    pub fn classes_of(&self, tube: usize) -> Vec<&TubeClass> {
        self.tang
            .iter()
            .chain(self.tran.iter())
            .filter(|c| c.members.contains(&tube))
            .collect()
    }
}

/// Peel the wall-meeting tubes into tangential classes
/// (`T_scale[Q] \ T_{scale/2}[parent Q]`, with the coarsest rung taking
/// `T_1[Q*]`) and transverse classes (same difference on the transverse
/// ladder, with the complement class at the top rung). Tubes missing the
/// wall are cell tubes; any wall tube that falls through both ladders is
/// attached to the complement class of a cube containing its wall hit.
pub fn tang_tran_split(
    tubes: &[Tube],
    sample: &VarietySample,
    wall: &WallMask,
    params: &CurveParams,
    delta: f64,
) -> Result<TangTranSplit> {
    let root = root_cube(params);
    let wall_pts = wall.points();

    let wall_meeting: Vec<bool> = tubes
        .iter()
        .map(|t| wall_pts.iter().any(|&p| t.contains(p, t.dilation)))
        .collect();
    let cell: Vec<usize> = (0..tubes.len()).filter(|&i| !wall_meeting[i]).collect();

    let mut assigned = vec![false; tubes.len()];
    let mut tang = Vec::new();
    let mut tran = Vec::new();

    // Tangential ladder, coarse angle threshold first (scale 1 = whole root).
    let xi_ladder = tangential_scale_ladder(params);
    let mut grids = Vec::new();
    let mut memberships = Vec::new();
    for &xi in &xi_ladder {
        let grid = cube_grid(root, xi, GridMode::Tangential, params)?;
        let thr = angle_threshold(GridMode::Tangential, xi, params, delta);
        let mem = scale_members(tubes, sample, &wall_pts, &grid, thr);
        grids.push(grid);
        memberships.push(mem);
    }
    for (level, &xi) in xi_ladder.iter().enumerate() {
        let grid = &grids[level];
        for (qi, cube) in grid.cubes.iter().enumerate() {
            let mut members = Vec::new();
            for &ti in &memberships[level][qi] {
                let peeled = if level == 0 {
                    true
                } else {
                    // Drop tubes already tangential at the parent's halved scale.
                    let parent = parent_cube(cube, grid)?;
                    let pgrid = &grids[level - 1];
                    let pqi = cube_index(pgrid, &parent)?;
                    !memberships[level - 1][pqi].contains(&ti)
                };
                if peeled {
                    members.push(ti);
                    assigned[ti] = true;
                }
            }
            if !members.is_empty() {
                tang.push(TubeClass {
                    kind: ClassKind::Tangential,
                    scale: xi,
                    cube: *cube,
                    members,
                });
            }
        }
    }

    // Transverse ladder. Halving the scale doubles the cube side, so the
    // subtrahend of rung `level` is rung `level - 1` on the parent cube;
    // below the bottom rung the subtrahend is evaluated on the root cube at
    // half the bottom threshold, so exactly tangential tubes never enter the
    // transverse classes. The top rung takes the complement class.
    let delta_ladder = transverse_scale_ladder(params, delta);
    let mut tgrids = Vec::new();
    let mut tmem = Vec::new();
    for &dl in &delta_ladder {
        let grid = cube_grid(root, dl, GridMode::Transverse, params)?;
        let thr = angle_threshold(GridMode::Transverse, dl, params, delta);
        let mem = scale_members(tubes, sample, &wall_pts, &grid, thr);
        tgrids.push(grid);
        tmem.push(mem);
    }
    let top = delta_ladder.len() - 1;
    let below_grid = CubeGrid {
        root,
        side: root.side,
        per_axis: 1,
        mode: GridMode::Transverse,
        scale: delta_ladder[0] / 2.0,
        cubes: vec![root],
    };
    let below_mem = scale_members(
        tubes,
        sample,
        &wall_pts,
        &below_grid,
        angle_threshold(GridMode::Transverse, delta_ladder[0] / 2.0, params, delta),
    );
    for (level, &dl) in delta_ladder.iter().enumerate() {
        let grid = &tgrids[level];
        for (qi, cube) in grid.cubes.iter().enumerate() {
            let mut members = Vec::new();
            if level == top {
                // Complement: wall-meeting at Q but outside the top class.
                let qbox = cube.as_box();
                for (ti, tube) in tubes.iter().enumerate() {
                    if !wall_meeting[ti] {
                        continue;
                    }
                    let meets_q = wall_pts
                        .iter()
                        .any(|&p| qbox.contains(p) && tube.contains(p, tube.dilation));
                    if meets_q && !tmem[level][qi].contains(&ti) {
                        members.push(ti);
                        assigned[ti] = true;
                    }
                }
            } else {
                for &ti in &tmem[level][qi] {
                    let peeled = if level == 0 {
                        !below_mem[0].contains(&ti)
                    } else {
                        let parent = parent_cube(cube, grid)?;
                        let pqi = cube_index(&tgrids[level - 1], &parent)?;
                        !tmem[level - 1][pqi].contains(&ti)
                    };
                    if peeled {
                        members.push(ti);
                        assigned[ti] = true;
                    }
                }
            }
            if !members.is_empty() {
                tran.push(TubeClass {
                    kind: ClassKind::Transverse,
                    scale: dl,
                    cube: *cube,
                    members,
                });
            }
        }
    }

    // Safeguard: attach stragglers to the top-rung complement class of a
    // cube that witnesses their wall hit.
    let mut safeguarded = 0;
    for (ti, tube) in tubes.iter().enumerate() {
        if !wall_meeting[ti] || assigned[ti] {
            continue;
        }
        let hit = wall_pts
            .iter()
            .copied()
            .find(|&p| tube.contains(p, tube.dilation))
            .expect("wall-meeting tube has a wall hit");
        let grid = &tgrids[top];
        if let Some(qi) = grid
            .cubes
            .iter()
            .position(|c| c.as_box().contains(hit))
        {
            let cube = grid.cubes[qi];
            let scale = delta_ladder[top];
            if let Some(class) = tran
                .iter_mut()
                .find(|c| c.scale == scale && c.cube == cube)
            {
                class.members.push(ti);
            } else {
                tran.push(TubeClass {
                    kind: ClassKind::Transverse,
                    scale,
                    cube,
                    members: vec![ti],
                });
            }
            safeguarded += 1;
        }
    }

    Ok(TangTranSplit { cell, tang, tran, safeguarded })
}

fn cube_index(grid: &CubeGrid, cube: &Cube) -> Result<usize> {
    let i = ((cube.corner.x - grid.root.corner.x) / grid.side).round() as usize;
    let j = ((cube.corner.y - grid.root.corner.y) / grid.side).round() as usize;
    if i >= grid.per_axis || j >= grid.per_axis {
        return Err(Error::validation("cube not on this grid"));
    }
    Ok(j * grid.per_axis + i)
}

/// Monte Carlo area of the `rho`-neighborhood of `Z(P)` within `domain`:
/// `(estimate, standard error)`. Distance by Newton projection along the
/// gradient flow, falling back to a grid distance transform for samples
/// where Newton stalls.
pub fn neighborhood_volume(
    poly: &Polynomial2,
    rho: f64,
    domain: &Domain,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(rho > 0.0) {
        return Err(Error::validation("rho must be positive"));
    }
    if n_samples == 0 {
        return Err(Error::validation("need at least one sample"));
    }
    let bb = domain.bounding_box();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut fallback: Option<WallMask> = None;
    let mut hits = 0usize;
    let mut total = 0usize;
    while total < n_samples {
        let p = Vec2::new(
            rng.gen_range(bb.min.x..bb.max.x),
            rng.gen_range(bb.min.y..bb.max.y),
        );
        if !domain.contains(p) {
            continue;
        }
        total += 1;
        let near = match newton_distance(poly, p, rho) {
            Some(dist) => dist <= rho,
            None => {
                let mask = fallback.get_or_insert_with(|| {
                    crate::polypart::wall_for_poly(poly, &bb, 1024, rho)
                        .expect("fallback wall grid")
                });
                mask.grid
                    .index_of(p)
                    .map(|i| mask.distance[i] <= rho)
                    .unwrap_or(false)
            }
        };
        if near {
            hits += 1;
        }
    }
    let area = domain.area();
    let p_hat = hits as f64 / total as f64;
    let estimate = area * p_hat;
    let std_error = area * (p_hat * (1.0 - p_hat) / total as f64).sqrt();
    Ok((estimate, std_error))
}

/// Projected distance from `p` to `Z(P)` by damped Newton along the
/// gradient; `None` when the iteration stalls. Points much farther than
/// the reach of the iteration report `f64::INFINITY`.
fn newton_distance(poly: &Polynomial2, p: Vec2, rho: f64) -> Option<f64> {
    let mut y = p;
    let f0 = poly.eval(p).abs();
    if f0 == 0.0 {
        return Some(0.0);
    }
    for _ in 0..20 {
        let f = poly.eval(y);
        let g = poly.gradient(y);
        let g2 = g.dot(g);
        if g2 < 1e-30 {
            return None;
        }
        let step = Vec2::new(-f * g.x / g2, -f * g.y / g2);
        let step_norm = step.norm();
        y = y + step;
        let dist = (y - p).norm();
        if dist > 20.0 * rho {
            // Far from the variety along this flow; treat as out of reach.
            return Some(f64::INFINITY);
        }
        if step_norm < 1e-13 * (1.0 + dist) {
            let residual = poly.eval(y).abs();
            if residual <= 1e-9 * (1.0 + f0) {
                return Some(dist);
            }
            return None;
        }
    }
    None
}

/// Count the segments of `T` (length `rho / a`) containing a sampled point
/// of the variety where the crossing angle is at least `a`.
pub fn transverse_segments(
    poly: &Polynomial2,
    tube: &Tube,
    a: f64,
    rho: f64,
    singular_threshold: f64,
) -> Result<usize> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::validation("angle must lie in (0, 1)"));
    }
    if !(rho > 0.0) {
        return Err(Error::validation("half-width must be positive"));
    }
    let bb = tube.bounding_box(1.0);
    // Resolve to a quarter of the tube half-width, capped for cost.
    let extent = bb.width().max(bb.height());
    let resolution = ((extent / (rho / 4.0)).ceil() as usize).clamp(64, 2048);
    let sample = sample_variety(poly, &bb, resolution, singular_threshold);
    let seg_len = rho / a;
    let mut segments = std::collections::BTreeSet::new();
    for z in &sample.points {
        if !tube.contains(z.pos, 1.0) {
            continue;
        }
        if angle_to_variety(tube, z) < a {
            continue;
        }
        let u = (z.pos - tube.center).dot(tube.dir) + tube.length / 2.0;
        segments.insert((u / seg_len).floor() as i64);
    }
    Ok(segments.len())
}

/// Parameters of a synthetic tube family with evenly distributed directions.
#[derive(Debug, Clone, Copy)]
pub struct TubeFamilyParams {
    /// Number of direction classes `J`.
    pub directions: usize,
    pub length: f64,
    pub width: f64,
}

impl TubeFamilyParams {
    fn check(&self) -> Result<()> {
        if self.directions as f64 > 10.0 * self.length / self.width {
            return Err(Error::validation(format!(
                "direction count {} violates J <= 10 L / W = {}",
                self.directions,
                10.0 * self.length / self.width
            )));
        }
        Ok(())
    }
}

/// Cardinality of the direction set among tubes fully contained in
/// `B(ball_radius) ∩ N_strip(Z(P))` (containment probed at the corners,
/// edge midpoints, and center of each tube).
pub fn direction_count(
    tubes: &[Tube],
    poly: &Polynomial2,
    ball_center: Vec2,
    ball_radius: f64,
    strip_width: f64,
    family: &TubeFamilyParams,
) -> Result<usize> {
    family.check()?;
    let mut dirs = std::collections::BTreeSet::new();
    for tube in tubes {
        if tube_inside_neighborhood(tube, poly, ball_center, ball_radius, strip_width) {
            dirs.insert(canonical_direction_key(tube.dir));
        }
    }
    Ok(dirs.len())
}

fn tube_inside_neighborhood(
    tube: &Tube,
    poly: &Polynomial2,
    ball_center: Vec2,
    ball_radius: f64,
    strip_width: f64,
) -> bool {
    let corners = tube.polygon(1.0);
    let mut probes: Vec<Vec2> = corners.to_vec();
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        probes.push(Vec2::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0));
    }
    probes.push(tube.center);
    probes.into_iter().all(|p| {
        (p - ball_center).norm() <= ball_radius
            && newton_distance(poly, p, strip_width)
                .map(|d| d <= strip_width)
                .unwrap_or(false)
    })
}

/// Directions are lines, not vectors: canonicalize the angle mod pi and
/// quantize to 1e-9 radians.
fn canonical_direction_key(dir: Vec2) -> i64 {
    let mut angle = dir.y.atan2(dir.x);
    if angle < 0.0 {
        angle += std::f64::consts::PI;
    }
    if angle >= std::f64::consts::PI - 1e-12 {
        angle = 0.0;
    }
    (angle / 1e-9).round() as i64
}

/// `sum_S area(S ∩ T)` over the family by exact convex polygon clipping.
/// The family must hold one tube per direction with `J <= 10 L / W`.
pub fn overlap_sum(tube: &Tube, family: &[Tube]) -> Result<f64> {
    let mut dirs = std::collections::BTreeSet::new();
    for t in family {
        if !dirs.insert(canonical_direction_key(t.dir)) {
            return Err(Error::validation("family repeats a direction"));
        }
    }
    let fam = TubeFamilyParams {
        directions: family.len(),
        length: tube.length,
        width: tube.width,
    };
    fam.check()?;
    let target = tube.polygon(1.0).to_vec();
    let mut total = 0.0;
    for t in family {
        let inter = clip_convex(&t.polygon(1.0).to_vec(), &target);
        total += polygon_area(&inter);
    }
    Ok(total)
}
