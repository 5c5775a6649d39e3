//! Frequency tiles adapted to the curve `(xi, xi^d)`, their dual tube
//! lattices in physical space, and the dyadic cube grids used by the
//! tangential/transverse classification.
//!
//! The scale parameter `R` is identified with the tile count `N` throughout;
//! tubes are `R^d x R` rectangles whose long axis points along the curve
//! normal at the tile center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{is_dyadic, rect_corners, AxisBox, Cube, Vec2};

/// Curve exponent and tile count; the two inputs every tiling derives from.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurveParams {
    /// Exponent of the curve `(xi, xi^d)`, a real number >= 3.
    pub curve_exponent: f64,
    /// Number of tiles `N`; also the physical scale `R`.
    pub tile_count: usize,
}

impl CurveParams {
    pub fn new(curve_exponent: f64, tile_count: usize) -> Result<Self> {
        if !(curve_exponent >= 3.0) {
            return Err(Error::validation(format!(
                "curve exponent must be >= 3, got {curve_exponent}"
            )));
        }
        if tile_count < 1 {
            return Err(Error::validation("tile count must be >= 1"));
        }
        Ok(CurveParams { curve_exponent, tile_count })
    }

    /// The physical scale `R = N`.
    pub fn scale(&self) -> f64 {
        self.tile_count as f64
    }

    /// Tube length `R^d`.
    pub fn tube_length(&self) -> f64 {
        self.scale().powf(self.curve_exponent)
    }

    /// Tube width `R`.
    pub fn tube_width(&self) -> f64 {
        self.scale()
    }
}

/// Point on the curve at parameter `xi`.
pub fn curve_point(curve_exponent: f64, xi: f64) -> Vec2 {
    Vec2::new(xi, xi.powf(curve_exponent))
}

/// Unit tangent to the curve at parameter `xi`.
pub fn curve_tangent(curve_exponent: f64, xi: f64) -> Vec2 {
    Vec2::new(1.0, curve_exponent * xi.powf(curve_exponent - 1.0)).normalized()
}

/// One frequency rectangle of the tiling: `N^-1 x N^-d`, centered on the
/// curve, long side tangent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FreqRect {
    pub center: Vec2,
    /// Unit vector along the long side.
    pub tangent: Vec2,
    /// Long side `N^-1`.
    pub long_side: f64,
    /// Short side `N^-d`.
    pub short_side: f64,
    /// 1-based tile index `j`.
    pub index: usize,
}

impl FreqRect {
    /// Unit curve normal, the long axis of the dual tubes.
    pub fn normal(&self) -> Vec2 {
        self.tangent.perp()
    }

    /// Membership of a frequency point in the rectangle dilated by `dilate`
    /// about its center (`dilate = 2` tests `2w`).
    pub fn contains(&self, freq: Vec2, dilate: f64) -> bool {
        let rel = freq - self.center;
        rel.dot(self.tangent).abs() <= dilate * self.long_side / 2.0
            && rel.dot(self.normal()).abs() <= dilate * self.short_side / 2.0
    }

    pub fn corners(&self, dilate: f64) -> [Vec2; 4] {
        rect_corners(
            self.center,
            self.tangent,
            dilate * self.long_side,
            dilate * self.short_side,
        )
    }
}

/// Build the `N` frequency rectangles with centers at `xi_j = 1 + (j-1)/N`,
/// `j = 1..N`. Only the positive branch `[1, 2)` of the curve is tiled; the
/// negative branch is its mirror image.
pub fn build_frequency_tiles(params: &CurveParams) -> Vec<FreqRect> {
    let n = params.tile_count;
    let d = params.curve_exponent;
    let nf = n as f64;
    (1..=n)
        .map(|j| {
            let xi = 1.0 + (j - 1) as f64 / nf;
            FreqRect {
                center: curve_point(d, xi),
                tangent: curve_tangent(d, xi),
                long_side: 1.0 / nf,
                short_side: nf.powf(-d),
                index: j,
            }
        })
        .collect()
}

/// A physical-space tube: an `R^d x R` rectangle dual to a frequency tile,
/// long axis along the curve normal.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Tube {
    pub center: Vec2,
    /// Unit vector along the long axis.
    pub dir: Vec2,
    pub length: f64,
    pub width: f64,
    /// Dilation factor `R^delta` defining `T*`.
    pub dilation: f64,
}

impl Tube {
    /// Closed membership in the tube scaled by `scale` about its center
    /// (`scale = 1` is `T` itself, `self.dilation` is `T*`).
    pub fn contains(&self, p: Vec2, scale: f64) -> bool {
        let rel = p - self.center;
        rel.dot(self.dir).abs() <= scale * self.length / 2.0
            && rel.dot(self.dir.perp()).abs() <= scale * self.width / 2.0
    }

    /// Half-open membership in the lattice cell of this tube, decided by
    /// lattice-index arithmetic so seams are unambiguous. Meaningful for
    /// tubes produced by [`dual_tube_lattice`] (centers on the canonical
    /// origin-anchored lattice).
    pub fn cell_contains(&self, p: Vec2) -> bool {
        let u_idx = (p.dot(self.dir) / self.length).floor();
        let v_idx = (p.dot(self.dir.perp()) / self.width).floor();
        let cu = (self.center.dot(self.dir) / self.length - 0.5).round();
        let cv = (self.center.dot(self.dir.perp()) / self.width - 0.5).round();
        u_idx == cu && v_idx == cv
    }

    pub fn polygon(&self, scale: f64) -> [Vec2; 4] {
        rect_corners(self.center, self.dir, scale * self.length, scale * self.width)
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    pub fn bounding_box(&self, scale: f64) -> AxisBox {
        let cs = self.polygon(scale);
        let mut bb = AxisBox::new(cs[0], cs[0]);
        for c in &cs[1..] {
            bb.min.x = bb.min.x.min(c.x);
            bb.min.y = bb.min.y.min(c.y);
            bb.max.x = bb.max.x.max(c.x);
            bb.max.y = bb.max.y.max(c.y);
        }
        bb
    }
}

/// Tubes of the canonical lattice dual to `rect` covering `region`.
///
/// The lattice is anchored at the origin in the rotated frame, so the tiling
/// is reproducible independently of the query region. Every point of the
/// region lies in exactly one returned tube (half-open cells).
pub fn dual_tube_lattice(rect: &FreqRect, region: &AxisBox, delta: f64) -> Result<Vec<Tube>> {
    if region.is_degenerate() {
        return Err(Error::validation("empty region for dual tube lattice"));
    }
    let length = 1.0 / rect.short_side;
    let width = 1.0 / rect.long_side;
    let dilation = width.powf(delta);
    let axis = rect.normal();
    // Work in the tube's own frame (axis, axis.perp()) so lattice indexing
    // and membership share one half-open convention.
    let cross = axis.perp();

    let mut u_min = f64::INFINITY;
    let mut u_max = f64::NEG_INFINITY;
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    for c in region.corners() {
        let u = c.dot(axis);
        let v = c.dot(cross);
        u_min = u_min.min(u);
        u_max = u_max.max(u);
        v_min = v_min.min(v);
        v_max = v_max.max(v);
    }

    let i0 = (u_min / length).floor() as i64;
    let i1 = (u_max / length).floor() as i64;
    let k0 = (v_min / width).floor() as i64;
    let k1 = (v_max / width).floor() as i64;

    let mut tubes = Vec::with_capacity(((i1 - i0 + 1) * (k1 - k0 + 1)) as usize);
    for i in i0..=i1 {
        for k in k0..=k1 {
            let u = (i as f64 + 0.5) * length;
            let v = (k as f64 + 0.5) * width;
            tubes.push(Tube {
                center: axis.scale(u) + cross.scale(v),
                dir: axis,
                length,
                width,
                dilation,
            });
        }
    }
    Ok(tubes)
}

/// Which of the two cube-grid families a grid belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridMode {
    /// Side `2^k* / scale`; the tangential ladder with scale in `[1, R^(d-2)]`.
    Tangential,
    /// Side `2^k* / (R^(d-2) * scale)`; the transverse ladder.
    Transverse,
}

/// A full tiling of the root cube by equal dyadic sub-cubes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeGrid {
    pub root: Cube,
    pub side: f64,
    pub per_axis: usize,
    pub mode: GridMode,
    pub scale: f64,
    pub cubes: Vec<Cube>,
}

impl CubeGrid {
    /// Number of halvings from the root to this grid's cubes.
    pub fn level(&self) -> u32 {
        (self.root.side / self.side).log2().round() as u32
    }

    pub fn cube(&self, i: usize, j: usize) -> Cube {
        self.cubes[j * self.per_axis + i]
    }

    /// The grid cube containing `p`, if any.
    pub fn cube_containing(&self, p: Vec2) -> Option<Cube> {
        let i = ((p.x - self.root.corner.x) / self.side).floor();
        let j = ((p.y - self.root.corner.y) / self.side).floor();
        if i < 0.0 || j < 0.0 {
            return None;
        }
        let (i, j) = (i as usize, j as usize);
        if i >= self.per_axis || j >= self.per_axis {
            return None;
        }
        Some(self.cube(i, j))
    }
}

/// The root cube `Q*`: side `2 R^d`, centered at the origin so it contains
/// the ball of radius `R^d`. The dyadic hierarchy is anchored at this cube's
/// corner.
pub fn root_cube(params: &CurveParams) -> Cube {
    let half = params.tube_length();
    Cube::new(Vec2::new(-half, -half), 2.0 * half)
}

/// Subdivide `root` into the full grid of equal dyadic sub-cubes for the
/// given mode and scale.
///
/// `Tangential` grids have cube side `root / scale`; `Transverse` grids have
/// side `root / (R^(d-2) * scale)`. The scale must be dyadic and the
/// subdivision count an integer power of two within `[1, per-axis root
/// resolution]`. The source ranges for the two ladders are asymptotic
/// (`[1, R^(d-2)]` and `[R^delta/2, R/2^5]`); at desk scale the transverse
/// range can be empty, so this constructor enforces dyadicity and geometric
/// validity and leaves ladder policy to [`transverse_scale_ladder`].
pub fn cube_grid(
    root: Cube,
    scale: f64,
    mode: GridMode,
    params: &CurveParams,
) -> Result<CubeGrid> {
    if !is_dyadic(scale) {
        return Err(Error::validation(format!("scale {scale} is not dyadic")));
    }
    let divisor = match mode {
        GridMode::Tangential => {
            let max = params.scale().powf(params.curve_exponent - 2.0);
            if scale < 1.0 || scale > max * (1.0 + 1e-12) {
                return Err(Error::validation(format!(
                    "tangential scale {scale} outside [1, R^(d-2)] = [1, {max}]"
                )));
            }
            scale
        }
        GridMode::Transverse => {
            let div = params.scale().powf(params.curve_exponent - 2.0) * scale;
            if scale > params.scale() / 2.0 {
                return Err(Error::validation(format!(
                    "transverse scale {scale} exceeds R/2"
                )));
            }
            div
        }
    };
    let per_axis_f = divisor;
    if per_axis_f < 1.0 - 1e-12 {
        return Err(Error::validation(format!(
            "subdivision count {per_axis_f} below 1; scale too small for this root"
        )));
    }
    let per_axis = per_axis_f.round();
    if (per_axis - per_axis_f).abs() > 1e-9 || !is_dyadic(per_axis) {
        return Err(Error::validation(format!(
            "subdivision count {per_axis_f} is not a dyadic integer"
        )));
    }
    let per_axis = per_axis as usize;
    let side = root.side / per_axis as f64;
    let mut cubes = Vec::with_capacity(per_axis * per_axis);
    for j in 0..per_axis {
        for i in 0..per_axis {
            cubes.push(Cube::new(
                Vec2::new(
                    root.corner.x + i as f64 * side,
                    root.corner.y + j as f64 * side,
                ),
                side,
            ));
        }
    }
    Ok(CubeGrid { root, side, per_axis, mode, scale, cubes })
}

/// The dyadic parent of `cube` inside the hierarchy anchored at `grid.root`:
/// the cube of doubled side containing it.
pub fn parent_cube(cube: &Cube, grid: &CubeGrid) -> Result<Cube> {
    if cube.side >= grid.root.side {
        return Err(Error::validation("root has no parent"));
    }
    let parent_side = cube.side * 2.0;
    let ix = ((cube.corner.x - grid.root.corner.x) / parent_side).floor();
    let iy = ((cube.corner.y - grid.root.corner.y) / parent_side).floor();
    Ok(Cube::new(
        Vec2::new(
            grid.root.corner.x + ix * parent_side,
            grid.root.corner.y + iy * parent_side,
        ),
        parent_side,
    ))
}

/// Dyadic scales of the tangential ladder, `1, 2, ..., R^(d-2)`.
pub fn tangential_scale_ladder(params: &CurveParams) -> Vec<f64> {
    let max = params.scale().powf(params.curve_exponent - 2.0);
    let mut out = Vec::new();
    let mut s = 1.0;
    while s <= max * (1.0 + 1e-12) {
        out.push(s);
        s *= 2.0;
    }
    out
}

/// Smallest dyadic number >= `x` (for positive `x`).
fn smallest_dyadic_at_least(x: f64) -> f64 {
    let l = x.log2();
    let e = if (l - l.round()).abs() < 1e-9 { l.round() } else { l.ceil() };
    2f64.powf(e)
}

/// Largest dyadic number <= `x` (for positive `x`).
fn largest_dyadic_at_most(x: f64) -> f64 {
    let l = x.log2();
    let e = if (l - l.round()).abs() < 1e-9 { l.round() } else { l.floor() };
    2f64.powf(e)
}

/// Dyadic scales of the transverse ladder.
///
/// The source range is `[R^delta/2, R/2^5]`, intersected with geometric
/// validity (the subdivision count `R^(d-2) * scale` must be >= 1). At desk
/// scale the intersection is often empty; the ladder then degenerates to a
/// single rung at the largest valid scale <= `R/2^5` (or, failing that, the
/// smallest geometrically valid scale), to which the complement class
/// attaches.
pub fn transverse_scale_ladder(params: &CurveParams, delta: f64) -> Vec<f64> {
    let r = params.scale();
    let hi = r / 32.0;
    let geo_min = r.powf(2.0 - params.curve_exponent);
    let lo = (r.powf(delta) / 2.0).max(geo_min);
    let mut out = Vec::new();
    let mut s = smallest_dyadic_at_least(lo);
    while s <= hi * (1.0 + 1e-12) {
        out.push(s);
        s *= 2.0;
    }
    if out.is_empty() {
        let top = largest_dyadic_at_most(hi);
        if top >= geo_min * (1.0 - 1e-12) {
            out.push(top);
        } else {
            out.push(smallest_dyadic_at_least(geo_min));
        }
    }
    out
}
