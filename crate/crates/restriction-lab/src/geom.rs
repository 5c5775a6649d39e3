//! Plane geometry shared across the crate: vectors, axis-aligned boxes,
//! dyadic cubes, integration domains, and exact convex-polygon clipping.

use serde::{Deserialize, Serialize};

/// A point or direction in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Signed z-component of the cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }

    /// Rotate by -90 degrees: the normal convention used for dual tubes,
    /// mapping the tangent (1, s) to (s, -1) before normalization.
    pub fn perp(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

/// Closed axis-aligned rectangle `[min.x, max.x] x [min.y, max.y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub min: Vec2,
    pub max: Vec2,
}

impl AxisBox {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        AxisBox { min, max }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        AxisBox::new(
            Vec2::new(x0.min(x1), y0.min(y1)),
            Vec2::new(x0.max(x1), y0.max(y1)),
        )
    }

    /// Square box centered at `c` with the given side.
    pub fn centered_square(c: Vec2, side: f64) -> Self {
        let h = side / 2.0;
        AxisBox::new(Vec2::new(c.x - h, c.y - h), Vec2::new(c.x + h, c.y + h))
    }

    pub fn is_degenerate(&self) -> bool {
        self.max.x < self.min.x || self.max.y < self.min.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new((self.min.x + self.max.x) / 2.0, (self.min.y + self.max.y) / 2.0)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [
            self.min,
            Vec2::new(self.max.x, self.min.y),
            self.max,
            Vec2::new(self.min.x, self.max.y),
        ]
    }

    pub fn intersect(&self, other: &AxisBox) -> AxisBox {
        AxisBox::new(
            Vec2::new(self.min.x.max(other.min.x), self.min.y.max(other.min.y)),
            Vec2::new(self.max.x.min(other.max.x), self.max.y.min(other.max.y)),
        )
    }
}

/// Axis-aligned square addressed by its lower-left corner, the cell shape of
/// dyadic grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub corner: Vec2,
    pub side: f64,
}

impl Cube {
    pub fn new(corner: Vec2, side: f64) -> Self {
        Cube { corner, side }
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.corner.x + self.side / 2.0, self.corner.y + self.side / 2.0)
    }

    pub fn as_box(&self) -> AxisBox {
        AxisBox::new(
            self.corner,
            Vec2::new(self.corner.x + self.side, self.corner.y + self.side),
        )
    }

    /// Concentric dilate: same center, side scaled by `k` (e.g. 3Q).
    pub fn dilate(&self, k: f64) -> Cube {
        let c = self.center();
        let s = self.side * k;
        Cube::new(Vec2::new(c.x - s / 2.0, c.y - s / 2.0), s)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.as_box().contains(p)
    }
}

/// Integration domain for norms and Monte Carlo volume estimates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum Domain {
    Box(AxisBox),
    Ball { center: Vec2, radius: f64 },
}

impl Domain {
    pub fn ball(center: Vec2, radius: f64) -> Self {
        Domain::Ball { center, radius }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        match self {
            Domain::Box(b) => b.contains(p),
            Domain::Ball { center, radius } => (p - *center).norm() <= *radius,
        }
    }

    pub fn bounding_box(&self) -> AxisBox {
        match self {
            Domain::Box(b) => *b,
            Domain::Ball { center, radius } => {
                AxisBox::centered_square(*center, 2.0 * radius)
            }
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Domain::Box(b) => b.area(),
            Domain::Ball { radius, .. } => std::f64::consts::PI * radius * radius,
        }
    }
}

/// True when `x` is a positive power of two, integer exponents of either sign.
pub fn is_dyadic(x: f64) -> bool {
    if !(x > 0.0) || !x.is_finite() {
        return false;
    }
    let l = x.log2();
    (l - l.round()).abs() < 1e-9
}

/// Corners of the rotated rectangle with the given center, unit long axis,
/// and side lengths, in counter-clockwise order.
pub fn rect_corners(center: Vec2, axis: Vec2, long: f64, short: f64) -> [Vec2; 4] {
    let u = axis.scale(long / 2.0);
    let v = axis.perp().scale(short / 2.0);
    // perp() rotates clockwise, so (v, u) is the positively oriented frame.
    [
        center - u - v,
        center - u + v,
        center + u + v,
        center + u - v,
    ]
}

/// Clip a convex polygon by the half-plane `{ p : (p - a) x (b - a) >= 0 }`
/// (points to the left of the directed edge a -> b). Sutherland-Hodgman step.
pub fn clip_halfplane(poly: &[Vec2], a: Vec2, b: Vec2) -> Vec<Vec2> {
    let side = |p: Vec2| (b - a).cross(p - a);
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..n {
        let s = poly[i];
        let e = poly[(i + 1) % n];
        let sc = side(s);
        let ec = side(e);
        let s_in = sc >= 0.0;
        let e_in = ec >= 0.0;
        match (s_in, e_in) {
            (true, true) => out.push(e),
            (true, false) | (false, true) => {
                let denom = sc - ec;
                if denom.abs() > 0.0 {
                    let t = sc / denom;
                    out.push(Vec2::new(
                        s.x + (e.x - s.x) * t,
                        s.y + (e.y - s.y) * t,
                    ));
                }
                if e_in {
                    out.push(e);
                }
            }
            (false, false) => {}
        }
    }
    out
}

/// Intersection of a convex polygon with a convex clip polygon (CCW).
pub fn clip_convex(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut poly = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if poly.is_empty() {
            break;
        }
        poly = clip_halfplane(&poly, clip[i], clip[(i + 1) % n]);
    }
    poly
}

/// Shoelace area of a simple polygon (positive for CCW orientation).
pub fn polygon_area(poly: &[Vec2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p.cross(q);
    }
    acc.abs() / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perp_is_orthogonal() {
        let t = Vec2::new(1.0, 3.0).normalized();
        assert!(t.dot(t.perp()).abs() < 1e-15);
        assert!((t.perp().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dyadic_detection() {
        for x in [1.0, 2.0, 0.5, 1024.0, 0.0078125] {
            assert!(is_dyadic(x), "{x} should be dyadic");
        }
        for x in [0.0, -2.0, 3.0, 1.5, f64::NAN] {
            assert!(!is_dyadic(x), "{x} should not be dyadic");
        }
    }

    #[test]
    fn unit_squares_overlap() {
        let a = AxisBox::from_corners(0.0, 0.0, 2.0, 2.0).corners().to_vec();
        let b = AxisBox::from_corners(1.0, 1.0, 3.0, 3.0).corners().to_vec();
        let inter = clip_convex(&a, &b);
        assert!((polygon_area(&inter) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_polygons_clip_to_empty() {
        let a = AxisBox::from_corners(0.0, 0.0, 1.0, 1.0).corners().to_vec();
        let b = AxisBox::from_corners(5.0, 5.0, 6.0, 6.0).corners().to_vec();
        assert_eq!(polygon_area(&clip_convex(&a, &b)), 0.0);
    }

    #[test]
    fn rotated_rect_area_preserved_under_clipping_by_itself() {
        let c = rect_corners(Vec2::new(1.0, 2.0), Vec2::new(3.0, -1.0).normalized(), 8.0, 2.0);
        let inter = clip_convex(&c, &c);
        assert!((polygon_area(&inter) - 16.0).abs() < 1e-9);
    }
}
