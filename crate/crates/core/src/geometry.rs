//! Oriented box geometry: footprint polygons, convex clipping, IoU, convex
//! hulls and minimum-area rectangles.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertices closer than this are merged.
pub const VERTEX_EPS: f64 = 1e-9;
/// Polygons with less area than this are treated as empty.
pub const AREA_EPS: f64 = 1e-12;
/// Lower bound on fitted rectangle extents.
pub const MIN_EXTENT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z component of the 3-D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(TAU) - PI;
    // rem_euclid may round up to exactly TAU
    if wrapped >= PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Wraps an angle into `[-π/2, π/2)`, i.e. heading modulo π.
pub fn normalize_half_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI / 2.0).rem_euclid(PI) - PI / 2.0;
    if wrapped >= PI / 2.0 {
        wrapped - PI
    } else {
        wrapped
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_two_pi(theta: f64) -> f64 {
    let wrapped = theta.rem_euclid(TAU);
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// A 7-DoF 3-D box. `length` runs along `heading`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub heading: f64,
}

impl OrientedBox {
    /// Validates extents and normalizes the heading into `[-π, π)`.
    pub fn new(
        cx: f64,
        cy: f64,
        cz: f64,
        length: f64,
        width: f64,
        height: f64,
        heading: f64,
    ) -> Result<Self> {
        let finite = [cx, cy, cz, length, width, height, heading]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("box parameters must be finite".into()));
        }
        if !(length > 0.0 && width > 0.0 && height > 0.0) {
            return Err(Error::InvalidInput(format!(
                "box extents must be positive, got {length} x {width} x {height}"
            )));
        }
        Ok(OrientedBox {
            cx,
            cy,
            cz,
            length,
            width,
            height,
            heading: normalize_angle(heading),
        })
    }

    pub fn center_xy(&self) -> Vec2 {
        Vec2::new(self.cx, self.cy)
    }

    pub fn footprint_area(&self) -> f64 {
        self.length * self.width
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn z_min(&self) -> f64 {
        self.cz - self.height / 2.0
    }

    pub fn z_max(&self) -> f64 {
        self.cz + self.height / 2.0
    }

    /// Footprint corners, counter-clockwise.
    pub fn corners(&self) -> [Vec2; 4] {
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let c = self.center_xy();
        [
            Vec2::new(hl, hw),
            Vec2::new(-hl, hw),
            Vec2::new(-hl, -hw),
            Vec2::new(hl, -hw),
        ]
        .map(|p| p.rotate(self.heading) + c)
    }

    /// Same box grown by `margin` on every side of the footprint.
    pub fn inflated(&self, margin: f64) -> OrientedBox {
        OrientedBox {
            length: self.length + 2.0 * margin,
            width: self.width + 2.0 * margin,
            ..*self
        }
    }

    /// Whether a planar point lies in the footprint, within `tol`.
    pub fn contains_xy(&self, p: Vec2, tol: f64) -> bool {
        let local = (p - self.center_xy()).rotate(-self.heading);
        local.x.abs() <= self.length / 2.0 + tol && local.y.abs() <= self.width / 2.0 + tol
    }
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexPolygon {
    vertices: Vec<Vec2>,
}

impl ConvexPolygon {
    pub fn empty() -> Self {
        ConvexPolygon::default()
    }

    /// Builds a polygon from counter-clockwise vertices, merging near
    /// duplicates. Clockwise input is reversed.
    pub fn from_vertices(vertices: Vec<Vec2>) -> Self {
        let mut cleaned = dedup_vertices(vertices);
        if signed_area(&cleaned) < 0.0 {
            cleaned.reverse();
        }
        ConvexPolygon { vertices: cleaned }
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        self.vertices.len() < 3
    }
}

fn dedup_vertices(vertices: Vec<Vec2>) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::with_capacity(vertices.len());
    for v in vertices {
        if out.last().is_none_or(|last| last.distance(v) > VERTEX_EPS) {
            out.push(v);
        }
    }
    while out.len() > 1 && out[0].distance(out[out.len() - 1]) <= VERTEX_EPS {
        out.pop();
    }
    out
}

fn signed_area(vertices: &[Vec2]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for (i, a) in vertices.iter().enumerate() {
        let b = vertices[(i + 1) % vertices.len()];
        twice += a.cross(b);
    }
    twice / 2.0
}

pub fn box_to_polygon(b: &OrientedBox) -> ConvexPolygon {
    ConvexPolygon {
        vertices: b.corners().to_vec(),
    }
}

/// Shoelace area; zero for fewer than three vertices.
pub fn polygon_area(p: &ConvexPolygon) -> f64 {
    signed_area(&p.vertices).abs()
}

/// Intersection of two convex polygons by successive half-plane cuts of
/// `a` against each edge of `b`.
pub fn convex_intersect(a: &ConvexPolygon, b: &ConvexPolygon) -> ConvexPolygon {
    if a.is_degenerate() || b.is_degenerate() {
        return ConvexPolygon::empty();
    }
    let mut subject = a.vertices.clone();
    let clip = &b.vertices;
    for i in 0..clip.len() {
        if subject.is_empty() {
            break;
        }
        let p = clip[i];
        let q = clip[(i + 1) % clip.len()];
        let edge = q - p;
        let side = |v: Vec2| edge.cross(v - p);

        let mut next = Vec::with_capacity(subject.len() + 2);
        for j in 0..subject.len() {
            let cur = subject[j];
            let prev = subject[(j + subject.len() - 1) % subject.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    next.push(segment_cut(prev, cur, sp, sc));
                }
                next.push(cur);
            } else if sp >= 0.0 {
                next.push(segment_cut(prev, cur, sp, sc));
            }
        }
        subject = next;
    }
    let cleaned = dedup_vertices(subject);
    if cleaned.len() < 3 || signed_area(&cleaned) < AREA_EPS {
        return ConvexPolygon::empty();
    }
    ConvexPolygon { vertices: cleaned }
}

fn segment_cut(a: Vec2, b: Vec2, sa: f64, sb: f64) -> Vec2 {
    let t = sa / (sa - sb);
    a + (b - a) * t
}

/// Area of the footprint intersection of two boxes.
pub fn intersection_area_bev(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let inter = convex_intersect(&box_to_polygon(a), &box_to_polygon(b));
    let area = polygon_area(&inter);
    if area < AREA_EPS {
        0.0
    } else {
        area
    }
}

/// Bird's-eye-view IoU of the footprints.
pub fn iou_bev(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if same_footprint(a, b) {
        return 1.0;
    }
    let inter = intersection_area_bev(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.footprint_area() + b.footprint_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Full 3-D IoU: footprint intersection times vertical overlap.
pub fn iou_3d(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let dz = a.z_max().min(b.z_max()) - a.z_min().max(b.z_min());
    if dz <= 0.0 {
        return 0.0;
    }
    let inter_area = if same_footprint(a, b) {
        a.footprint_area()
    } else {
        intersection_area_bev(a, b)
    };
    if inter_area == 0.0 {
        return 0.0;
    }
    let inter = inter_area * dz;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn same_footprint(a: &OrientedBox, b: &OrientedBox) -> bool {
    a.cx == b.cx
        && a.cy == b.cy
        && a.length == b.length
        && a.width == b.width
        && a.heading == b.heading
}

/// Andrew's monotone chain. Collinear boundary points are dropped; all
/// collinear input yields the two extreme points.
pub fn convex_hull(points: &[Vec2]) -> Result<ConvexPolygon> {
    if points.is_empty() {
        return Err(Error::InvalidInput("convex hull of an empty point set".into()));
    }
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a.distance(*b) <= VERTEX_EPS);
    if pts.len() < 3 {
        return Ok(ConvexPolygon { vertices: pts });
    }

    let mut hull: Vec<Vec2> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if (b - a).cross(p - a) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        // last point of each chain starts the other one
        hull.pop();
    }
    let hull = dedup_vertices(hull);
    if hull.len() < 3 || signed_area(&hull) <= AREA_EPS {
        // collinear: keep the two extremes
        let (first, last) = (pts[0], pts[pts.len() - 1]);
        return Ok(ConvexPolygon {
            vertices: vec![first, last],
        });
    }
    Ok(ConvexPolygon { vertices: hull })
}

/// Planar rectangle: the footprint part of an [`OrientedBox`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect2 {
    pub cx: f64,
    pub cy: f64,
    pub length: f64,
    pub width: f64,
    pub heading: f64,
}

impl Rect2 {
    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.cx, self.cy)
    }

    pub fn to_box(&self, cz: f64, height: f64) -> Result<OrientedBox> {
        OrientedBox::new(
            self.cx,
            self.cy,
            cz,
            self.length,
            self.width,
            height,
            self.heading,
        )
    }

    /// Builds a canonical rectangle from extents measured along `axis`
    /// and its perpendicular. The heading runs along the longer side and
    /// lies in `[-π/2, π/2)`; extents are floored at [`MIN_EXTENT`].
    pub fn from_axis_extents(center: Vec2, axis: Vec2, along: f64, across: f64) -> Rect2 {
        let (length, width, dir) = if along >= across {
            (along, across, axis)
        } else {
            (across, along, axis.perp())
        };
        Rect2 {
            cx: center.x,
            cy: center.y,
            length: length.max(MIN_EXTENT),
            width: width.max(MIN_EXTENT),
            heading: normalize_half_angle(dir.angle()),
        }
    }
}

/// Rectangle aligned with `axis` enclosing `points`.
pub fn enclosing_rect_along(points: &[Vec2], axis: Vec2) -> Rect2 {
    let u = axis.normalized();
    let v = u.perp();
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        let (a, b) = (p.dot(u), p.dot(v));
        umin = umin.min(a);
        umax = umax.max(a);
        vmin = vmin.min(b);
        vmax = vmax.max(b);
    }
    let center = u * ((umin + umax) / 2.0) + v * ((vmin + vmax) / 2.0);
    Rect2::from_axis_extents(center, u, umax - umin, vmax - vmin)
}

/// Minimum-area enclosing rectangle of a convex hull by rotating calipers.
///
/// Degenerate hulls (one or two vertices) produce a rectangle whose
/// thin side is [`MIN_EXTENT`].
pub fn min_area_rect(hull: &ConvexPolygon) -> Rect2 {
    let v = hull.vertices();
    match v.len() {
        0 => Rect2 {
            cx: 0.0,
            cy: 0.0,
            length: MIN_EXTENT,
            width: MIN_EXTENT,
            heading: 0.0,
        },
        1 => Rect2::from_axis_extents(v[0], Vec2::new(1.0, 0.0), 0.0, 0.0),
        2 => {
            let d = v[1] - v[0];
            let axis = if d.norm() > 0.0 {
                d
            } else {
                Vec2::new(1.0, 0.0)
            };
            Rect2::from_axis_extents((v[0] + v[1]) * 0.5, axis, d.norm(), 0.0)
        }
        _ => calipers(v),
    }
}

fn calipers(v: &[Vec2]) -> Rect2 {
    let h = v.len();
    let next = |i: usize| (i + 1) % h;
    let edge_dir = |i: usize| (v[next(i)] - v[i]).normalized();

    // farthest vertices along +edge, +inward normal and -edge for edge 0
    let u0 = edge_dir(0);
    let n0 = u0.perp();
    let argmax = |f: &dyn Fn(Vec2) -> f64| {
        (0..h)
            .max_by(|&a, &b| f(v[a]).total_cmp(&f(v[b])))
            .unwrap_or(0)
    };
    let mut right = argmax(&|p| p.dot(u0));
    let mut top = argmax(&|p| p.dot(n0));
    let mut left = argmax(&|p| -p.dot(u0));

    let mut best: Option<(f64, Rect2)> = None;
    for i in 0..h {
        let u = edge_dir(i);
        let n = u.perp();
        while v[next(right)].dot(u) > v[right].dot(u) + 1e-15 {
            right = next(right);
        }
        while v[next(top)].dot(n) > v[top].dot(n) + 1e-15 {
            top = next(top);
        }
        while v[next(left)].dot(u) < v[left].dot(u) - 1e-15 {
            left = next(left);
        }

        let base = v[i];
        let umin = (v[left] - base).dot(u);
        let umax = (v[right] - base).dot(u);
        let vmax = (v[top] - base).dot(n);
        let area = (umax - umin) * vmax;
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            let center = base + u * ((umin + umax) / 2.0) + n * (vmax / 2.0);
            best = Some((area, Rect2::from_axis_extents(center, u, umax - umin, vmax)));
        }
    }
    best.map(|(_, r)| r).expect("hull has at least three vertices")
}
