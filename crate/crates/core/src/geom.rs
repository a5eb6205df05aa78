//! Planar geometry shared by the map, the simulator and the sensors.
//!
//! Everything here works in the x/y plane. Heights are carried by the data
//! model but never enter these computations.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector pointing along `angle` (counter-clockwise from +x).
    #[inline]
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, y: s }
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product; positive when `o` is to the left of `self`.
    #[inline]
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Left-hand normal (rotated +90 degrees).
    #[inline]
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    #[inline]
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            self
        }
    }

    #[inline]
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(p: [f64; 2]) -> Self {
        Vec2::new(p[0], p[1])
    }
}

impl From<[f64; 3]> for Vec2 {
    fn from(p: [f64; 3]) -> Self {
        Vec2::new(p[0], p[1])
    }
}

/// Wraps an angle into `[-pi, pi)`. Values already in range are returned untouched.
pub fn normalize_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r >= PI {
        r - TAU
    } else {
        r
    }
}

/// Signed area orientation of the triangle (a, b, c).
#[inline]
pub fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

/// True iff segments `ab` and `cd` cross at a single interior point.
/// Touching endpoints and collinear overlaps do not count.
pub fn segments_cross(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
}

/// Distance along a unit-direction ray to segment `ab`, if hit.
pub fn ray_segment(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let ab = b - a;
    let denom = dir.cross(ab);
    if denom.abs() < 1e-12 {
        return None;
    }
    let ao = a - origin;
    let t = ao.cross(ab) / denom;
    let u = ao.cross(dir) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn from_points<I: IntoIterator<Item = Vec2>>(pts: I) -> Option<Aabb> {
        let mut it = pts.into_iter();
        let first = it.next()?;
        let mut bb = Aabb {
            min: first,
            max: first,
        };
        for p in it {
            bb.min.x = bb.min.x.min(p.x);
            bb.min.y = bb.min.y.min(p.y);
            bb.max.x = bb.max.x.max(p.x);
            bb.max.y = bb.max.y.max(p.y);
        }
        Some(bb)
    }

    pub fn union(self, o: Aabb) -> Aabb {
        Aabb {
            min: Vec2::new(self.min.x.min(o.min.x), self.min.y.min(o.min.y)),
            max: Vec2::new(self.max.x.max(o.max.x), self.max.y.max(o.max.y)),
        }
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        (dx * dx + dy * dy).sqrt()
    }
}

/// Oriented rectangle footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
        }
    }

    #[inline]
    pub fn axes(&self) -> (Vec2, Vec2) {
        let u = Vec2::from_angle(self.heading);
        (u, u.perp())
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let (u, v) = self.axes();
        let fu = u * self.half_length;
        let fv = v * self.half_width;
        let c = self.center;
        [c + fu + fv, c - fu + fv, c - fu - fv, c + fu - fv]
    }

    pub fn bounding_radius(&self) -> f64 {
        (self.half_length * self.half_length + self.half_width * self.half_width).sqrt()
    }

    /// Coordinates of `p` in the box frame.
    #[inline]
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        let (u, v) = self.axes();
        let r = p - self.center;
        Vec2::new(r.dot(u), r.dot(v))
    }

    /// Closed containment: boundary points are inside.
    pub fn contains(&self, p: Vec2) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.half_length && l.y.abs() <= self.half_width
    }

    /// Half-extent of the box projected on a unit `axis`.
    #[inline]
    pub fn projected_radius(&self, axis: Vec2) -> f64 {
        let (u, v) = self.axes();
        self.half_length * u.dot(axis).abs() + self.half_width * v.dot(axis).abs()
    }

    /// Separating-axis overlap test. Boxes that only touch count as overlapping;
    /// any positive gap along one of the four face normals separates them.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let reach = self.bounding_radius() + other.bounding_radius();
        let delta = other.center - self.center;
        if delta.norm_sq() > reach * reach {
            return false;
        }
        let (u1, v1) = self.axes();
        let (u2, v2) = other.axes();
        for axis in [u1, v1, u2, v2] {
            let dist = delta.dot(axis).abs();
            if dist > self.projected_radius(axis) + other.projected_radius(axis) {
                return false;
            }
        }
        true
    }

    /// Distance along a unit-direction ray to the box boundary (slab method).
    /// A ray starting inside the box reports 0.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let (u, v) = self.axes();
        let o = origin - self.center;
        let ol = [o.dot(u), o.dot(v)];
        let dl = [dir.dot(u), dir.dot(v)];
        let half = [self.half_length, self.half_width];
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        for k in 0..2 {
            if dl[k].abs() < 1e-15 {
                if ol[k].abs() > half[k] {
                    return None;
                }
            } else {
                let inv = 1.0 / dl[k];
                let mut t1 = (-half[k] - ol[k]) * inv;
                let mut t2 = (half[k] - ol[k]) * inv;
                if t1 > t2 {
                    std::mem::swap(&mut t1, &mut t2);
                }
                t_min = t_min.max(t1);
                t_max = t_max.min(t2);
                if t_min > t_max {
                    return None;
                }
            }
        }
        if t_max < 0.0 {
            None
        } else {
            Some(t_min.max(0.0))
        }
    }
}

/// Result of projecting a point onto a [`Polyline`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point from the polyline start.
    pub s: f64,
    /// Signed perpendicular offset from the chosen segment's line, positive to the left.
    pub d: f64,
    /// Euclidean distance from the point to the foot point.
    pub distance: f64,
    pub segment: usize,
    pub foot: Vec2,
    /// True when the perpendicular foot fell strictly inside the segment.
    pub interior: bool,
}

/// A 2D polyline with cached cumulative arc lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    /// Builds a polyline from at least two points with nonzero consecutive spacing.
    pub fn new(points: Vec<Vec2>) -> Option<Self> {
        if points.len() < 2 {
            return None;
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        let mut acc = 0.0;
        for w in points.windows(2) {
            let len = w[0].distance(w[1]);
            if !(len > 0.0 && len.is_finite()) {
                return None;
            }
            acc += len;
            cumulative.push(acc);
        }
        Some(Self { points, cumulative })
    }

    /// Like [`Polyline::new`] but drops consecutive duplicate points first.
    pub fn from_points_dedup<I: IntoIterator<Item = Vec2>>(pts: I) -> Option<Self> {
        let mut points: Vec<Vec2> = Vec::new();
        for p in pts {
            if points.last().map_or(true, |q| *q != p) {
                points.push(p);
            }
        }
        Self::new(points)
    }

    /// Drops every point closer than `min_spacing` to the last kept one.
    pub fn from_points_min_spacing<I: IntoIterator<Item = Vec2>>(pts: I, min_spacing: f64) -> Option<Self> {
        let mut points: Vec<Vec2> = Vec::new();
        for p in pts {
            if points.last().map_or(true, |q| q.distance(p) >= min_spacing) {
                points.push(p);
            }
        }
        Self::new(points)
    }

    #[inline]
    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    #[inline]
    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    #[inline]
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn start(&self) -> Vec2 {
        self.points[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.points.last().unwrap()
    }

    pub fn num_segments(&self) -> usize {
        self.points.len() - 1
    }

    /// Index of the segment containing arc length `s` (clamped).
    pub fn segment_at(&self, s: f64) -> usize {
        let n = self.num_segments();
        let idx = self.cumulative.partition_point(|&c| c <= s);
        idx.saturating_sub(1).min(n - 1)
    }

    fn project_range(&self, p: Vec2, first: usize, last: usize) -> Projection {
        let mut best: Option<(f64, usize, f64)> = None;
        for i in first..=last {
            let a = self.points[i];
            let ab = self.points[i + 1] - a;
            let t = ((p - a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0);
            let foot = a + ab * t;
            let dist_sq = (p - foot).norm_sq();
            if best.map_or(true, |(b, _, _)| dist_sq < b) {
                best = Some((dist_sq, i, t));
            }
        }
        let (dist_sq, i, t) = best.expect("non-empty segment range");
        let a = self.points[i];
        let ab = self.points[i + 1] - a;
        let seg_len = self.cumulative[i + 1] - self.cumulative[i];
        let dir = ab * (1.0 / seg_len);
        Projection {
            s: self.cumulative[i] + t * seg_len,
            d: dir.cross(p - a),
            distance: dist_sq.sqrt(),
            segment: i,
            foot: a + ab * t,
            interior: t > 0.0 && t < 1.0,
        }
    }

    /// Projects `p` onto the globally nearest segment.
    pub fn project(&self, p: Vec2) -> Projection {
        self.project_range(p, 0, self.num_segments() - 1)
    }

    /// Projects `p` onto the nearest segment overlapping the arc window `[s_min, s_max]`.
    pub fn project_window(&self, p: Vec2, s_min: f64, s_max: f64) -> Projection {
        let first = self.segment_at(s_min);
        let last = self.segment_at(s_max).max(first);
        self.project_range(p, first, last)
    }

    /// Bounding box of the segments overlapping the arc window `[s_min, s_max]`.
    pub fn window_aabb(&self, s_min: f64, s_max: f64) -> Aabb {
        let first = self.segment_at(s_min);
        let last = self.segment_at(s_max).max(first);
        Aabb::from_points(self.points[first..=last + 1].iter().copied()).expect("non-empty segment range")
    }

    /// Point and tangent heading at arc length `s`, clamped to the ends.
    pub fn pose_at(&self, s: f64) -> (Vec2, f64) {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        let seg_len = self.cumulative[i + 1] - self.cumulative[i];
        let t = ((s - self.cumulative[i]) / seg_len).clamp(0.0, 1.0);
        let ab = b - a;
        (a + ab * t, ab.angle())
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        self.pose_at(s).0
    }

    /// Inverse of the Frenet projection: walk `s` along the line and offset `d` along the left normal.
    pub fn frenet_to_cartesian(&self, s: f64, d: f64) -> Vec2 {
        let (p, heading) = self.pose_at(s);
        p + Vec2::from_angle(heading).perp() * d
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(self.points.iter().copied()).unwrap()
    }
}

/// Length of the polyline through `points` (zero for fewer than two points).
pub fn path_length<I: IntoIterator<Item = Vec2>>(points: I) -> f64 {
    let mut it = points.into_iter();
    let Some(mut prev) = it.next() else {
        return 0.0;
    };
    let mut acc = 0.0;
    for p in it {
        acc += prev.distance(p);
        prev = p;
    }
    acc
}

/// Closed even-odd point-in-polygon test; points on an edge count as inside.
pub fn point_in_polygon(ring: &[Vec2], p: Vec2) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = ring[i];
        let b = ring[j];
        if on_segment(a, b, p) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    let ab = b - a;
    let len = ab.norm();
    if len == 0.0 {
        return a == p;
    }
    if (ab.cross(p - a) / len).abs() > 1e-12 {
        return false;
    }
    let t = (p - a).dot(ab);
    t >= 0.0 && t <= ab.norm_sq()
}

/// True when no two non-adjacent edges of the closed ring intersect.
pub fn ring_is_simple(ring: &[Vec2]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let edges: Vec<(Vec2, Vec2)> = (0..n).map(|i| (ring[i], ring[(i + 1) % n])).collect();
    let boxes: Vec<Aabb> = edges
        .iter()
        .map(|&(a, b)| Aabb::from_points([a, b]).unwrap())
        .collect();
    for i in 0..n {
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (bi, bj) = (boxes[i], boxes[j]);
            if bi.max.x < bj.min.x || bj.max.x < bi.min.x || bi.max.y < bj.min.y || bj.max.y < bi.min.y {
                continue;
            }
            let (a, b) = edges[i];
            let (c, d) = edges[j];
            if segments_cross(a, b, c, d) || touches(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn touches(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    on_segment(a, b, c) || on_segment(a, b, d) || on_segment(c, d, a) || on_segment(c, d, b)
}

/// Offsets a centerline sideways by `offset` meters (positive = left) using mitred vertex normals.
pub fn offset_polyline(points: &[Vec2], offset: f64) -> Vec<Vec2> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let normal = if i == 0 {
                (points[1] - points[0]).normalized().perp()
            } else if i == n - 1 {
                (points[n - 1] - points[n - 2]).normalized().perp()
            } else {
                let n1 = (points[i] - points[i - 1]).normalized().perp();
                let n2 = (points[i + 1] - points[i]).normalized().perp();
                let m = (n1 + n2).normalized();
                let cos_half = m.dot(n1).max(0.2);
                m * (1.0 / cos_half)
            };
            points[i] + normal * offset
        })
        .collect()
}
