//! Brute-force reference implementations. None of these call into the
//! geometry code under test.

/// Point in the frame of an oriented box: `(along heading, left of heading)`.
fn box_local(center: (f64, f64), heading: f64, p: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (p.0 - center.0, p.1 - center.1);
    let (s, c) = heading.sin_cos();
    (dx * c + dy * s, -dx * s + dy * c)
}

#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub center: (f64, f64),
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl Rect {
    pub fn contains(&self, p: (f64, f64)) -> bool {
        let (u, v) = box_local(self.center, self.heading, p);
        u.abs() <= 0.5 * self.length && v.abs() <= 0.5 * self.width
    }

    pub fn inflate(&self, by: f64) -> Rect {
        Rect {
            length: self.length + 2.0 * by,
            width: self.width + 2.0 * by,
            ..*self
        }
    }

    fn corner(&self, su: f64, sv: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let (u, v) = (su * 0.5 * self.length, sv * 0.5 * self.width);
        (self.center.0 + u * c - v * s, self.center.1 + u * s + v * c)
    }

    /// `n` points spread evenly along the boundary, starting at a corner.
    pub fn boundary_samples(&self, n: usize) -> Vec<(f64, f64)> {
        let corners = [
            self.corner(1.0, 1.0),
            self.corner(-1.0, 1.0),
            self.corner(-1.0, -1.0),
            self.corner(1.0, -1.0),
        ];
        let perimeter = 2.0 * (self.length + self.width);
        let mut out: Vec<(f64, f64)> = corners.to_vec();
        for k in 0..n.saturating_sub(4) {
            let mut t = perimeter * k as f64 / (n - 4) as f64;
            for i in 0..4 {
                let (a, b) = (corners[i], corners[(i + 1) % 4]);
                let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
                if t <= len || i == 3 {
                    let f = (t / len).min(1.0);
                    out.push((a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1)));
                    break;
                }
                t -= len;
            }
        }
        out
    }
}

/// Overlap by point containment: some sampled boundary point of either
/// rectangle lies inside the other. Uses `samples` points in total.
pub fn rects_overlap(a: &Rect, b: &Rect, samples: usize) -> bool {
    a.boundary_samples(samples / 2).into_iter().any(|p| b.contains(p))
        || b.boundary_samples(samples / 2).into_iter().any(|p| a.contains(p))
}

/// Verdict of [`rects_overlap`] when it is the same for both boxes shrunk and
/// grown by `margin`; `None` for pairs inside the boundary margin.
pub fn rects_overlap_outside_margin(a: &Rect, b: &Rect, samples: usize, margin: f64) -> Option<bool> {
    let inner = rects_overlap(&a.inflate(-margin), &b.inflate(-margin), samples);
    let outer = rects_overlap(&a.inflate(margin), &b.inflate(margin), samples);
    (inner == outer).then_some(inner)
}

/// First entry of a ray into the set described by `inside`, found by
/// marching in `step` increments up to `max_dist` and bisecting the last step.
pub fn march_ray(origin: (f64, f64), dir: (f64, f64), step: f64, max_dist: f64, inside: impl Fn((f64, f64)) -> bool) -> Option<f64> {
    let at = |t: f64| (origin.0 + t * dir.0, origin.1 + t * dir.1);
    if inside(origin) {
        return Some(0.0);
    }
    let steps = (max_dist / step).ceil() as usize;
    for k in 1..=steps {
        let t = (k as f64 * step).min(max_dist);
        if inside(at(t)) {
            let (mut lo, mut hi) = (t - step, t);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if inside(at(mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
    }
    None
}

/// First crossing of a ray with a segment, found by marching on the sign of
/// the segment's line side and bisecting.
pub fn march_ray_segment(origin: (f64, f64), dir: (f64, f64), a: (f64, f64), b: (f64, f64), step: f64, max_dist: f64) -> Option<f64> {
    let side = |t: f64| {
        let p = (origin.0 + t * dir.0, origin.1 + t * dir.1);
        (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
    };
    let within = |t: f64| {
        let p = (origin.0 + t * dir.0, origin.1 + t * dir.1);
        let (ex, ey) = (b.0 - a.0, b.1 - a.1);
        let f = ((p.0 - a.0) * ex + (p.1 - a.1) * ey) / (ex * ex + ey * ey);
        (-1e-9..=1.0 + 1e-9).contains(&f)
    };
    let steps = (max_dist / step).ceil() as usize;
    let mut prev = side(0.0);
    if prev == 0.0 {
        return within(0.0).then_some(0.0);
    }
    for k in 1..=steps {
        let t = (k as f64 * step).min(max_dist);
        let cur = side(t);
        if cur == 0.0 || (cur > 0.0) != (prev > 0.0) {
            let (mut lo, mut hi) = (t - step, t);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if side(mid) != 0.0 && (side(mid) > 0.0) == (prev > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if within(hi) {
                return Some(hi);
            }
        }
        prev = cur;
    }
    None
}

/// Result of the dense-sampling projection oracle.
#[derive(Debug, Clone, Copy)]
pub struct DenseProjection {
    pub s: f64,
    pub distance: f64,
    pub foot: (f64, f64),
    /// Another basin of the distance function comes within `tie_band` of the minimum.
    pub ambiguous: bool,
}

/// Samples the polyline every `spacing` meters (vertices included), takes the
/// closest sample and refines it by ternary search between its neighbours.
pub fn dense_project(points: &[(f64, f64)], p: (f64, f64), spacing: f64, tie_band: f64) -> DenseProjection {
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        let l = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
        cum.push(cum.last().unwrap() + l);
    }
    let total = *cum.last().unwrap();
    let point_at = |s: f64| {
        let s = s.clamp(0.0, total);
        let mut i = 0;
        while i + 2 < cum.len() && cum[i + 1] < s {
            i += 1;
        }
        let len = cum[i + 1] - cum[i];
        let f = if len > 0.0 { (s - cum[i]) / len } else { 0.0 };
        let (a, b) = (points[i], points[i + 1]);
        (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1))
    };
    let d2 = |q: (f64, f64)| (q.0 - p.0).powi(2) + (q.1 - p.1).powi(2);

    let mut samples: Vec<(f64, f64)> = Vec::new();
    for (i, w) in points.windows(2).enumerate() {
        let len = cum[i + 1] - cum[i];
        let n = (len / spacing).ceil().max(1.0) as usize;
        for k in 0..n {
            let f = k as f64 / n as f64;
            let q = (w[0].0 + f * (w[1].0 - w[0].0), w[0].1 + f * (w[1].1 - w[0].1));
            samples.push((cum[i] + f * len, d2(q)));
        }
    }
    samples.push((total, d2(*points.last().unwrap())));

    let best = (0..samples.len())
        .min_by(|&a, &b| samples[a].1.total_cmp(&samples[b].1))
        .unwrap();
    let (mut lo, mut hi) = (
        samples[best.saturating_sub(1)].0,
        samples[(best + 1).min(samples.len() - 1)].0,
    );
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if d2(point_at(m1)) <= d2(point_at(m2)) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let s = 0.5 * (lo + hi);
    let foot = point_at(s);
    let distance = d2(foot).sqrt();

    // Other local minima of the sampled distance, away from the chosen one.
    let ambiguous = (0..samples.len()).any(|i| {
        let left = i == 0 || samples[i].1 <= samples[i - 1].1;
        let right = i + 1 == samples.len() || samples[i].1 <= samples[i + 1].1;
        left && right && (samples[i].0 - s).abs() > 0.05 && samples[i].1.sqrt() <= distance + tie_band
    });
    DenseProjection {
        s,
        distance,
        foot,
        ambiguous,
    }
}

/// Winding number of a closed ring around `p` by summing signed angles.
pub fn winding_number(ring: &[(f64, f64)], p: (f64, f64)) -> i64 {
    let mut total = 0.0;
    for i in 0..ring.len() {
        let a = ring[i];
        let b = ring[(i + 1) % ring.len()];
        let (ax, ay) = (a.0 - p.0, a.1 - p.1);
        let (bx, by) = (b.0 - p.0, b.1 - p.1);
        total += (ax * by - ay * bx).atan2(ax * bx + ay * by);
    }
    (total / std::f64::consts::TAU).round() as i64
}

/// Distance from `p` to segment `ab`.
pub fn segment_distance(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    let (ex, ey) = (b.0 - a.0, b.1 - a.1);
    let len2 = ex * ex + ey * ey;
    let f = if len2 > 0.0 {
        (((p.0 - a.0) * ex + (p.1 - a.1) * ey) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((a.0 + f * ex - p.0).powi(2) + (a.1 + f * ey - p.1).powi(2)).sqrt()
}

/// Distance from `p` to a ring's boundary.
pub fn ring_boundary_distance(ring: &[(f64, f64)], p: (f64, f64)) -> f64 {
    (0..ring.len())
        .map(|i| segment_distance(ring[i], ring[(i + 1) % ring.len()], p))
        .fold(f64::INFINITY, f64::min)
}

/// Intersection parameters `(t, u)` of segments `p0p1` and `q0q1`, or `None` when parallel.
pub fn segment_params(p0: (f64, f64), p1: (f64, f64), q0: (f64, f64), q1: (f64, f64)) -> Option<(f64, f64)> {
    let r = (p1.0 - p0.0, p1.1 - p0.1);
    let s = (q1.0 - q0.0, q1.1 - q0.1);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom == 0.0 {
        return None;
    }
    let qp = (q0.0 - p0.0, q0.1 - p0.1);
    Some(((qp.0 * s.1 - qp.1 * s.0) / denom, (qp.0 * r.1 - qp.1 * r.0) / denom))
}
