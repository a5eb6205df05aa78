//! Intelligent Driver Model car following and leader search along a path.

use serde::{Deserialize, Serialize};

use crate::geom::{Obb, Polyline};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired time headway T, seconds.
    pub time_headway: f64,
    /// Standstill gap s0, meters.
    pub min_gap: f64,
    pub max_accel: f64,
    /// Comfortable deceleration b.
    pub comfort_decel: f64,
    pub exponent: f64,
    /// Lower clip of the returned acceleration (as a positive magnitude).
    pub hard_brake: f64,
    /// How far ahead along the path leaders are searched, meters.
    pub lookahead: f64,
    /// Extra corridor width on top of the follower's own width, meters.
    pub corridor_margin: f64,
    /// Floor applied to the desired speed.
    pub min_desired_speed: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 2.0,
            comfort_decel: 4.0,
            exponent: 4.0,
            hard_brake: 7.5,
            lookahead: 50.0,
            corridor_margin: 1.0,
            min_desired_speed: 0.1,
        }
    }
}

/// IDM acceleration for speed `v`, desired speed `v0` and an optional leader
/// given as `(gap, closing_speed)`. The result is clipped to `[-hard_brake, max_accel]`.
pub fn idm_acceleration(p: &IdmParams, v: f64, v0: f64, leader: Option<(f64, f64)>) -> f64 {
    let v0 = v0.max(p.min_desired_speed);
    let free = 1.0 - (v / v0).powf(p.exponent);
    let interaction = match leader {
        None => 0.0,
        Some((gap, dv)) => {
            let dynamic = v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
            let desired = p.min_gap + dynamic.max(0.0);
            let ratio = desired / gap.max(1e-3);
            ratio * ratio
        }
    };
    (p.max_accel * (free - interaction)).clamp(-p.hard_brake, p.max_accel)
}

/// Largest speed in `[0, v0]` at which the IDM acceleration is not negative for
/// the given gap. With `static_leader` the leader is assumed stopped.
pub fn equilibrium_speed(p: &IdmParams, v0: f64, gap: Option<f64>, static_leader: bool) -> f64 {
    let v0 = v0.max(p.min_desired_speed);
    let Some(gap) = gap else {
        return v0;
    };
    let accel = |v: f64| idm_acceleration(p, v, v0, Some((gap, if static_leader { v } else { 0.0 })));
    if accel(0.0) < 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, v0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if accel(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    /// Caller-provided index of the leading object.
    pub index: usize,
    /// Bumper-to-bumper distance along the path, meters.
    pub gap: f64,
    /// Follower speed minus the leader's speed along the path.
    pub dv: f64,
}

/// Nearest object whose footprint enters the corridor ahead of a follower at
/// arc length `s` on `path`.
///
/// `others` yields `(index, footprint, speed)`; the follower itself must not be included.
pub fn find_leader<'a, I>(p: &IdmParams, path: &Polyline, s: f64, me: &Obb, my_speed: f64, others: I) -> Option<Leader>
where
    I: IntoIterator<Item = (usize, &'a Obb, f64)>,
{
    let half_corridor = me.half_width + 0.5 * p.corridor_margin;
    let anchor = path.point_at(s);
    let others = others.into_iter();
    let mut with_radius: Vec<(usize, &Obb, f64, f64)> = Vec::with_capacity(others.size_hint().1.unwrap_or(0));
    with_radius.extend(others.map(|(index, other, speed)| (index, other, speed, other.bounding_radius())));
    let others = with_radius;
    let max_radius = others.iter().map(|o| o.3).fold(0.0, f64::max);
    // Every segment a projection below can land on lies in this box, so an
    // object farther from it than the corridor allows cannot be a leader.
    let window = path.window_aabb(s, s + p.lookahead + max_radius);
    let mut best: Option<Leader> = None;
    for (index, other, speed, radius) in others {
        let reach = p.lookahead + 2.0 * radius + half_corridor;
        if (other.center - anchor).norm_sq() > reach * reach || window.distance_to(other.center) >= half_corridor + radius {
            continue;
        }
        let proj = path.project_window(other.center, s, s + p.lookahead + radius);
        let along = proj.s - s;
        if along <= 0.0 {
            continue;
        }
        let rel = other.heading - path.pose_at(proj.s).1;
        let (sin, cos) = rel.sin_cos();
        let lateral_half = other.half_length * sin.abs() + other.half_width * cos.abs();
        let longitudinal_half = other.half_length * cos.abs() + other.half_width * sin.abs();
        if proj.distance - lateral_half >= half_corridor || along - longitudinal_half > p.lookahead {
            continue;
        }
        let gap = along - me.half_length - longitudinal_half;
        let cand = Leader {
            index,
            gap,
            dv: my_speed - speed * cos,
        };
        if best.map_or(true, |b| cand.gap < b.gap) {
            best = Some(cand);
        }
    }
    best
}
