//! Per-agent observation vectors: object lidar, ego state, navigation points
//! and the optional drivable-area boundary scan.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom::{normalize_angle, ray_segment, Obb, Polyline, Vec2};
use crate::map::MapIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensingConfig {
    pub lidar_rays: usize,
    pub lidar_range: f64,
    /// Standard deviation of the additive lidar noise, in normalized units.
    pub noise_std: f64,
    pub nav_points: usize,
    pub nav_spacing: f64,
    pub nav_scale: f64,
    /// Speed that maps to 1.0 in the ego state, m/s.
    pub speed_scale: f64,
    /// Lateral offset that maps to 1.0 in the ego state, meters.
    pub lateral_scale: f64,
    pub boundary: bool,
    pub boundary_rays: usize,
    pub boundary_range: f64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            lidar_rays: 120,
            lidar_range: 50.0,
            noise_std: 0.01,
            nav_points: 10,
            nav_spacing: 2.0,
            nav_scale: 50.0,
            speed_scale: 80.0 / 3.6,
            lateral_scale: 2.5,
            boundary: false,
            boundary_rays: 12,
            boundary_range: 50.0,
        }
    }
}

/// One named slice of the observation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldLayout {
    pub name: String,
    pub offset: usize,
    pub width: usize,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub fields: Vec<FieldLayout>,
    pub width: usize,
}

pub const EGO_STATE_WIDTH: usize = 4;

pub fn describe_observation(cfg: &SensingConfig) -> ObservationLayout {
    let mut fields = Vec::new();
    let mut offset = 0;
    let mut push = |name: &str, width: usize, low: f64, high: f64| {
        fields.push(FieldLayout {
            name: name.to_string(),
            offset,
            width,
            low,
            high,
        });
        offset += width;
    };
    push("lidar", cfg.lidar_rays, 0.0, 1.0);
    push("ego_state", EGO_STATE_WIDTH, -1.0, 1.0);
    push("navigation", 2 * cfg.nav_points, -1.0, 1.0);
    if cfg.boundary {
        push("boundary", cfg.boundary_rays, 0.0, 1.0);
    }
    ObservationLayout { fields, width: offset }
}

fn ray_directions(heading: f64, n: usize) -> impl Iterator<Item = Vec2> {
    (0..n).map(move |k| Vec2::from_angle(heading + std::f64::consts::TAU * k as f64 / n as f64))
}

/// Normalized distance to the nearest footprint along `n_rays` rays spread over
/// a full turn starting at `heading`. Noise is skipped when `noise_std` is zero.
pub fn lidar_scan<R: Rng + ?Sized>(
    origin: Vec2,
    heading: f64,
    targets: &[Obb],
    n_rays: usize,
    max_dist: f64,
    noise_std: f64,
    rng: &mut R,
) -> Vec<f64> {
    let near: Vec<&Obb> = targets
        .iter()
        .filter(|o| o.center.distance(origin) <= max_dist + o.bounding_radius())
        .collect();
    let noise = (noise_std > 0.0).then(|| Normal::new(0.0, noise_std).expect("finite noise std"));
    ray_directions(heading, n_rays)
        .map(|dir| {
            let hit = near
                .iter()
                .filter_map(|o| o.ray_hit(origin, dir))
                .fold(max_dist, f64::min);
            let mut value = hit / max_dist;
            if let Some(n) = &noise {
                value += n.sample(rng);
            }
            value.clamp(0.0, 1.0)
        })
        .collect()
}

/// Like [`lidar_scan`] but against solid and road-edge lane lines, without noise.
pub fn boundary_scan(map: &MapIndex, origin: Vec2, heading: f64, n_rays: usize, max_dist: f64) -> Vec<f64> {
    let lines: Vec<_> = map
        .lines_near(origin, max_dist)
        .filter(|l| l.line_type.is_boundary())
        .collect();
    ray_directions(heading, n_rays)
        .map(|dir| {
            let mut best = max_dist;
            for line in &lines {
                for w in line.points.windows(2) {
                    if let Some(t) = ray_segment(origin, dir, w[0], w[1]) {
                        best = best.min(t);
                    }
                }
            }
            (best / max_dist).clamp(0.0, 1.0)
        })
        .collect()
}

/// `[steer, heading error / pi, speed / speed_scale, lateral / lateral_scale]`, each clipped.
pub fn ego_state(
    cfg: &SensingConfig,
    steer: f64,
    position: Vec2,
    heading: f64,
    speed: f64,
    reference: Option<&Polyline>,
) -> [f64; EGO_STATE_WIDTH] {
    let (heading_error, lateral) = match reference {
        Some(r) => {
            let p = r.project(position);
            let tangent = r.pose_at(p.s).1;
            (normalize_angle(heading - tangent), p.d)
        }
        None => (0.0, 0.0),
    };
    [
        steer.clamp(-1.0, 1.0),
        (heading_error / std::f64::consts::PI).clamp(-1.0, 1.0),
        (speed / cfg.speed_scale).clamp(0.0, 1.0),
        (lateral / cfg.lateral_scale).clamp(-1.0, 1.0),
    ]
}

/// Upcoming reference points in the agent frame, flattened as `x0, y0, x1, y1, ...`.
pub fn navigation_points(
    reference: Option<&Polyline>,
    position: Vec2,
    heading: f64,
    n: usize,
    spacing: f64,
    scale: f64,
) -> Vec<f64> {
    let Some(r) = reference else {
        return vec![0.0; 2 * n];
    };
    let s = r.project(position).s;
    let mut out = Vec::with_capacity(2 * n);
    for k in 1..=n {
        let p = r.point_at((s + k as f64 * spacing).min(r.length()));
        let local = (p - position).rotate(-heading);
        out.push((local.x / scale).clamp(-1.0, 1.0));
        out.push((local.y / scale).clamp(-1.0, 1.0));
    }
    out
}
