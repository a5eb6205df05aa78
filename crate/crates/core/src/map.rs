//! Lane and lane-line geometry: Frenet projection, containment,
//! connectivity and a uniform grid for spatial lookups.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{point_in_polygon, ring_is_simple, segments_cross, Aabb, Polyline, Vec2};

/// Default grid cell edge in meters.
pub const DEFAULT_CELL_SIZE: f64 = 16.0;

/// A drivable lane. Its id is the key under which it is stored in the map table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    /// Centerline points (x, y, z) in travel order.
    pub polyline: Vec<[f64; 3]>,
    /// Boundary ring (x, y); the closing edge is implicit.
    pub polygon: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_limit: Option<f64>,
    #[serde(default)]
    pub entry_lanes: Vec<String>,
    #[serde(default)]
    pub exit_lanes: Vec<String>,
    #[serde(default)]
    pub left_neighbors: Vec<String>,
    #[serde(default)]
    pub right_neighbors: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineType {
    Broken,
    Solid,
    RoadEdge,
}

impl LineType {
    /// Solid lines and road edges bound the drivable area.
    pub fn is_boundary(self) -> bool {
        matches!(self, LineType::Solid | LineType::RoadEdge)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneLine {
    pub polyline: Vec<[f64; 3]>,
    pub line_type: LineType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MapFeature {
    Lane(Lane),
    LaneLine(LaneLine),
}

impl MapFeature {
    pub fn as_lane(&self) -> Option<&Lane> {
        match self {
            MapFeature::Lane(l) => Some(l),
            MapFeature::LaneLine(_) => None,
        }
    }

    pub fn as_line(&self) -> Option<&LaneLine> {
        match self {
            MapFeature::LaneLine(l) => Some(l),
            MapFeature::Lane(_) => None,
        }
    }
}

/// Geometric defects of a single lane or lane line.
#[derive(Debug, Clone, PartialEq)]
pub enum GeometryDefect {
    TooFewPoints,
    NonFinite,
    ZeroSpacing(usize),
    PolygonTooSmall,
    PolygonNotSimple,
}

impl std::fmt::Display for GeometryDefect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GeometryDefect::TooFewPoints => write!(f, "polyline has fewer than 2 points"),
            GeometryDefect::NonFinite => write!(f, "non-finite coordinate"),
            GeometryDefect::ZeroSpacing(i) => write!(f, "zero-length polyline segment at point {i}"),
            GeometryDefect::PolygonTooSmall => write!(f, "polygon ring has fewer than 3 vertices"),
            GeometryDefect::PolygonNotSimple => write!(f, "polygon ring self-intersects"),
        }
    }
}

fn polyline_defects(points: &[[f64; 3]]) -> Vec<GeometryDefect> {
    if points.len() < 2 {
        return vec![GeometryDefect::TooFewPoints];
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return vec![GeometryDefect::NonFinite];
    }
    points
        .windows(2)
        .enumerate()
        .filter(|(_, w)| Vec2::from(w[0]) == Vec2::from(w[1]))
        .map(|(i, _)| GeometryDefect::ZeroSpacing(i + 1))
        .collect()
}

impl Lane {
    pub fn centerline(&self) -> Option<Polyline> {
        Polyline::new(self.polyline.iter().map(|&p| Vec2::from(p)).collect())
    }

    /// Polygon vertices with a repeated closing vertex removed.
    pub fn ring(&self) -> Vec<Vec2> {
        let mut ring: Vec<Vec2> = self.polygon.iter().map(|&p| Vec2::from(p)).collect();
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        ring
    }

    pub fn defects(&self) -> Vec<GeometryDefect> {
        let mut out = polyline_defects(&self.polyline);
        let ring = self.ring();
        if ring.len() < 3 {
            out.push(GeometryDefect::PolygonTooSmall);
        } else if ring.iter().any(|p| !p.is_finite()) {
            out.push(GeometryDefect::NonFinite);
        } else if !ring_is_simple(&ring) {
            out.push(GeometryDefect::PolygonNotSimple);
        }
        out
    }

    /// Every connectivity reference of this lane.
    pub fn connections(&self) -> impl Iterator<Item = &String> {
        self.entry_lanes
            .iter()
            .chain(&self.exit_lanes)
            .chain(&self.left_neighbors)
            .chain(&self.right_neighbors)
    }
}

impl LaneLine {
    pub fn points(&self) -> Vec<Vec2> {
        self.polyline.iter().map(|&p| Vec2::from(p)).collect()
    }

    pub fn defects(&self) -> Vec<GeometryDefect> {
        polyline_defects(&self.polyline)
    }
}

/// Lane-relative coordinates: arc length and signed lateral offset (left positive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frenet {
    pub s: f64,
    pub d: f64,
}

/// Projects `point` onto the lane centerline. Only x/y are used.
///
/// Returns `None` if the centerline is degenerate.
pub fn frenet_project(lane: &Lane, point: Vec2) -> Option<Frenet> {
    let line = lane.centerline()?;
    let p = line.project(point);
    Some(Frenet { s: p.s, d: p.d })
}

/// Closed even-odd containment on the lane polygon.
pub fn point_on_lane(lane: &Lane, point: Vec2) -> bool {
    point_in_polygon(&lane.ring(), point)
}

/// True iff the motion segment properly crosses any segment of the line.
pub fn crosses_line(from: Vec2, to: Vec2, line: &LaneLine) -> bool {
    line.polyline
        .windows(2)
        .any(|w| segments_cross(from, to, Vec2::from(w[0]), Vec2::from(w[1])))
}

#[derive(Debug, Clone)]
pub struct IndexedLane {
    pub id: String,
    pub lane: Lane,
    pub centerline: Polyline,
    pub ring: Vec<Vec2>,
    pub bounds: Aabb,
}

#[derive(Debug, Clone)]
pub struct IndexedLine {
    pub id: String,
    pub line_type: LineType,
    pub points: Vec<Vec2>,
    pub bounds: Aabb,
}

/// Immutable spatial index over the lanes and lane lines of one map.
#[derive(Debug, Clone)]
pub struct MapIndex {
    cell_size: f64,
    lanes: Vec<IndexedLane>,
    lines: Vec<IndexedLine>,
    by_id: HashMap<String, usize>,
    cells: HashMap<(i64, i64), Vec<usize>>,
    cell_range: Option<((i64, i64), (i64, i64))>,
}

impl MapIndex {
    pub fn build(features: &BTreeMap<String, MapFeature>) -> Result<Self> {
        Self::with_cell_size(features, DEFAULT_CELL_SIZE)
    }

    pub fn with_cell_size(features: &BTreeMap<String, MapFeature>, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0) {
            return Err(Error::Config(format!("grid cell size must be positive, got {cell_size}")));
        }
        let mut lanes = Vec::new();
        let mut lines = Vec::new();
        // BTreeMap iteration keeps lanes sorted by id, which the tie-break relies on.
        for (id, feature) in features {
            match feature {
                MapFeature::Lane(lane) => {
                    let centerline = lane.centerline().ok_or_else(|| {
                        Error::Config(format!("lane {id:?} has a degenerate centerline"))
                    })?;
                    let ring = lane.ring();
                    let bounds = Aabb::from_points(ring.iter().copied())
                        .map_or(centerline.aabb(), |b| b.union(centerline.aabb()));
                    lanes.push(IndexedLane {
                        id: id.clone(),
                        lane: lane.clone(),
                        centerline,
                        ring,
                        bounds,
                    });
                }
                MapFeature::LaneLine(line) => {
                    let points = line.points();
                    if let Some(bounds) = Aabb::from_points(points.iter().copied()) {
                        lines.push(IndexedLine {
                            id: id.clone(),
                            line_type: line.line_type,
                            points,
                            bounds,
                        });
                    }
                }
            }
        }
        let mut index = MapIndex {
            cell_size,
            lanes,
            lines,
            by_id: HashMap::new(),
            cells: HashMap::new(),
            cell_range: None,
        };
        for (i, lane) in index.lanes.iter().enumerate() {
            index.by_id.insert(lane.id.clone(), i);
            let lo = index.cell_of(lane.bounds.min);
            let hi = index.cell_of(lane.bounds.max);
            for cx in lo.0..=hi.0 {
                for cy in lo.1..=hi.1 {
                    index.cells.entry((cx, cy)).or_default().push(i);
                }
            }
            index.cell_range = Some(match index.cell_range {
                None => (lo, hi),
                Some((a, b)) => ((a.0.min(lo.0), a.1.min(lo.1)), (b.0.max(hi.0), b.1.max(hi.1))),
            });
        }
        Ok(index)
    }

    #[inline]
    fn cell_of(&self, p: Vec2) -> (i64, i64) {
        (
            (p.x / self.cell_size).floor() as i64,
            (p.y / self.cell_size).floor() as i64,
        )
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn lanes(&self) -> &[IndexedLane] {
        &self.lanes
    }

    pub fn lines(&self) -> &[IndexedLine] {
        &self.lines
    }

    pub fn lane(&self, id: &str) -> Option<&IndexedLane> {
        self.by_id.get(id).map(|&i| &self.lanes[i])
    }

    /// Lane indices registered in the cell containing `p`.
    pub fn cell_candidates(&self, p: Vec2) -> &[usize] {
        self.cells.get(&self.cell_of(p)).map_or(&[], |v| v.as_slice())
    }

    /// The lane whose centerline is closest to `point`.
    ///
    /// Ties are broken by smaller arc length, then by lexicographically smaller id.
    pub fn nearest_lane(&self, point: Vec2) -> Result<&str> {
        let Some(((x0, y0), (x1, y1))) = self.cell_range else {
            return Err(Error::EmptyMap);
        };
        let (cx, cy) = self.cell_of(point);
        let max_ring = [cx - x0, x1 - cx, cy - y0, y1 - cy]
            .into_iter()
            .map(i64::abs)
            .max()
            .unwrap_or(0)
            .max(0);
        let mut seen = vec![false; self.lanes.len()];
        let mut best: Option<(f64, f64, usize)> = None;
        let mut consider = |i: usize, best: &mut Option<(f64, f64, usize)>| {
            if seen[i] {
                return;
            }
            seen[i] = true;
            let proj = self.lanes[i].centerline.project(point);
            let cand = (proj.distance, proj.s, i);
            let better = match best {
                None => true,
                Some(b) => cand.0 < b.0 || (cand.0 == b.0 && (cand.1 < b.1 || (cand.1 == b.1 && cand.2 < b.2))),
            };
            if better {
                *best = Some(cand);
            }
        };
        for r in 0..=max_ring {
            for cell in ring_cells(cx, cy, r) {
                if let Some(list) = self.cells.get(&cell) {
                    for &i in list {
                        consider(i, &mut best);
                    }
                }
            }
            // Unvisited lanes lie entirely outside the visited square, at least r cells away.
            if let Some((dist, _, _)) = best {
                if dist < r as f64 * self.cell_size {
                    break;
                }
            }
        }
        let (_, _, i) = best.ok_or(Error::EmptyMap)?;
        Ok(&self.lanes[i].id)
    }

    pub fn frenet(&self, lane_id: &str, point: Vec2) -> Result<Frenet> {
        let lane = self.lane(lane_id).ok_or_else(|| Error::UnknownLane(lane_id.to_string()))?;
        let p = lane.centerline.project(point);
        Ok(Frenet { s: p.s, d: p.d })
    }

    pub fn lane_successors(&self, lane_id: &str) -> Result<&[String]> {
        self.lane(lane_id)
            .map(|l| l.lane.exit_lanes.as_slice())
            .ok_or_else(|| Error::UnknownLane(lane_id.to_string()))
    }

    /// True iff some lane polygon contains the point.
    pub fn in_drivable_area(&self, point: Vec2) -> bool {
        self.cell_candidates(point)
            .iter()
            .any(|&i| point_in_polygon(&self.lanes[i].ring, point))
    }

    /// Lane lines whose bounding box lies within `radius` of `point`.
    pub fn lines_near(&self, point: Vec2, radius: f64) -> impl Iterator<Item = &IndexedLine> {
        self.lines
            .iter()
            .filter(move |l| l.bounds.distance_to(point) <= radius)
    }
}

fn ring_cells(cx: i64, cy: i64, r: i64) -> Vec<(i64, i64)> {
    if r == 0 {
        return vec![(cx, cy)];
    }
    let mut out = Vec::with_capacity((8 * r) as usize);
    for x in (cx - r)..=(cx + r) {
        out.push((x, cy - r));
        out.push((x, cy + r));
    }
    for y in (cy - r + 1)..=(cy + r - 1) {
        out.push((cx - r, y));
        out.push((cx + r, y));
    }
    out
}

/// Rectangular lane polygon around a centerline with a constant width.
pub fn lane_polygon(centerline: &[Vec2], width: f64) -> Vec<[f64; 2]> {
    let left = crate::geom::offset_polyline(centerline, 0.5 * width);
    let right = crate::geom::offset_polyline(centerline, -0.5 * width);
    left.iter()
        .chain(right.iter().rev())
        .map(|p| [p.x, p.y])
        .collect()
}
