//! Procedural scenarios: block-based one-way road maps, rule-based traffic
//! placement and an IDM rollout recorded as a scenario description.
//!
//! Roads are one-way. A road is described by its left edge (the reference
//! line); its lanes sit side by side to the right of it.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, offset_polyline, Obb, Polyline, Vec2};
use crate::map::{lane_polygon, Lane, LaneLine, LineType, MapFeature};
use crate::metrics::difficulty_score;
use crate::scenario::{ObjectTrack, ObjectType, ScenarioDescription, ScenarioMetadata};
use crate::sim::{equilibrium_speed, find_leader, idm_acceleration, IdmParams};

const JOIN_TOLERANCE: f64 = 1e-6;
/// Cones trail the barrier by up to this many meters.
const CLUSTER_SPAN: f64 = 9.0;
/// Speed floor for the yaw of a lane-change blend, so slow cars do not swing sideways.
const MIN_BLEND_SPEED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockWeights {
    pub straight: f64,
    pub curve: f64,
    pub intersection: f64,
}

impl Default for BlockWeights {
    fn default() -> Self {
        Self {
            straight: 0.4,
            curve: 0.4,
            intersection: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Straight,
    Curve,
    Intersection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgConfig {
    pub seed: u64,
    pub num_blocks: usize,
    pub block_distribution: BlockWeights,
    /// Vehicles per 100 m of spawnable lane.
    pub traffic_density: f64,
    pub duration_s: f64,
    pub dt: f64,
    pub lanes_per_road: usize,
    pub lane_width: f64,
    pub speed_limit: f64,
    /// Probability that the scene gets a cone and barrier cluster.
    pub construction_prob: f64,
    pub straight_length: [f64; 2],
    pub curve_radius: [f64; 2],
    pub curve_angle_deg: [f64; 2],
    pub approach_length: f64,
    pub arm_length: f64,
    /// Distance between the road sides and the intersection box faces.
    pub intersection_margin: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub vehicle_height: f64,
    /// Bumper gap between neighbouring spawn slots.
    pub spawn_gap: f64,
    /// Seconds behind a static leader before a lane change is tried.
    pub lane_change_patience: f64,
    /// Seconds over which a lane change blends laterally.
    pub lane_change_duration: f64,
    pub idm: IdmParams,
}

impl Default for PgConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_blocks: 2,
            block_distribution: BlockWeights::default(),
            traffic_density: 15.0,
            duration_s: 20.0,
            dt: 0.1,
            lanes_per_road: 2,
            lane_width: 3.5,
            speed_limit: 12.0,
            construction_prob: 0.39,
            straight_length: [50.0, 120.0],
            curve_radius: [30.0, 80.0],
            curve_angle_deg: [30.0, 90.0],
            approach_length: 20.0,
            arm_length: 40.0,
            intersection_margin: 6.0,
            vehicle_length: 4.5,
            vehicle_width: 1.9,
            vehicle_height: 1.5,
            spawn_gap: 2.0,
            lane_change_patience: 3.0,
            lane_change_duration: 2.0,
            idm: IdmParams::default(),
        }
    }
}

impl PgConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Number of recorded frames.
    pub fn frames(&self) -> usize {
        (self.duration_s / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.block_distribution;
        let weights = [w.straight, w.curve, w.intersection];
        if weights.iter().any(|x| !(*x >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("block weights must be nonnegative with a positive sum".into()));
        }
        if !(self.traffic_density > 0.0) {
            return Err(Error::Config("traffic density must be positive".into()));
        }
        if !(self.dt > 0.0) || !(self.duration_s > 0.0) {
            return Err(Error::Config("duration and dt must be positive".into()));
        }
        let ratio = self.duration_s / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 2.0 {
            return Err(Error::Config(format!(
                "duration {} is not a whole number (>= 2) of steps of {}",
                self.duration_s, self.dt
            )));
        }
        if self.num_blocks == 0 || self.lanes_per_road == 0 {
            return Err(Error::Config("need at least one block and one lane per road".into()));
        }
        if !(0.0..=1.0).contains(&self.construction_prob) {
            return Err(Error::Config("construction_prob must lie in [0, 1]".into()));
        }
        for (name, r) in [
            ("straight_length", self.straight_length),
            ("curve_radius", self.curve_radius),
            ("curve_angle_deg", self.curve_angle_deg),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1]) {
                return Err(Error::Config(format!("{name} must be an increasing positive range")));
            }
        }
        if self.curve_radius[0] <= self.lane_width * self.lanes_per_road as f64 {
            return Err(Error::Config("curve radius must exceed the road width".into()));
        }
        Ok(())
    }
}

/// Requested vehicle count for a total spawnable lane length.
pub fn requested_vehicle_count(total_lane_length: f64, density: f64) -> usize {
    (density * total_lane_length / 100.0).round() as usize
}

#[derive(Debug, Clone)]
pub struct PgLane {
    pub centerline: Polyline,
    /// Road lanes take traffic at spawn time; intersection connectors do not.
    pub spawnable: bool,
    pub exits: Vec<String>,
    pub entries: Vec<String>,
    pub left: Option<String>,
    pub right: Option<String>,
}

#[derive(Debug, Clone)]
struct Road {
    block: usize,
    spine: Polyline,
    width: f64,
}

/// A generated map plus the lane graph used for routing.
#[derive(Debug, Clone)]
pub struct PgMap {
    pub features: BTreeMap<String, MapFeature>,
    pub lanes: BTreeMap<String, PgLane>,
    pub blocks: Vec<BlockKind>,
}

impl PgMap {
    pub fn intersection_count(&self) -> usize {
        self.blocks.iter().filter(|b| **b == BlockKind::Intersection).count()
    }

    pub fn spawnable_length(&self) -> f64 {
        self.lanes
            .values()
            .filter(|l| l.spawnable)
            .map(|l| l.centerline.length())
            .sum()
    }
}

#[derive(Debug, Clone)]
struct Socket {
    /// Left edge point where the next block attaches.
    pos: Vec2,
    heading: f64,
    lanes: Vec<String>,
    road: usize,
}

struct MapBuilder<'a> {
    cfg: &'a PgConfig,
    lanes: BTreeMap<String, PgLane>,
    features: BTreeMap<String, MapFeature>,
    roads: Vec<Road>,
}

impl<'a> MapBuilder<'a> {
    fn width(&self) -> f64 {
        self.cfg.lane_width * self.cfg.lanes_per_road as f64
    }

    /// Adds a road along `reference` and returns its lane ids, leftmost first.
    fn add_road(&mut self, reference: &[Vec2], block: usize) -> (usize, Vec<String>) {
        let road = self.roads.len();
        let n = self.cfg.lanes_per_road;
        let lw = self.cfg.lane_width;
        let ids: Vec<String> = (0..n).map(|k| format!("r{road}_{k}")).collect();
        for k in 0..n {
            let center = offset_polyline(reference, -(k as f64 + 0.5) * lw);
            self.lanes.insert(
                ids[k].clone(),
                PgLane {
                    centerline: Polyline::new(center.clone()).expect("road reference has distinct points"),
                    spawnable: true,
                    exits: Vec::new(),
                    entries: Vec::new(),
                    left: (k > 0).then(|| ids[k - 1].clone()),
                    right: (k + 1 < n).then(|| ids[k + 1].clone()),
                },
            );
            self.features.insert(
                ids[k].clone(),
                MapFeature::Lane(Lane {
                    polyline: center.iter().map(|p| [p.x, p.y, 0.0]).collect(),
                    polygon: lane_polygon(&center, lw),
                    speed_limit: Some(self.cfg.speed_limit),
                    entry_lanes: Vec::new(),
                    exit_lanes: Vec::new(),
                    left_neighbors: (k > 0).then(|| ids[k - 1].clone()).into_iter().collect(),
                    right_neighbors: (k + 1 < n).then(|| ids[k + 1].clone()).into_iter().collect(),
                }),
            );
        }
        for k in 0..=n {
            let line_type = match k {
                0 => LineType::Solid,
                _ if k == n => LineType::RoadEdge,
                _ => LineType::Broken,
            };
            let pts = offset_polyline(reference, -(k as f64) * lw);
            self.features.insert(
                format!("r{road}_line{k}"),
                MapFeature::LaneLine(LaneLine {
                    polyline: pts.iter().map(|p| [p.x, p.y, 0.0]).collect(),
                    line_type,
                }),
            );
        }
        let spine = Polyline::new(offset_polyline(reference, -0.5 * self.width())).expect("distinct points");
        self.roads.push(Road {
            block,
            spine,
            width: self.width(),
        });
        (road, ids)
    }

    fn add_connector(&mut self, id: String, points: Vec<Vec2>, from: &str, to: &str) {
        let lw = self.cfg.lane_width;
        self.lanes.insert(
            id.clone(),
            PgLane {
                centerline: Polyline::new(points.clone()).expect("connector has distinct points"),
                spawnable: false,
                exits: Vec::new(),
                entries: Vec::new(),
                left: None,
                right: None,
            },
        );
        self.features.insert(
            id.clone(),
            MapFeature::Lane(Lane {
                polyline: points.iter().map(|p| [p.x, p.y, 0.0]).collect(),
                polygon: lane_polygon(&points, lw),
                speed_limit: Some(self.cfg.speed_limit),
                entry_lanes: Vec::new(),
                exit_lanes: Vec::new(),
                left_neighbors: Vec::new(),
                right_neighbors: Vec::new(),
            }),
        );
        self.connect(from, &id);
        self.connect(&id, to);
    }

    fn connect(&mut self, from: &str, to: &str) {
        self.lanes.get_mut(from).unwrap().exits.push(to.to_string());
        self.lanes.get_mut(to).unwrap().entries.push(from.to_string());
        if let Some(MapFeature::Lane(l)) = self.features.get_mut(from) {
            l.exit_lanes.push(to.to_string());
        }
        if let Some(MapFeature::Lane(l)) = self.features.get_mut(to) {
            l.entry_lanes.push(from.to_string());
        }
    }

    fn connect_roads(&mut self, from: &[String], to: &[String]) {
        for (a, b) in from.iter().zip(to) {
            self.connect(a, b);
        }
    }

    /// True when a candidate road spine comes too close to a road of an earlier block.
    fn collides(&self, spine: &Polyline, block: usize, skip_road: Option<usize>) -> bool {
        let step = 2.0;
        let n = (spine.length() / step).ceil() as usize;
        self.roads.iter().enumerate().any(|(i, road)| {
            if road.block >= block || Some(i) == skip_road {
                return false;
            }
            let limit = 0.5 * (road.width + self.width()) + 2.0;
            (0..=n).any(|k| {
                let p = spine.point_at(k as f64 * step);
                road.spine.project(p).distance < limit
            })
        })
    }
}

fn straight_reference(start: Vec2, heading: f64, length: f64) -> Vec<Vec2> {
    vec![start, start + Vec2::from_angle(heading) * length]
}

/// Arc of the reference line; `sign` is +1 for a left turn and -1 for a right turn.
fn arc_reference(start: Vec2, heading: f64, radius: f64, angle: f64, sign: f64) -> Vec<Vec2> {
    let center = start + Vec2::from_angle(heading).perp() * (sign * radius);
    let n = ((radius * angle / 2.0).ceil() as usize).max(4);
    (0..=n)
        .map(|i| center + (start - center).rotate(sign * angle * i as f64 / n as f64))
        .collect()
}

fn quadratic_bezier(p0: Vec2, c: Vec2, p2: Vec2, segments: usize) -> Vec<Vec2> {
    (0..=segments)
        .map(|i| {
            let t = i as f64 / segments as f64;
            p0 * ((1.0 - t) * (1.0 - t)) + c * (2.0 * t * (1.0 - t)) + p2 * (t * t)
        })
        .collect()
}

fn sample_range<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

fn sample_kind<R: Rng>(rng: &mut R, w: &BlockWeights) -> BlockKind {
    let total = w.straight + w.curve + w.intersection;
    let x = rng.gen::<f64>() * total;
    if x < w.straight {
        BlockKind::Straight
    } else if x < w.straight + w.curve || w.intersection == 0.0 {
        BlockKind::Curve
    } else {
        BlockKind::Intersection
    }
}

/// A candidate block before it is committed to the map.
struct Candidate {
    kind: BlockKind,
    roads: Vec<Vec<Vec2>>,
}

/// Samples the roads of one block attached at `socket`. For intersections the
/// roads are approach, then arms; `main` indexes the arm that carries on.
fn sample_block<R: Rng>(cfg: &PgConfig, rng: &mut R, socket_pos: Vec2, heading: f64) -> (Candidate, IntersectionPlan) {
    let kind = sample_kind(rng, &cfg.block_distribution);
    match kind {
        BlockKind::Straight => {
            let length = sample_range(rng, cfg.straight_length);
            (
                Candidate {
                    kind,
                    roads: vec![straight_reference(socket_pos, heading, length)],
                },
                IntersectionPlan::default(),
            )
        }
        BlockKind::Curve => {
            let radius = sample_range(rng, cfg.curve_radius);
            let angle = sample_range(rng, cfg.curve_angle_deg).to_radians();
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            (
                Candidate {
                    kind,
                    roads: vec![arc_reference(socket_pos, heading, radius, angle, sign)],
                },
                IntersectionPlan::default(),
            )
        }
        BlockKind::Intersection => {
            let mut arms = vec![Arm::Straight, Arm::Right, Arm::Left];
            if rng.gen::<bool>() {
                let drop = rng.gen_range(0..3);
                arms.remove(drop);
            }
            let main = rng.gen_range(0..arms.len());
            let w = cfg.lane_width * cfg.lanes_per_road as f64;
            let half = 0.5 * w + cfg.intersection_margin;
            let fwd = Vec2::from_angle(heading);
            let right = -fwd.perp();
            let center = socket_pos + fwd * (cfg.approach_length + half) + right * (0.5 * w);
            let local = move |x: f64, y: f64| center + right * x + fwd * y;
            let mut roads = vec![vec![socket_pos, local(-0.5 * w, -half)]];
            for arm in &arms {
                let (start, dir) = match arm {
                    Arm::Straight => (local(-0.5 * w, half), heading),
                    Arm::Right => (local(half, 0.5 * w), heading - std::f64::consts::FRAC_PI_2),
                    Arm::Left => (local(-half, -0.5 * w), heading + std::f64::consts::FRAC_PI_2),
                };
                roads.push(straight_reference(start, normalize_angle(dir), cfg.arm_length));
            }
            (
                Candidate { kind, roads },
                IntersectionPlan {
                    arms,
                    main,
                    center,
                    heading,
                },
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Arm {
    Straight,
    Right,
    Left,
}

#[derive(Debug, Clone, Default)]
struct IntersectionPlan {
    arms: Vec<Arm>,
    main: usize,
    center: Vec2,
    heading: f64,
}

/// Generates the road network for `cfg.seed`.
pub fn generate_map(cfg: &PgConfig) -> Result<PgMap> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = MapBuilder {
        cfg,
        lanes: BTreeMap::new(),
        features: BTreeMap::new(),
        roads: Vec::new(),
    };
    let mut blocks = Vec::new();
    let mut socket: Option<Socket> = None;
    let lw = cfg.lane_width;
    let n = cfg.lanes_per_road;
    let w = lw * n as f64;
    for block in 0..cfg.num_blocks {
        let (pos, heading) = socket.as_ref().map_or((Vec2::ZERO, 0.0), |s| (s.pos, s.heading));
        let mut chosen = None;
        for _ in 0..20 {
            let (cand, plan) = sample_block(cfg, &mut rng, pos, heading);
            let clear = cand.roads.iter().all(|r| {
                let spine = Polyline::new(offset_polyline(r, -0.5 * w)).expect("distinct points");
                !b.collides(&spine, block, socket.as_ref().map(|s| s.road))
            });
            if clear {
                chosen = Some((cand, plan));
                break;
            }
        }
        let Some((cand, plan)) = chosen else {
            break;
        };
        blocks.push(cand.kind);
        match cand.kind {
            BlockKind::Straight | BlockKind::Curve => {
                let reference = &cand.roads[0];
                let (road, ids) = b.add_road(reference, block);
                if let Some(s) = &socket {
                    b.connect_roads(&s.lanes, &ids);
                }
                let end = *reference.last().unwrap();
                let prev = reference[reference.len() - 2];
                socket = Some(Socket {
                    pos: end,
                    heading: (end - prev).angle(),
                    lanes: ids,
                    road,
                });
            }
            BlockKind::Intersection => {
                let (_, approach) = b.add_road(&cand.roads[0], block);
                if let Some(s) = &socket {
                    b.connect_roads(&s.lanes, &approach);
                }
                let fwd = Vec2::from_angle(plan.heading);
                let right = -fwd.perp();
                let local = |x: f64, y: f64| plan.center + right * x + fwd * y;
                let half = 0.5 * w + cfg.intersection_margin;
                let lane_x = |k: usize| -0.5 * w + (k as f64 + 0.5) * lw;
                let mut next_socket = None;
                for (a, arm) in plan.arms.iter().enumerate() {
                    let reference = &cand.roads[a + 1];
                    let (road, ids) = b.add_road(reference, block);
                    let block_tag = format!("j{block}");
                    match arm {
                        Arm::Straight => {
                            for k in 0..n {
                                b.add_connector(
                                    format!("{block_tag}_s{k}"),
                                    vec![local(lane_x(k), -half), local(lane_x(k), half)],
                                    &approach[k],
                                    &ids[k],
                                );
                            }
                        }
                        Arm::Right => {
                            let k = n - 1;
                            // East-bound lanes are numbered from the north side.
                            let y = 0.5 * w - (k as f64 + 0.5) * lw;
                            let pts = quadratic_bezier(
                                local(lane_x(k), -half),
                                local(lane_x(k), y),
                                local(half, y),
                                16,
                            );
                            b.add_connector(format!("{block_tag}_r{k}"), pts, &approach[k], &ids[k]);
                        }
                        Arm::Left => {
                            // West-bound lanes are numbered from the south side.
                            let y = -0.5 * w + 0.5 * lw;
                            let pts = quadratic_bezier(
                                local(lane_x(0), -half),
                                local(lane_x(0), y),
                                local(-half, y),
                                16,
                            );
                            b.add_connector(format!("{block_tag}_l0"), pts, &approach[0], &ids[0]);
                        }
                    }
                    if a == plan.main {
                        let end = *reference.last().unwrap();
                        next_socket = Some(Socket {
                            pos: end,
                            heading: (end - reference[0]).angle(),
                            lanes: ids,
                            road,
                        });
                    }
                }
                socket = next_socket;
            }
        }
    }
    Ok(PgMap {
        features: b.features,
        lanes: b.lanes,
        blocks,
    })
}

/// Initial state of one spawned object.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub id: String,
    pub object_type: ObjectType,
    pub lane: String,
    pub s: f64,
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl Placement {
    pub fn footprint(&self) -> Obb {
        Obb::new(self.position, self.heading, self.length, self.width)
    }
}

fn traffic_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Lane sequence from `start` following random exits until the map ends.
fn random_route<R: Rng>(map: &PgMap, start: &str, rng: &mut R) -> Vec<String> {
    let mut route = vec![start.to_string()];
    while route.len() < 64 {
        let exits = &map.lanes[route.last().unwrap()].exits;
        match exits.choose(rng) {
            Some(next) => route.push(next.clone()),
            None => break,
        }
    }
    route
}

fn route_path(map: &PgMap, route: &[String]) -> Polyline {
    let pts = route
        .iter()
        .flat_map(|id| map.lanes[id].centerline.points().iter().copied());
    Polyline::from_points_min_spacing(pts, JOIN_TOLERANCE).expect("route has length")
}

/// Route path with upstream lanes prepended until at least `back` meters lie
/// before the route start. Returns the path and the length of the prefix.
fn path_with_upstream(map: &PgMap, route: &[String], back: f64) -> (Polyline, f64) {
    let mut chain = Vec::new();
    let mut prefix = 0.0;
    let mut lane = &route[0];
    while prefix < back {
        let Some(prev) = map.lanes[lane].entries.first() else { break };
        if chain.contains(prev) {
            break;
        }
        prefix += map.lanes[prev].centerline.length();
        chain.push(prev.clone());
        lane = prev;
    }
    chain.reverse();
    chain.extend(route.iter().cloned());
    (route_path(map, &chain), prefix)
}

fn inflated(o: &Obb) -> Obb {
    Obb {
        half_length: o.half_length + 0.5,
        half_width: o.half_width + 0.2,
        ..*o
    }
}

/// Places the construction cluster (maybe) and vehicles on the spawnable lanes.
/// Initial vehicle speeds are the IDM equilibrium for the gap to the object ahead.
pub fn spawn_traffic(map: &PgMap, cfg: &PgConfig) -> Vec<Placement> {
    let mut rng = traffic_rng(cfg.seed, 1);
    let mut placed: Vec<Placement> = Vec::new();
    let spawnable: Vec<(&String, &PgLane)> = map.lanes.iter().filter(|(_, l)| l.spawnable).collect();

    if rng.gen::<f64>() < cfg.construction_prob {
        let long: Vec<_> = spawnable.iter().filter(|(_, l)| l.centerline.length() >= 40.0).collect();
        // Short maps fall back to their longest lane if the cluster fits.
        let site = match long.choose(&mut rng) {
            Some((id, lane)) => Some((id, lane, 15.0..lane.centerline.length() - 15.0)),
            None => spawnable
                .iter()
                .max_by(|a, b| a.1.centerline.length().total_cmp(&b.1.centerline.length()))
                .filter(|(_, l)| l.centerline.length() > CLUSTER_SPAN + 2.0)
                .map(|(id, lane)| (id, lane, CLUSTER_SPAN + 1.0..lane.centerline.length() - 1.0)),
        };
        if let Some((lane_id, lane, range)) = site {
            let s = rng.gen_range(range);
            let (p, h) = lane.centerline.pose_at(s);
            let left = Vec2::from_angle(h).perp();
            placed.push(Placement {
                id: "barrier0".into(),
                object_type: ObjectType::Barrier,
                lane: lane_id.to_string(),
                s,
                position: p,
                heading: h,
                speed: 0.0,
                length: 0.6,
                width: 0.8 * cfg.lane_width,
                height: 1.0,
            });
            for i in 0..3 {
                let cs = s - 3.0 * (i + 1) as f64;
                let (cp, ch) = lane.centerline.pose_at(cs);
                let offset = 0.25 * cfg.lane_width * (i + 1) as f64 / 3.0 * 2.0;
                placed.push(Placement {
                    id: format!("cone{i}"),
                    object_type: ObjectType::Cone,
                    lane: lane_id.to_string(),
                    s: cs,
                    position: cp + left * offset,
                    heading: ch,
                    speed: 0.0,
                    length: 0.4,
                    width: 0.4,
                    height: 0.7,
                });
            }
        }
    }

    let spacing = cfg.vehicle_length + cfg.spawn_gap;
    let mut slots: Vec<(String, f64)> = Vec::new();
    for (id, lane) in &spawnable {
        let count = (lane.centerline.length() / spacing).floor() as usize;
        for k in 0..count {
            slots.push((id.to_string(), spacing * (k as f64 + 0.5)));
        }
    }
    slots.shuffle(&mut rng);
    let requested = requested_vehicle_count(map.spawnable_length(), cfg.traffic_density);
    let mut vehicles = 0;
    for (lane_id, s) in slots {
        if vehicles >= requested {
            break;
        }
        let (p, h) = map.lanes[&lane_id].centerline.pose_at(s);
        let cand = Placement {
            id: format!("v{vehicles:03}"),
            object_type: ObjectType::Vehicle,
            lane: lane_id,
            s,
            position: p,
            heading: h,
            speed: 0.0,
            length: cfg.vehicle_length,
            width: cfg.vehicle_width,
            height: cfg.vehicle_height,
        };
        let fp = inflated(&cand.footprint());
        if placed.iter().any(|o| fp.overlaps(&inflated(&o.footprint()))) {
            continue;
        }
        placed.push(cand);
        vehicles += 1;
    }
    // Renumber in placement order so ids do not depend on skipped slots.
    let obbs: Vec<Obb> = placed.iter().map(Placement::footprint).collect();
    let statics: Vec<bool> = placed.iter().map(|p| p.object_type != ObjectType::Vehicle).collect();
    let mut route_rng = traffic_rng(cfg.seed, 3);
    for i in 0..placed.len() {
        if statics[i] {
            continue;
        }
        let route = random_route(map, &placed[i].lane, &mut route_rng);
        let path = route_path(map, &route);
        let s = path.project(placed[i].position).s;
        let others = (0..placed.len()).filter(|&j| j != i).map(|j| (j, &obbs[j], 0.0));
        let leader = find_leader(&cfg.idm, &path, s, &obbs[i], 0.0, others);
        placed[i].speed = equilibrium_speed(
            &cfg.idm,
            cfg.speed_limit,
            leader.map(|l| l.gap.max(1e-3)),
            leader.map_or(false, |l| statics[l.index]),
        );
    }
    placed
}

#[derive(Debug, Clone)]
struct Blend {
    old_path: Polyline,
    old_s: f64,
    offset: f64,
    elapsed: f64,
}

#[derive(Debug, Clone)]
struct Mover {
    route: Vec<String>,
    path: Polyline,
    s: f64,
    speed: f64,
    alive: bool,
    static_time: f64,
    blend: Option<Blend>,
    position: Vec2,
    heading: f64,
}

/// Drives every vehicle with IDM for the configured duration and records the tracks.
pub fn roll_out(map: &PgMap, placements: &[Placement], cfg: &PgConfig) -> Result<ScenarioDescription> {
    let n = cfg.frames();
    let dt = cfg.dt;
    let p = cfg.idm;
    let mut route_rng = traffic_rng(cfg.seed, 3);
    let mut lc_rng = traffic_rng(cfg.seed, 4);
    let mut tracks: Vec<ObjectTrack> = placements
        .iter()
        .map(|o| ObjectTrack::empty(o.object_type, n, o.length, o.width, o.height))
        .collect();
    let mut movers: Vec<Option<Mover>> = placements
        .iter()
        .map(|o| {
            if o.object_type != ObjectType::Vehicle {
                return None;
            }
            let route = random_route(map, &o.lane, &mut route_rng);
            let path = route_path(map, &route);
            let s = path.project(o.position).s;
            Some(Mover {
                route,
                path,
                s,
                speed: o.speed,
                alive: true,
                static_time: 0.0,
                blend: None,
                position: o.position,
                heading: o.heading,
            })
        })
        .collect();

    let record = |tracks: &mut Vec<ObjectTrack>, movers: &[Option<Mover>], frame: usize| {
        for (i, o) in placements.iter().enumerate() {
            let t = &mut tracks[i];
            match &movers[i] {
                None => {
                    t.position[frame] = [o.position.x, o.position.y, 0.0];
                    t.heading[frame] = normalize_angle(o.heading);
                    t.valid[frame] = true;
                }
                Some(m) if m.alive => {
                    let v = Vec2::from_angle(m.heading) * m.speed;
                    t.position[frame] = [m.position.x, m.position.y, 0.0];
                    t.heading[frame] = normalize_angle(m.heading);
                    t.velocity[frame] = [v.x, v.y];
                    t.valid[frame] = true;
                }
                Some(_) => {}
            }
        }
    };
    record(&mut tracks, &movers, 0);

    for frame in 1..n {
        let obbs: Vec<(Obb, f64, bool)> = placements
            .iter()
            .zip(&movers)
            .map(|(o, m)| match m {
                None => (o.footprint(), 0.0, true),
                Some(m) => (Obb::new(m.position, m.heading, o.length, o.width), m.speed, m.alive),
            })
            .collect();
        let others = |i: usize| {
            obbs.iter()
                .enumerate()
                .filter(move |(j, b)| *j != i && b.2)
                .map(|(j, b)| (j, &b.0, b.1))
        };
        let mut accel = vec![0.0; placements.len()];
        for (i, m) in movers.iter_mut().enumerate() {
            let Some(m) = m.as_mut().filter(|m| m.alive) else { continue };
            let mut leader = find_leader(&p, &m.path, m.s, &obbs[i].0, m.speed, others(i));
            if let Some(b) = &m.blend {
                let old = find_leader(&p, &b.old_path, b.old_s, &obbs[i].0, m.speed, others(i));
                if old.map_or(false, |o| leader.map_or(true, |l| o.gap < l.gap)) {
                    leader = old;
                }
            }
            match leader {
                Some(l) if obbs[l.index].1 < 0.1 => m.static_time += dt,
                _ => m.static_time = 0.0,
            }
            accel[i] = idm_acceleration(&p, m.speed, cfg.speed_limit, leader.map(|l| (l.gap, l.dv)));
        }
        for (i, m) in movers.iter_mut().enumerate() {
            let Some(m) = m.as_mut().filter(|m| m.alive) else { continue };
            let a = accel[i];
            let v = m.speed;
            let (advance, v_next) = if v + a * dt < 0.0 {
                (v * v / (2.0 * -a), 0.0)
            } else {
                (v * dt + 0.5 * a * dt * dt, v + a * dt)
            };
            m.s += advance.max(0.0);
            m.speed = v_next;
            if let Some(b) = &mut m.blend {
                b.old_s += advance.max(0.0);
                b.elapsed += dt;
            }
            if m.s >= m.path.length() {
                m.alive = false;
            }
        }
        // Lane changes away from static leaders.
        for i in 0..movers.len() {
            let ready = movers[i]
                .as_ref()
                .map_or(false, |m| m.alive && m.blend.is_none() && m.static_time > cfg.lane_change_patience);
            if ready {
                try_lane_change(map, cfg, &mut movers, placements, i, &mut lc_rng);
            }
        }
        for m in movers.iter_mut().flatten() {
            if !m.alive {
                continue;
            }
            let (pos, tangent) = m.path.pose_at(m.s);
            m.position = pos;
            m.heading = tangent;
            if let Some(b) = &m.blend {
                let frac = (b.elapsed / cfg.lane_change_duration).min(1.0);
                let d = b.offset * (1.0 - frac);
                m.position = m.path.frenet_to_cartesian(m.s, d);
                if frac < 1.0 {
                    let lateral_rate = -b.offset / cfg.lane_change_duration;
                    m.heading = tangent + lateral_rate.atan2(m.speed.max(MIN_BLEND_SPEED));
                }
            }
            if m.blend.as_ref().map_or(false, |b| b.elapsed >= cfg.lane_change_duration) {
                m.blend = None;
            }
        }
        record(&mut tracks, &movers, frame);
    }

    let ids: Vec<String> = placements.iter().map(|o| o.id.clone()).collect();
    let sdc = ids
        .iter()
        .zip(&tracks)
        .filter(|(_, t)| t.object_type == ObjectType::Vehicle)
        .map(|(id, t)| (t.moving_distance(), id))
        .fold(None::<(f64, &String)>, |best, cand| match best {
            Some(b) if b.0 >= cand.0 => Some(b),
            _ => Some(cand),
        })
        .map(|(_, id)| id.clone())
        .ok_or_else(|| Error::Config("no vehicle was placed".into()))?;

    let mut metadata = ScenarioMetadata::new("pg", dt, n, sdc);
    metadata.intersection_count = Some(map.intersection_count());
    metadata.extra.insert("seed".into(), serde_json::json!(cfg.seed));
    metadata.extra.insert("blocks".into(), serde_json::to_value(&map.blocks).expect("serializable"));
    let mut desc = ScenarioDescription::new(format!("pg_{:06}", cfg.seed), metadata);
    desc.map_features = map.features.clone();
    desc.tracks = ids.into_iter().zip(tracks).collect();
    desc.normalize_headings();
    desc.refresh_statistics();
    desc.metadata.difficulty = desc.sdc_track().ok().and_then(|t| difficulty_score(t).ok());
    Ok(desc)
}

fn try_lane_change<R: Rng>(
    map: &PgMap,
    cfg: &PgConfig,
    movers: &mut [Option<Mover>],
    placements: &[Placement],
    i: usize,
    rng: &mut R,
) {
    let p = cfg.idm;
    let me = movers[i].as_ref().unwrap();
    // Lane the vehicle is on: walk the route by arc length.
    let mut acc = 0.0;
    let mut current = &me.route[0];
    for id in &me.route {
        let len = map.lanes[id].centerline.length();
        if me.s <= acc + len {
            current = id;
            break;
        }
        acc += len;
    }
    let lane = &map.lanes[current];
    let mut targets: Vec<&String> = lane.left.iter().chain(lane.right.iter()).collect();
    targets.shuffle(rng);
    let my_obb = Obb::new(me.position, me.heading, placements[i].length, placements[i].width);
    let bodies: Vec<(usize, Obb, f64)> = placements
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .filter_map(|(j, o)| match &movers[j] {
            None => Some((j, o.footprint(), 0.0)),
            Some(m) if m.alive => Some((j, Obb::new(m.position, m.heading, o.length, o.width), m.speed)),
            Some(_) => None,
        })
        .collect();
    for target in targets {
        let route = random_route(map, target, rng);
        let path = route_path(map, &route);
        let proj = path.project(me.position);
        let s_new = proj.s;
        let (check_path, prefix) = path_with_upstream(map, &route, p.lookahead);
        let s_check = s_new + prefix;
        // Every body in the target lane must leave room ahead and behind.
        let clear = bodies.iter().all(|(_, o, v)| {
            let q = check_path.project(o.center);
            if q.distance - o.half_width >= 0.5 * cfg.lane_width {
                return true;
            }
            let rel = q.s - s_check;
            if rel.abs() > p.lookahead {
                return true;
            }
            let gap = rel.abs() - my_obb.half_length - o.half_length;
            if rel >= 0.0 {
                gap >= p.min_gap
            } else {
                gap >= p.min_gap + v * p.time_headway
                    && idm_acceleration(&p, *v, cfg.speed_limit, Some((gap, v - me.speed))) >= -0.5 * p.comfort_decel
            }
        });
        if !clear {
            continue;
        }
        let m = movers[i].as_mut().unwrap();
        m.blend = Some(Blend {
            old_path: std::mem::replace(&mut m.path, path),
            old_s: m.s,
            offset: proj.d,
            elapsed: 0.0,
        });
        m.route = route;
        m.s = s_new;
        m.static_time = 0.0;
        return;
    }
}

/// Map, traffic and rollout for one seed.
pub fn generate_scenario(cfg: &PgConfig) -> Result<ScenarioDescription> {
    let map = generate_map(cfg)?;
    let mut placements = spawn_traffic(&map, cfg);
    if !placements.iter().any(|p| p.object_type == ObjectType::Vehicle) {
        // Keep a lone ego so the scenario stays drivable.
        let (id, lane) = map
            .lanes
            .iter()
            .find(|(_, l)| l.spawnable)
            .ok_or_else(|| Error::Config("map has no road lanes".into()))?;
        let s = 0.5 * cfg.vehicle_length + 1.0;
        let (pos, heading) = lane.centerline.pose_at(s);
        placements.push(Placement {
            id: "v000".into(),
            object_type: ObjectType::Vehicle,
            lane: id.clone(),
            s,
            position: pos,
            heading,
            speed: cfg.speed_limit,
            length: cfg.vehicle_length,
            width: cfg.vehicle_width,
            height: cfg.vehicle_height,
        });
    }
    roll_out(&map, &placements, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::validate_scenario;

    fn straight_cfg(lanes: usize) -> PgConfig {
        PgConfig {
            block_distribution: BlockWeights {
                straight: 1.0,
                curve: 0.0,
                intersection: 0.0,
            },
            straight_length: [100.0, 100.0],
            lanes_per_road: lanes,
            ..PgConfig::with_seed(4)
        }
    }

    #[test]
    fn straight_chain_length() {
        let map = generate_map(&straight_cfg(1)).unwrap();
        assert_eq!(map.lanes.len(), 2);
        let total: f64 = map.lanes.values().map(|l| l.centerline.length()).sum();
        assert!((total - 200.0).abs() < 1e-9);
        assert_eq!(map.lanes["r0_0"].exits, vec!["r1_0".to_string()]);
        assert_eq!(requested_vehicle_count(map.spawnable_length(), 15.0), 30);
    }

    #[test]
    fn deterministic_map() {
        let cfg = PgConfig::with_seed(11);
        assert_eq!(generate_map(&cfg).unwrap().features, generate_map(&cfg).unwrap().features);
    }

    #[test]
    fn spawn_respects_count_and_spacing() {
        let mut cfg = straight_cfg(1);
        cfg.construction_prob = 0.0;
        let map = generate_map(&cfg).unwrap();
        let placed = spawn_traffic(&map, &cfg);
        assert_eq!(placed.len(), 30);
        for (i, a) in placed.iter().enumerate() {
            for b in &placed[i + 1..] {
                assert!(!a.footprint().overlaps(&b.footprint()));
            }
        }
    }

    #[test]
    fn scenario_is_valid() {
        for seed in 0..5 {
            let desc = generate_scenario(&PgConfig::with_seed(seed)).unwrap();
            let report = validate_scenario(&desc);
            assert!(report.passed(), "seed {seed}: {report}");
            assert_eq!(desc.metadata.episode_length, 200);
            assert_eq!(desc.metadata.count_of(ObjectType::Pedestrian), 0);
        }
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = PgConfig {
            duration_s: 20.05,
            ..PgConfig::default()
        };
        assert!(generate_map(&cfg).is_err());
    }
}
