//! Closed-loop step loop: replay synchronization, IDM traffic, kinematic
//! agents, collisions, traffic lights, rewards and termination.

mod collision;
mod idm;
mod kinematics;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use collision::{detect_collisions, Body, CollisionClass, Contact};
pub use idm::{equilibrium_speed, find_leader, idm_acceleration, IdmParams, Leader};
pub use kinematics::{kinematic_step, Action, KinematicState, VehicleParams};

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Obb, Polyline, Vec2};
use crate::map::MapIndex;
use crate::metrics::{step_reward, EpisodeRecord, RewardConfig, Transition};
use crate::scenario::{validate_scenario, LightState, ObjectTrack, ObjectType, ScenarioDescription};
use crate::sensing::{self, SensingConfig};

/// Recorded positions closer than this are treated as one point when a track
/// becomes a path, so sub-micron jitter of a parked car cannot set a direction.
const TRACK_PATH_SPACING: f64 = 1e-6;

fn track_path(track: &ObjectTrack) -> Option<Polyline> {
    Polyline::from_points_min_spacing(track.valid_positions(), TRACK_PATH_SPACING)
}

fn touching(a: &SimObject, pa: &Pose, b: &SimObject, pb: &Pose) -> bool {
    let d = pa.position - pb.position;
    // Half the summed sides bounds the summed half-diagonals from above.
    let loose = 0.5 * (a.length + a.width + b.length + b.width);
    if d.x.abs() > loose || d.y.abs() > loose {
        return false;
    }
    let reach = 0.5 * (a.length.hypot(a.width) + b.length.hypot(b.width));
    d.norm() <= reach
        && Obb::new(pa.position, pa.heading, a.length, a.width).overlaps(&Obb::new(pb.position, pb.heading, b.length, b.width))
}

/// Motion state of an IDM object at the start of a tick.
#[derive(Debug, Clone, Copy)]
struct Pose {
    position: Vec2,
    heading: f64,
    s: f64,
}

impl Pose {
    fn of(o: &SimObject) -> Pose {
        Pose {
            position: o.position,
            heading: o.heading,
            s: o.driver.as_ref().map_or(0.0, |d| d.s),
        }
    }
}

/// Track path plus the recorded heading at each kept vertex.
fn track_path_with_headings(track: &ObjectTrack) -> (Option<Polyline>, Vec<f64>) {
    let mut points: Vec<Vec2> = Vec::new();
    let mut headings = Vec::new();
    for i in track.valid_frames() {
        let p = Vec2::from(track.position[i]);
        if points.last().map_or(true, |q| q.distance(p) >= TRACK_PATH_SPACING) {
            points.push(p);
            headings.push(track.heading[i]);
        }
    }
    (Polyline::new(points), headings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The ego vehicle is the only agent.
    Single,
    /// Every vehicle is an agent from its first valid frame.
    Multi,
    /// No agents; the scene only runs traffic.
    Traffic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyBinding {
    Replay,
    Idm,
    EnvInput,
}

/// How logged traffic other than the agents is driven.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficPolicy {
    Replay,
    /// Vehicles behind the ego follow IDM, everything else replays.
    #[default]
    IdmBehindEgo,
    /// Every vehicle present at the first frame follows IDM.
    Idm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    #[default]
    Running,
    Success,
    OutOfRoute,
    OutOfRoad,
    Timeout,
    /// The controlling client went away.
    Aborted,
}

impl Termination {
    pub fn is_terminal(self) -> bool {
        self != Termination::Running
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminationParams {
    /// Single-agent lateral limit on the reference, meters.
    pub out_of_route: f64,
    /// Single-agent success when this close (in arc length) to the reference end.
    pub success_radius: f64,
    /// Steps allowed past the recorded episode length.
    pub timeout_steps: usize,
    /// Multi-agent distance limit from the reference, meters.
    pub out_of_road: f64,
    /// Multi-agent route completion needed for success (strictly exceeded).
    pub success_completion: f64,
}

impl Default for TerminationParams {
    fn default() -> Self {
        Self {
            out_of_route: 2.5,
            success_radius: 2.0,
            timeout_steps: 50,
            out_of_road: 10.0,
            success_completion: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub mode: Mode,
    /// Binding of the ego in single-agent mode.
    pub ego_policy: PolicyBinding,
    pub traffic: TrafficPolicy,
    pub vehicle: VehicleParams,
    pub idm: IdmParams,
    pub termination: TerminationParams,
    pub rewards: RewardConfig,
    pub sensing: SensingConfig,
    /// Skip observation vectors entirely (benchmarks, metric-only rollouts).
    pub observe: bool,
    pub noise_seed: u64,
    /// Lateral band used to decide which vehicles are behind the ego.
    pub lane_width: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::single()
    }
}

impl SimConfig {
    pub fn single() -> Self {
        Self {
            mode: Mode::Single,
            ego_policy: PolicyBinding::EnvInput,
            traffic: TrafficPolicy::IdmBehindEgo,
            vehicle: VehicleParams::default(),
            idm: IdmParams::default(),
            termination: TerminationParams::default(),
            rewards: RewardConfig::single_agent(),
            sensing: SensingConfig::default(),
            observe: true,
            noise_seed: 0,
            lane_width: 3.5,
        }
    }

    pub fn multi() -> Self {
        Self {
            mode: Mode::Multi,
            rewards: RewardConfig::multi_agent(),
            ..Self::single()
        }
    }

    /// Agent-free world; the ego follows `traffic` like everyone else.
    pub fn traffic(traffic: TrafficPolicy) -> Self {
        Self {
            mode: Mode::Traffic,
            ego_policy: match traffic {
                TrafficPolicy::Idm => PolicyBinding::Idm,
                _ => PolicyBinding::Replay,
            },
            traffic,
            observe: false,
            ..Self::single()
        }
    }
}

#[derive(Debug, Clone)]
struct PathDriver {
    path: Option<Polyline>,
    /// Recorded heading at each path vertex.
    headings: Vec<f64>,
    s: f64,
    desired_speed: f64,
    /// Hold at the path end instead of leaving the scene.
    stop_at_end: bool,
}

/// Runtime state of one scenario object.
#[derive(Debug, Clone)]
pub struct SimObject {
    pub id: String,
    pub object_type: ObjectType,
    pub policy: PolicyBinding,
    pub alive: bool,
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub velocity: Vec2,
    pub length: f64,
    pub width: f64,
    /// Last applied steering command (EnvInput only).
    pub steer: f64,
    driver: Option<PathDriver>,
}

impl PathDriver {
    /// Position on the path and the recorded heading interpolated along the segment.
    fn pose(&self, path: &Polyline) -> (Vec2, f64) {
        let (pos, tangent) = path.pose_at(self.s);
        let seg = path.segment_at(self.s);
        let (Some(&h0), Some(&h1)) = (self.headings.get(seg), self.headings.get(seg + 1)) else {
            return (pos, tangent);
        };
        let cum = path.cumulative();
        let f = ((self.s - cum[seg]) / (cum[seg + 1] - cum[seg])).clamp(0.0, 1.0);
        (pos, normalize_angle(h0 + f * normalize_angle(h1 - h0)))
    }
}

impl SimObject {
    pub fn footprint(&self) -> Obb {
        Obb::new(self.position, self.heading, self.length, self.width)
    }

    fn sync(&mut self, track: &ObjectTrack, frame: usize) {
        if frame < track.len() && track.valid[frame] {
            self.alive = true;
            self.position = Vec2::from(track.position[frame]);
            self.heading = track.heading[frame];
            self.velocity = Vec2::from(track.velocity[frame]);
            self.speed = self.velocity.norm();
        } else {
            self.alive = false;
        }
    }
}

/// Per-agent episode accumulators.
#[derive(Debug, Clone)]
pub struct Agent {
    pub id: String,
    pub object: usize,
    /// Logged trajectory of the agent's vehicle; `None` when it never moves.
    pub reference: Option<Polyline>,
    pub first_frame: usize,
    pub termination: Termination,
    pub spawned: bool,
    pub crash_count: usize,
    pub max_s: f64,
    pub steps: usize,
    pub speed_sum: f64,
    pub total_reward: f64,
}

impl Agent {
    pub fn route_completion(&self) -> f64 {
        match &self.reference {
            Some(r) => (self.max_s / r.length()).clamp(0.0, 1.0),
            None => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub route_completion: f64,
    /// Signed lateral offset from the reference.
    pub lateral: f64,
    pub collision: Option<CollisionClass>,
    pub crash_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub tick: usize,
    pub observations: BTreeMap<String, Vec<f64>>,
    pub rewards: BTreeMap<String, f64>,
    pub terminations: BTreeMap<String, Termination>,
    pub info: BTreeMap<String, AgentInfo>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSnapshot {
    pub id: String,
    pub alive: bool,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub tick: usize,
    pub objects: Vec<ObjectSnapshot>,
}

pub type Observations = BTreeMap<String, Vec<f64>>;

/// One running episode.
#[derive(Debug, Clone)]
pub struct World {
    scenario: Arc<ScenarioDescription>,
    map: Arc<MapIndex>,
    config: SimConfig,
    tick: usize,
    horizon: usize,
    objects: Vec<SimObject>,
    agents: Vec<Agent>,
    lane_lights: HashMap<String, String>,
    rng: ChaCha8Rng,
}

impl World {
    /// Validates the scenario, instantiates frame-0 states and returns the first observations.
    pub fn reset(scenario: Arc<ScenarioDescription>, config: SimConfig) -> Result<(World, Observations)> {
        let mut world = Self::new(scenario, config)?;
        let obs = world.observe_all();
        Ok((world, obs))
    }

    pub fn new(scenario: Arc<ScenarioDescription>, config: SimConfig) -> Result<World> {
        let report = validate_scenario(&scenario);
        if !report.passed() {
            return Err(Error::Invalid(report));
        }
        let map = Arc::new(MapIndex::build(&scenario.map_features)?);
        Self::with_map(scenario, map, config)
    }

    /// Like [`World::new`] with a prebuilt map index and without validation.
    pub fn with_map(scenario: Arc<ScenarioDescription>, map: Arc<MapIndex>, config: SimConfig) -> Result<World> {
        let n = scenario.metadata.episode_length;
        let sdc_id = scenario.metadata.sdc_id.clone();
        let ego = scenario.sdc_track()?;
        let ego_start = Vec2::from(ego.position[0]);
        let ego_heading = ego.heading[0];
        let ego_reference = track_path(ego);

        let mut objects = Vec::with_capacity(scenario.tracks.len());
        for (id, track) in &scenario.tracks {
            let is_vehicle = track.object_type == ObjectType::Vehicle;
            let present = track.valid.first().copied().unwrap_or(false);
            let traffic_binding = || match config.traffic {
                _ if !is_vehicle || !present => PolicyBinding::Replay,
                TrafficPolicy::Replay => PolicyBinding::Replay,
                TrafficPolicy::Idm => PolicyBinding::Idm,
                TrafficPolicy::IdmBehindEgo => {
                    let p = Vec2::from(track.position[0]);
                    if behind(ego_reference.as_ref(), ego_start, ego_heading, p, config.lane_width) {
                        PolicyBinding::Idm
                    } else {
                        PolicyBinding::Replay
                    }
                }
            };
            let policy = match config.mode {
                Mode::Single if *id == sdc_id => config.ego_policy,
                Mode::Traffic if *id == sdc_id => match config.ego_policy {
                    PolicyBinding::EnvInput => PolicyBinding::Replay,
                    p => p,
                },
                Mode::Multi if is_vehicle => PolicyBinding::EnvInput,
                _ => traffic_binding(),
            };
            let mut obj = SimObject {
                id: id.clone(),
                object_type: track.object_type,
                policy,
                alive: false,
                position: Vec2::ZERO,
                heading: 0.0,
                speed: 0.0,
                velocity: Vec2::ZERO,
                length: track.length,
                width: track.width,
                steer: 0.0,
                driver: None,
            };
            obj.sync(track, 0);
            if policy == PolicyBinding::Idm && obj.alive {
                let (path, headings) = track_path_with_headings(track);
                let limit = map
                    .nearest_lane(obj.position)
                    .ok()
                    .and_then(|l| map.lane(l))
                    .and_then(|l| l.lane.speed_limit);
                obj.driver = Some(PathDriver {
                    desired_speed: limit.unwrap_or_else(|| track.max_speed()).max(config.idm.min_desired_speed),
                    stop_at_end: track.valid.last().copied().unwrap_or(false),
                    s: 0.0,
                    path,
                    headings,
                });
            }
            objects.push(obj);
        }

        let mut agents = Vec::new();
        for (k, (id, track)) in scenario.tracks.iter().enumerate() {
            let is_agent = match config.mode {
                Mode::Single => *id == sdc_id,
                Mode::Multi => objects[k].policy == PolicyBinding::EnvInput,
                Mode::Traffic => false,
            };
            let Some(first_frame) = track.first_valid().filter(|_| is_agent) else {
                continue;
            };
            agents.push(Agent {
                id: id.clone(),
                object: k,
                reference: track_path(track),
                first_frame,
                termination: Termination::Running,
                spawned: first_frame == 0,
                crash_count: 0,
                max_s: 0.0,
                steps: 0,
                speed_sum: 0.0,
                total_reward: 0.0,
            });
        }

        let mut lane_lights = HashMap::new();
        for (light_id, light) in &scenario.dynamic_states {
            lane_lights.entry(light.lane_id.clone()).or_insert_with(|| light_id.clone());
        }

        let horizon = match config.mode {
            Mode::Traffic => n.saturating_sub(1),
            _ => n + config.termination.timeout_steps,
        };
        Ok(World {
            rng: ChaCha8Rng::seed_from_u64(config.noise_seed),
            scenario,
            map,
            config,
            tick: 0,
            horizon,
            objects,
            agents,
            lane_lights,
        })
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn time_s(&self) -> f64 {
        self.tick as f64 * self.scenario.metadata.dt
    }

    /// Last tick the episode can reach.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn scenario(&self) -> &ScenarioDescription {
        &self.scenario
    }

    pub fn map(&self) -> &MapIndex {
        &self.map
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn objects(&self) -> &[SimObject] {
        &self.objects
    }

    pub fn object(&self, id: &str) -> Option<&SimObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    fn agent_index(&self, id: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    fn is_live(&self, a: &Agent) -> bool {
        a.termination == Termination::Running && self.objects[a.object].alive
    }

    /// Ids of agents that currently expect an action.
    pub fn live_agents(&self) -> Vec<String> {
        self.agents
            .iter()
            .filter(|a| self.is_live(a) && self.objects[a.object].policy == PolicyBinding::EnvInput)
            .map(|a| a.id.clone())
            .collect()
    }

    pub fn done(&self) -> bool {
        match self.config.mode {
            Mode::Traffic => self.tick >= self.horizon,
            _ => self.tick >= self.horizon || self.agents.iter().all(|a| a.termination.is_terminal()),
        }
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            tick: self.tick,
            objects: self
                .objects
                .iter()
                .map(|o| ObjectSnapshot {
                    id: o.id.clone(),
                    alive: o.alive,
                    x: o.position.x,
                    y: o.position.y,
                    heading: o.heading,
                    speed: o.speed,
                })
                .collect(),
        }
    }

    /// Marks every running agent as aborted and ends the episode.
    pub fn abort(&mut self) {
        for a in &mut self.agents {
            if !a.termination.is_terminal() {
                a.termination = Termination::Aborted;
            }
        }
    }

    /// Traffic light state governing an object: its nearest lane's light, else
    /// the first successor lane carrying one.
    pub fn light_for_object(&self, object_id: &str) -> Option<LightState> {
        let obj = self.object(object_id)?;
        let lane = self.map.nearest_lane(obj.position).ok()?;
        let light_on = |lane: &str| {
            self.lane_lights.get(lane).map(|light_id| {
                let states = &self.scenario.dynamic_states[light_id].states;
                states.get(self.tick).copied().unwrap_or(LightState::Unknown)
            })
        };
        light_on(lane).or_else(|| {
            self.map
                .lane_successors(lane)
                .ok()?
                .iter()
                .find_map(|succ| light_on(succ))
        })
    }

    /// Current termination state of an agent. Terminal states are sticky.
    pub fn check_termination(&self, agent_id: &str) -> Result<Termination> {
        let i = self
            .agent_index(agent_id)
            .ok_or_else(|| Error::UnknownAgent(agent_id.to_string()))?;
        Ok(self.evaluate_termination(i))
    }

    fn reference_frame(&self, a: &Agent) -> (f64, f64, f64) {
        let pos = self.objects[a.object].position;
        match &a.reference {
            Some(r) => {
                let p = r.project(pos);
                (p.s, p.d, p.distance)
            }
            None => (0.0, 0.0, 0.0),
        }
    }

    fn evaluate_termination(&self, i: usize) -> Termination {
        let a = &self.agents[i];
        if a.termination.is_terminal() {
            return a.termination;
        }
        let timeout = self.tick >= self.config.termination.timeout_steps + self.scenario.metadata.episode_length;
        if !self.objects[a.object].alive {
            return if a.spawned || timeout {
                Termination::Timeout
            } else {
                Termination::Running
            };
        }
        let tp = &self.config.termination;
        let (s, d, dist) = self.reference_frame(a);
        match self.config.mode {
            Mode::Multi => {
                let completion = match &a.reference {
                    Some(r) => (a.max_s.max(s) / r.length()).clamp(0.0, 1.0),
                    None => 1.0,
                };
                if completion > tp.success_completion {
                    return Termination::Success;
                }
                if dist > tp.out_of_road {
                    return Termination::OutOfRoad;
                }
            }
            _ => {
                let total = a.reference.as_ref().map_or(0.0, Polyline::length);
                if d.abs() <= tp.out_of_route && s >= total - tp.success_radius {
                    return Termination::Success;
                }
                if d.abs() > tp.out_of_route {
                    return Termination::OutOfRoute;
                }
            }
        }
        if timeout {
            Termination::Timeout
        } else {
            Termination::Running
        }
    }

    fn observe_agent(&mut self, i: usize) -> Vec<f64> {
        let a = &self.agents[i];
        let me = &self.objects[a.object];
        let cfg = &self.config.sensing;
        let targets: Vec<Obb> = self
            .objects
            .iter()
            .enumerate()
            .filter(|(k, o)| *k != a.object && o.alive)
            .map(|(_, o)| o.footprint())
            .collect();
        let mut obs = sensing::lidar_scan(
            me.position,
            me.heading,
            &targets,
            cfg.lidar_rays,
            cfg.lidar_range,
            cfg.noise_std,
            &mut self.rng,
        );
        let reference = a.reference.as_ref();
        obs.extend(sensing::ego_state(cfg, me.steer, me.position, me.heading, me.speed, reference));
        obs.extend(sensing::navigation_points(
            reference,
            me.position,
            me.heading,
            cfg.nav_points,
            cfg.nav_spacing,
            cfg.nav_scale,
        ));
        if cfg.boundary {
            obs.extend(sensing::boundary_scan(
                &self.map,
                me.position,
                me.heading,
                cfg.boundary_rays,
                cfg.boundary_range,
            ));
        }
        obs
    }

    /// Observation vectors of all live agents (empty when observation is disabled).
    pub fn observe_all(&mut self) -> Observations {
        let mut out = BTreeMap::new();
        if !self.config.observe {
            return out;
        }
        for i in 0..self.agents.len() {
            if self.is_live(&self.agents[i]) {
                let obs = self.observe_agent(i);
                out.insert(self.agents[i].id.clone(), obs);
            }
        }
        out
    }

    /// Advances the world by one frame.
    pub fn step(&mut self, actions: &BTreeMap<String, Action>) -> Result<StepResult> {
        if self.done() {
            return Err(Error::EpisodeDone);
        }
        for (id, action) in actions {
            let i = self.agent_index(id).ok_or_else(|| Error::UnknownAgent(id.clone()))?;
            let a = &self.agents[i];
            if !self.is_live(a) || self.objects[a.object].policy != PolicyBinding::EnvInput {
                return Err(Error::DeadAgent(id.clone()));
            }
            if !action.is_finite() {
                return Err(Error::BadAction(id.clone()));
            }
        }
        for id in self.live_agents() {
            if !actions.contains_key(&id) {
                return Err(Error::MissingAction(id));
            }
        }

        let next = self.tick + 1;
        let dt = self.scenario.metadata.dt;
        let live_before: Vec<usize> = (0..self.agents.len())
            .filter(|&i| self.is_live(&self.agents[i]))
            .collect();
        let prev_pos: Vec<Vec2> = live_before
            .iter()
            .map(|&i| self.objects[self.agents[i].object].position)
            .collect();

        // Replay objects follow the log.
        let scenario = Arc::clone(&self.scenario);
        for (obj, track) in self.objects.iter_mut().zip(scenario.tracks.values()) {
            if obj.policy == PolicyBinding::Replay {
                obj.sync(track, next);
            }
        }
        // Multi-agent vehicles enter at their first valid frame.
        for a in &mut self.agents {
            if !a.spawned && a.first_frame == next {
                a.spawned = true;
                let track = &scenario.tracks[&a.id];
                self.objects[a.object].sync(track, next);
            }
        }

        self.step_idm(dt);

        for &i in &live_before {
            let obj = &mut self.objects[self.agents[i].object];
            if obj.policy != PolicyBinding::EnvInput {
                continue;
            }
            let action = actions[&self.agents[i].id].clipped();
            let state = KinematicState {
                position: obj.position,
                heading: obj.heading,
                speed: obj.speed,
            };
            let nextstate = kinematic_step(&self.config.vehicle, state, action, dt);
            obj.position = nextstate.position;
            obj.heading = nextstate.heading;
            obj.speed = nextstate.speed;
            obj.velocity = Vec2::from_angle(obj.heading) * obj.speed;
            obj.steer = action.steer;
        }

        let bodies: Vec<Body> = self
            .objects
            .iter()
            .map(|o| Body {
                obb: o.footprint(),
                object_type: o.object_type,
                alive: o.alive,
            })
            .collect();
        let mut worst: Vec<Option<CollisionClass>> = vec![None; self.objects.len()];
        for c in detect_collisions(&bodies) {
            for k in [c.a, c.b] {
                worst[k] = worst[k].max(Some(c.class));
            }
        }

        self.tick = next;
        let mut rewards = BTreeMap::new();
        let mut terminations = BTreeMap::new();
        let mut info = BTreeMap::new();
        for (&i, &prev) in live_before.iter().zip(&prev_pos) {
            let (s, d, _) = self.reference_frame(&self.agents[i]);
            let obj = &self.objects[self.agents[i].object];
            let displacement = match &self.agents[i].reference {
                Some(r) if obj.alive => s - r.project(prev).s,
                _ => 0.0,
            };
            let collision = if obj.alive { worst[self.agents[i].object] } else { None };
            let (speed, steer, position, heading, alive) = (obj.speed, obj.steer, obj.position, obj.heading, obj.alive);
            if alive {
                self.agents[i].max_s = self.agents[i].max_s.max(s);
            }
            let termination = self.evaluate_termination(i);
            let reward = step_reward(
                &self.config.rewards,
                &Transition {
                    displacement,
                    speed,
                    steer,
                    collision,
                    termination,
                },
            );
            let a = &mut self.agents[i];
            a.termination = termination;
            a.crash_count += usize::from(collision.is_some());
            a.steps += 1;
            a.speed_sum += speed;
            a.total_reward += reward;
            rewards.insert(a.id.clone(), reward);
            terminations.insert(a.id.clone(), termination);
            info.insert(
                a.id.clone(),
                AgentInfo {
                    x: position.x,
                    y: position.y,
                    heading,
                    speed,
                    route_completion: a.route_completion(),
                    lateral: d,
                    collision,
                    crash_count: a.crash_count,
                },
            );
        }
        if self.config.mode == Mode::Multi {
            for a in &self.agents {
                if a.termination.is_terminal() {
                    self.objects[a.object].alive = false;
                }
            }
        }
        if self.tick >= self.horizon && self.config.mode != Mode::Traffic {
            for a in &mut self.agents {
                if !a.termination.is_terminal() {
                    a.termination = Termination::Timeout;
                }
            }
        }
        let observations = self.observe_all();
        Ok(StepResult {
            tick: self.tick,
            observations,
            rewards,
            terminations,
            info,
            done: self.done(),
        })
    }

    fn step_idm(&mut self, dt: f64) {
        let p = self.config.idm;
        let footprints: Vec<(Obb, f64, bool)> = self
            .objects
            .iter()
            .map(|o| (o.footprint(), o.speed, o.alive))
            .collect();
        let mut accel = vec![0.0; self.objects.len()];
        for (k, obj) in self.objects.iter().enumerate() {
            if obj.policy != PolicyBinding::Idm || !obj.alive {
                continue;
            }
            let Some(driver) = &obj.driver else { continue };
            let Some(path) = &driver.path else { continue };
            let others = footprints
                .iter()
                .enumerate()
                .filter(|(j, f)| *j != k && f.2)
                .map(|(j, f)| (j, &f.0, f.1));
            let mut leader = find_leader(&p, path, driver.s, &footprints[k].0, obj.speed, others).map(|l| (l.gap, l.dv));
            if driver.stop_at_end {
                let to_end = path.length() - driver.s;
                if to_end < p.lookahead && leader.map_or(true, |(g, _)| to_end < g) {
                    leader = Some((to_end, obj.speed));
                }
            }
            accel[k] = idm_acceleration(&p, obj.speed, driver.desired_speed, leader);
        }
        let before: Vec<Option<Pose>> = self
            .objects
            .iter()
            .map(|o| (o.policy == PolicyBinding::Idm && o.alive && o.driver.is_some()).then(|| Pose::of(o)))
            .collect();
        for (k, obj) in self.objects.iter_mut().enumerate() {
            if obj.policy != PolicyBinding::Idm || !obj.alive {
                continue;
            }
            let Some(driver) = obj.driver.as_mut() else { continue };
            let Some(path) = &driver.path else {
                obj.speed = 0.0;
                obj.velocity = Vec2::ZERO;
                continue;
            };
            let a = accel[k];
            let v = obj.speed;
            let (advance, v_next) = if v + a * dt < 0.0 {
                // Stops within the step.
                (v * v / (2.0 * -a), 0.0)
            } else {
                (v * dt + 0.5 * a * dt * dt, v + a * dt)
            };
            driver.s += advance.max(0.0);
            if driver.s >= path.length() {
                if driver.stop_at_end {
                    driver.s = path.length();
                    obj.speed = 0.0;
                } else {
                    obj.alive = false;
                    continue;
                }
            } else {
                obj.speed = v_next;
            }
            let (pos, heading) = driver.pose(path);
            obj.position = pos;
            obj.heading = heading;
            obj.velocity = Vec2::from_angle(heading) * obj.speed;
        }
        self.guard_idm_contacts(&before);
    }

    /// Withholds IDM moves that would put a footprint onto another vehicle or
    /// road user: the mover goes back to its previous pose and stops. When two
    /// movers meet, the one with the other ahead of it yields first.
    fn guard_idm_contacts(&mut self, before: &[Option<Pose>]) {
        let mut moved: Vec<bool> = before.iter().map(Option::is_some).collect();
        loop {
            let live: Vec<usize> = (0..self.objects.len())
                .filter(|&k| self.objects[k].alive && !self.objects[k].object_type.is_road_object())
                .collect();
            let mut yielders = Vec::new();
            for (x, &i) in live.iter().enumerate() {
                for &j in &live[x + 1..] {
                    if !(moved[i] || moved[j]) {
                        continue;
                    }
                    let (a, b) = (&self.objects[i], &self.objects[j]);
                    let (na, nb) = (Pose::of(a), Pose::of(b));
                    if !touching(a, &na, b, &nb) {
                        continue;
                    }
                    // Contacts that already existed are not the move's doing.
                    if touching(a, before[i].as_ref().unwrap_or(&na), b, before[j].as_ref().unwrap_or(&nb)) {
                        continue;
                    }
                    let yielder = match (moved[i], moved[j]) {
                        (true, false) => i,
                        (false, true) => j,
                        _ => {
                            let ahead_of_a = (b.position - a.position).dot(Vec2::from_angle(a.heading));
                            let ahead_of_b = (a.position - b.position).dot(Vec2::from_angle(b.heading));
                            if ahead_of_a >= ahead_of_b {
                                i
                            } else {
                                j
                            }
                        }
                    };
                    yielders.push(yielder);
                }
            }
            if yielders.is_empty() {
                return;
            }
            for k in yielders {
                if let Some(prev) = before[k] {
                    let obj = &mut self.objects[k];
                    obj.alive = true;
                    obj.position = prev.position;
                    obj.heading = prev.heading;
                    obj.speed = 0.0;
                    obj.velocity = Vec2::ZERO;
                    if let Some(d) = obj.driver.as_mut() {
                        d.s = prev.s;
                    }
                    moved[k] = false;
                }
            }
        }
    }

    /// Steps with no external actions until the episode ends. Fails if an
    /// env-input agent is live.
    pub fn run_to_end(&mut self) -> Result<()> {
        let none = BTreeMap::new();
        while !self.done() {
            self.step(&none)?;
        }
        Ok(())
    }

    /// Per-agent outcome rows for the episode so far.
    pub fn episode_records(&self) -> Vec<EpisodeRecord> {
        self.agents
            .iter()
            .filter(|a| a.spawned)
            .map(|a| EpisodeRecord {
                scenario_id: self.scenario.scenario_id.clone(),
                agent_id: a.id.clone(),
                termination: a.termination,
                route_completion: a.route_completion(),
                mean_speed: if a.steps > 0 { a.speed_sum / a.steps as f64 } else { 0.0 },
                cost: a.crash_count as f64,
                steps: a.steps,
                total_reward: a.total_reward,
            })
            .collect()
    }
}

/// True when `p` lies behind the ego's start along its reference (extended
/// backwards along the first segment) and within one lane width of it.
pub fn behind(reference: Option<&Polyline>, ego_start: Vec2, ego_heading: f64, p: Vec2, lane_width: f64) -> bool {
    let (origin, dir) = match reference {
        Some(r) => {
            let proj = r.project(p);
            if proj.s > 0.0 {
                return false;
            }
            (r.start(), (r.points()[1] - r.start()).normalized())
        }
        None => (ego_start, Vec2::from_angle(ego_heading)),
    };
    let rel = p - origin;
    rel.dot(dir) < 0.0 && dir.cross(rel).abs() < lane_width
}
