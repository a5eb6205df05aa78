//! Step rewards, trajectory metrics, episode summaries and the difficulty score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, path_length, Polyline, Vec2};
use crate::scenario::ObjectTrack;
use crate::sim::{CollisionClass, Mode, Termination};

/// Reward coefficients and penalty magnitudes. Penalties are stored as
/// nonnegative magnitudes and enter the reward with a negative sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub mode: Mode,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub vehicle_penalty: f64,
    pub object_penalty: f64,
    pub success_reward: f64,
    pub out_of_route_penalty: f64,
}

impl RewardConfig {
    pub fn single_agent() -> Self {
        Self {
            mode: Mode::Single,
            c1: 2.0,
            c2: 1.0,
            c3: 1.0,
            vehicle_penalty: 2.0,
            object_penalty: 0.5,
            success_reward: 10.0,
            out_of_route_penalty: 5.0,
        }
    }

    pub fn multi_agent() -> Self {
        Self {
            mode: Mode::Multi,
            c1: 1.0,
            c2: 0.0,
            c3: 1.0,
            vehicle_penalty: 1.0,
            object_penalty: 1.0,
            success_reward: 10.0,
            out_of_route_penalty: 1.0,
        }
    }

    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Multi => Self::multi_agent(),
            _ => Self::single_agent(),
        }
    }
}

/// Everything the reward needs to know about one agent's step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Transition {
    /// Change of longitudinal Frenet coordinate on the reference, meters.
    pub displacement: f64,
    pub speed: f64,
    /// Steering component of the action, in [-1, 1].
    pub steer: f64,
    pub collision: Option<CollisionClass>,
    pub termination: Termination,
}

/// Difference of arc-length coordinates of two positions on the reference.
pub fn displacement_reward(reference: &Polyline, prev: Vec2, now: Vec2) -> f64 {
    reference.project(now).s - reference.project(prev).s
}

/// `min(0, 1/v - |steer|)`; a stopped vehicle (1/v = +inf) is never penalized.
pub fn smooth_penalty(speed: f64, steer: f64) -> f64 {
    if speed <= 0.0 {
        return 0.0;
    }
    (1.0 / speed - steer.abs()).min(0.0)
}

pub fn step_reward(cfg: &RewardConfig, t: &Transition) -> f64 {
    let terminal = t.termination.is_terminal();
    let (disp, smooth) = if terminal {
        (0.0, 0.0)
    } else {
        (t.displacement, smooth_penalty(t.speed, t.steer))
    };
    let penalty = match t.collision {
        Some(CollisionClass::VehicleHuman) => cfg.vehicle_penalty,
        Some(CollisionClass::Object) => cfg.object_penalty,
        None => 0.0,
    };
    let term = match t.termination {
        Termination::Success => cfg.success_reward,
        Termination::OutOfRoute | Termination::OutOfRoad => -cfg.out_of_route_penalty,
        _ => 0.0,
    };
    // The multi-agent preset (c1 = c3 = 1, c2 = 0) reduces this to displacement - penalty + terminal.
    cfg.c1 * disp + cfg.c2 * smooth - cfg.c3 * penalty + term
}

fn gt_polyline(gt: &[Vec2]) -> Result<Polyline> {
    Polyline::from_points_dedup(gt.iter().copied())
        .ok_or_else(|| Error::DegenerateTrajectory("ground truth needs at least 2 distinct points".into()))
}

/// Fraction of the ground-truth arc length reached by the agent's furthest projection.
pub fn route_completion(agent: &[Vec2], gt: &[Vec2]) -> Result<f64> {
    let line = gt_polyline(gt)?;
    Ok(route_completion_on(&line, agent))
}

pub fn route_completion_on(line: &Polyline, agent: &[Vec2]) -> f64 {
    let total = line.length();
    agent
        .iter()
        .map(|&p| line.project(p).s / total)
        .fold(0.0, f64::max)
        .clamp(0.0, 1.0)
}

/// Mean distance between time-aligned positions over the first `min(len)` frames.
pub fn average_distance(agent: &[Vec2], gt: &[Vec2]) -> Result<f64> {
    let t = agent.len().min(gt.len());
    if t == 0 {
        return Err(Error::DegenerateTrajectory("empty trajectory".into()));
    }
    let sum: f64 = agent.iter().zip(gt).take(t).map(|(a, g)| a.distance(*g)).sum();
    Ok(sum / t as f64)
}

/// Distance between the last agent position and the last ground-truth position.
pub fn final_distance(agent: &[Vec2], gt: &[Vec2]) -> Result<f64> {
    match (agent.last(), gt.last()) {
        (Some(a), Some(g)) => Ok(a.distance(*g)),
        _ => Err(Error::DegenerateTrajectory("empty trajectory".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Difficulty {
    pub track_length: f64,
    pub cumulative_curvature: f64,
    pub score: f64,
}

/// Track length times the summed absolute heading change over valid frames.
pub fn difficulty(track: &ObjectTrack) -> Result<Difficulty> {
    let frames: Vec<usize> = track.valid_frames().collect();
    if frames.len() < 2 {
        return Err(Error::DegenerateTrajectory(format!(
            "difficulty needs 2 valid frames, got {}",
            frames.len()
        )));
    }
    let track_length = path_length(frames.iter().map(|&i| Vec2::from(track.position[i])));
    let cumulative_curvature: f64 = frames
        .windows(2)
        .map(|w| normalize_angle(track.heading[w[1]] - track.heading[w[0]]).abs())
        .sum();
    Ok(Difficulty {
        track_length,
        cumulative_curvature,
        score: track_length * cumulative_curvature,
    })
}

pub fn difficulty_score(track: &ObjectTrack) -> Result<f64> {
    difficulty(track).map(|d| d.score)
}

/// Outcome of one evaluated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scenario_id: String,
    pub agent_id: String,
    pub termination: Termination,
    pub route_completion: f64,
    pub mean_speed: f64,
    /// Number of steps with at least one collision.
    pub cost: f64,
    pub steps: usize,
    pub total_reward: f64,
}

/// Aggregate evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub out_of_road_rate: f64,
    pub timeout_rate: f64,
    pub route_completion: f64,
    pub speed: f64,
    pub cost: f64,
    pub reward: f64,
}

pub fn episode_metrics(batch: &[EpisodeRecord]) -> Result<EpisodeSummary> {
    if batch.is_empty() {
        return Err(Error::Config("episode batch is empty".into()));
    }
    let n = batch.len() as f64;
    let rate = |pred: fn(Termination) -> bool| batch.iter().filter(|e| pred(e.termination)).count() as f64 / n;
    let mean = |f: fn(&EpisodeRecord) -> f64| batch.iter().map(f).sum::<f64>() / n;
    Ok(EpisodeSummary {
        episodes: batch.len(),
        success_rate: rate(|t| t == Termination::Success),
        out_of_road_rate: rate(|t| matches!(t, Termination::OutOfRoute | Termination::OutOfRoad)),
        timeout_rate: rate(|t| t == Termination::Timeout),
        route_completion: mean(|e| e.route_completion),
        speed: mean(|e| e.mean_speed),
        cost: mean(|e| e.cost),
        reward: mean(|e| e.total_reward),
    })
}
