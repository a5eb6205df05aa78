//! Generic frame-centric driving logs and their transposition into
//! object-centric tracks.
//!
//! A log is newline-delimited JSON. An optional first `header` record carries
//! the scenario id, ego id and map; every other line is one `frame` record.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LightState, ObjectTrack, ObjectType, ScenarioDescription, ScenarioMetadata, TrafficLightTrack};
use crate::error::{Error, Result};
use crate::map::MapFeature;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObject {
    pub id: String,
    #[serde(rename = "type")]
    pub object_type: ObjectType,
    pub position: [f64; 3],
    pub heading: f64,
    pub velocity: [f64; 2],
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLight {
    pub id: String,
    pub lane_id: String,
    pub state: LightState,
    pub stop_point: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// Timestamp in seconds.
    pub t: f64,
    pub objects: Vec<FrameObject>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lights: Vec<FrameLight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub scenario_id: String,
    pub sdc_id: String,
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default)]
    pub map_features: BTreeMap<String, MapFeature>,
}

fn default_source() -> String {
    "log".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header(LogHeader),
    Frame(Frame),
}

/// Transposes frames into one track per object id. Frames where an id is
/// absent are zero-padded with `valid = false`; sizes come from the first
/// appearance.
pub fn transpose_frame_log(frames: &[Frame]) -> Result<BTreeMap<String, ObjectTrack>> {
    let n = frames.len();
    let mut tracks: BTreeMap<String, ObjectTrack> = BTreeMap::new();
    for (i, frame) in frames.iter().enumerate() {
        for obj in &frame.objects {
            let track = tracks.entry(obj.id.clone()).or_insert_with(|| {
                ObjectTrack::empty(obj.object_type, n, obj.length, obj.width, obj.height)
            });
            if track.object_type != obj.object_type {
                return Err(Error::TypeConflict {
                    id: obj.id.clone(),
                    first: track.object_type.to_string(),
                    second: obj.object_type.to_string(),
                });
            }
            if track.valid[i] {
                return Err(Error::Corrupt(format!("object {:?} listed twice in frame {i}", obj.id)));
            }
            track.position[i] = obj.position;
            track.heading[i] = obj.heading;
            track.velocity[i] = obj.velocity;
            track.valid[i] = true;
        }
    }
    Ok(tracks)
}

/// Light tracks from per-frame light records; frames without a record read `Unknown`.
pub fn transpose_lights(frames: &[Frame]) -> Result<BTreeMap<String, TrafficLightTrack>> {
    let n = frames.len();
    let mut lights: BTreeMap<String, TrafficLightTrack> = BTreeMap::new();
    for (i, frame) in frames.iter().enumerate() {
        for l in &frame.lights {
            let track = lights.entry(l.id.clone()).or_insert_with(|| TrafficLightTrack {
                lane_id: l.lane_id.clone(),
                states: vec![LightState::Unknown; n],
                stop_point: l.stop_point,
            });
            if track.lane_id != l.lane_id {
                return Err(Error::Corrupt(format!("light {:?} changes lane", l.id)));
            }
            track.states[i] = l.state;
        }
    }
    Ok(lights)
}

/// Inverse of [`transpose_frame_log`]: one frame per timestamp, objects in id order.
pub fn expand_to_frames(tracks: &BTreeMap<String, ObjectTrack>, times: &[f64]) -> Vec<Frame> {
    times
        .iter()
        .enumerate()
        .map(|(i, &t)| Frame {
            t,
            objects: tracks
                .iter()
                .filter(|(_, tr)| tr.valid.get(i).copied().unwrap_or(false))
                .map(|(id, tr)| FrameObject {
                    id: id.clone(),
                    object_type: tr.object_type,
                    position: tr.position[i],
                    heading: tr.heading[i],
                    velocity: tr.velocity[i],
                    length: tr.length,
                    width: tr.width,
                    height: tr.height,
                })
                .collect(),
            lights: Vec::new(),
        })
        .collect()
}

/// Parses a newline-delimited log. Blank lines are skipped.
pub fn parse_frame_log<R: BufRead>(reader: R) -> Result<(Option<LogHeader>, Vec<Frame>)> {
    let mut header = None;
    let mut frames = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Corrupt(format!("line {}: {e}", lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord =
            serde_json::from_str(&line).map_err(|e| Error::Corrupt(format!("line {}: {e}", lineno + 1)))?;
        match rec {
            LogRecord::Header(h) if header.is_none() && frames.is_empty() => header = Some(h),
            LogRecord::Header(_) => {
                return Err(Error::Corrupt(format!("line {}: header must be the first record", lineno + 1)))
            }
            LogRecord::Frame(f) => frames.push(f),
        }
    }
    Ok((header, frames))
}

pub fn read_frame_log(path: impl AsRef<Path>) -> Result<(Option<LogHeader>, Vec<Frame>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_frame_log(std::io::BufReader::new(file))
}

/// Builds a full scenario description from a parsed log.
pub fn convert_frame_log(header: LogHeader, frames: &[Frame]) -> Result<ScenarioDescription> {
    if frames.len() < 2 {
        return Err(Error::InconsistentDt(format!("need at least 2 frames, got {}", frames.len())));
    }
    let dt = frames[1].t - frames[0].t;
    if !(dt > 0.0) {
        return Err(Error::InconsistentDt(format!("non-increasing timestamps at frame 1 (dt = {dt})")));
    }
    for (i, w) in frames.windows(2).enumerate() {
        let step = w[1].t - w[0].t;
        if (step - dt).abs() > 1e-6 * dt.max(1.0) {
            return Err(Error::InconsistentDt(format!("frame {} spacing {step} != {dt}", i + 1)));
        }
    }
    let mut metadata = ScenarioMetadata::new(header.source, dt, frames.len(), header.sdc_id);
    metadata.extra.insert("origin".into(), serde_json::json!("frame_log"));
    let mut desc = ScenarioDescription::new(header.scenario_id, metadata);
    desc.map_features = header.map_features;
    desc.tracks = transpose_frame_log(frames)?;
    desc.dynamic_states = transpose_lights(frames)?;
    desc.normalize_headings();
    desc.refresh_statistics();
    if let Ok(ego) = desc.sdc_track() {
        desc.metadata.difficulty = crate::metrics::difficulty_score(ego).ok();
    }
    Ok(desc)
}

/// Reads and converts one log file. The log must start with a header record.
pub fn convert_log_file(path: impl AsRef<Path>) -> Result<ScenarioDescription> {
    let path = path.as_ref();
    let (header, frames) = read_frame_log(path)?;
    let header = header.ok_or_else(|| Error::Corrupt(format!("{}: log has no header record", path.display())))?;
    convert_frame_log(header, &frames)
}
