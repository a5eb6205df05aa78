//! The unified scenario description: map features, object-centric tracks,
//! traffic-light tracks and metadata.

mod framelog;
mod sif;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geom::{path_length, Vec2};
use crate::map::MapFeature;

pub use framelog::{
    convert_frame_log, convert_log_file, expand_to_frames, parse_frame_log, read_frame_log, transpose_frame_log, transpose_lights, Frame,
    FrameLight, FrameObject, LogHeader, LogRecord,
};
pub use sif::{decode_scenario, encode_scenario, read_scenario, write_scenario, SIF_EXTENSION};
pub use validate::{validate_json, validate_scenario, ValidationReport, Violation, ViolationKind};

pub const FORMAT_VERSION: &str = "1.0";
pub const COORDINATE_CONVENTION: &str = "right-handed, z-up, meters";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectType {
    Vehicle,
    Pedestrian,
    Cyclist,
    Cone,
    Barrier,
}

impl ObjectType {
    pub const ALL: [ObjectType; 5] = [
        ObjectType::Vehicle,
        ObjectType::Pedestrian,
        ObjectType::Cyclist,
        ObjectType::Cone,
        ObjectType::Barrier,
    ];

    /// Cones and barriers: static road objects rather than traffic participants.
    pub fn is_road_object(self) -> bool {
        matches!(self, ObjectType::Cone | ObjectType::Barrier)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectType::Vehicle => "vehicle",
            ObjectType::Pedestrian => "pedestrian",
            ObjectType::Cyclist => "cyclist",
            ObjectType::Cone => "cone",
            ObjectType::Barrier => "barrier",
        }
    }
}

impl fmt::Display for ObjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// State sequence of one object over the whole episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    #[serde(rename = "type")]
    pub object_type: ObjectType,
    pub position: Vec<[f64; 3]>,
    pub heading: Vec<f64>,
    pub velocity: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, Value>,
}

impl ObjectTrack {
    /// A track of `n` invalid, zero-padded frames.
    pub fn empty(object_type: ObjectType, n: usize, length: f64, width: f64, height: f64) -> Self {
        Self {
            object_type,
            position: vec![[0.0; 3]; n],
            heading: vec![0.0; n],
            velocity: vec![[0.0; 2]; n],
            valid: vec![false; n],
            length,
            width,
            height,
            metadata: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn first_valid(&self) -> Option<usize> {
        self.valid.iter().position(|&v| v)
    }

    pub fn valid_frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.valid.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i)
    }

    /// Planar positions of the valid frames, in frame order.
    pub fn valid_positions(&self) -> Vec<Vec2> {
        self.valid_frames().map(|i| Vec2::from(self.position[i])).collect()
    }

    /// Planar polyline length through the valid positions.
    pub fn moving_distance(&self) -> f64 {
        path_length(self.valid_frames().map(|i| Vec2::from(self.position[i])))
    }

    /// max z - min z over the valid frames.
    pub fn altitude_range(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in self.valid_frames() {
            lo = lo.min(self.position[i][2]);
            hi = hi.max(self.position[i][2]);
        }
        if lo.is_finite() {
            hi - lo
        } else {
            0.0
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.valid_frames()
            .map(|i| self.velocity[i][0].hypot(self.velocity[i][1]))
            .fold(0.0, f64::max)
    }

    /// Heading rate at frame `i`, derived from consecutive valid headings.
    pub fn yaw_rate(&self, i: usize, dt: f64) -> f64 {
        if i == 0 || i >= self.len() || !self.valid[i] || !self.valid[i - 1] {
            return 0.0;
        }
        crate::geom::normalize_angle(self.heading[i] - self.heading[i - 1]) / dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightState {
    Red,
    Yellow,
    Green,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficLightTrack {
    pub lane_id: String,
    pub states: Vec<LightState>,
    pub stop_point: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub source: String,
    pub dt: f64,
    pub episode_length: usize,
    pub sdc_id: String,
    pub coordinate_convention: String,
    pub object_count: usize,
    pub light_count: usize,
    pub per_object_moving_distance: BTreeMap<String, f64>,
    /// Altitude span of the ego track, used to reject overpass scenes.
    pub altitude_range: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<f64>,
    /// Number of tracks per object type.
    #[serde(default)]
    pub type_counts: BTreeMap<ObjectType, usize>,
    /// Number of intersection blocks; only set by generators that know it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersection_count: Option<usize>,
    /// Free-form source details (original ids, file names, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

impl ScenarioMetadata {
    pub fn new(source: impl Into<String>, dt: f64, episode_length: usize, sdc_id: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            dt,
            episode_length,
            sdc_id: sdc_id.into(),
            coordinate_convention: COORDINATE_CONVENTION.to_string(),
            object_count: 0,
            light_count: 0,
            per_object_moving_distance: BTreeMap::new(),
            altitude_range: 0.0,
            difficulty: None,
            type_counts: BTreeMap::new(),
            intersection_count: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn ego_moving_distance(&self) -> f64 {
        self.per_object_moving_distance
            .get(&self.sdc_id)
            .copied()
            .unwrap_or(0.0)
    }

    pub fn count_of(&self, t: ObjectType) -> usize {
        self.type_counts.get(&t).copied().unwrap_or(0)
    }

    pub fn has_road_objects(&self) -> bool {
        self.count_of(ObjectType::Cone) + self.count_of(ObjectType::Barrier) > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDescription {
    pub scenario_id: String,
    pub format_version: String,
    pub map_features: BTreeMap<String, MapFeature>,
    pub tracks: BTreeMap<String, ObjectTrack>,
    pub dynamic_states: BTreeMap<String, TrafficLightTrack>,
    pub metadata: ScenarioMetadata,
}

impl ScenarioDescription {
    pub fn new(scenario_id: impl Into<String>, metadata: ScenarioMetadata) -> Self {
        Self {
            scenario_id: scenario_id.into(),
            format_version: FORMAT_VERSION.to_string(),
            map_features: BTreeMap::new(),
            tracks: BTreeMap::new(),
            dynamic_states: BTreeMap::new(),
            metadata,
        }
    }

    /// Full state sequence of one object; invalid frames are included and flagged.
    pub fn get_object_states(&self, object_id: &str) -> Result<&ObjectTrack> {
        self.tracks
            .get(object_id)
            .ok_or_else(|| Error::UnknownObject(object_id.to_string()))
    }

    pub fn sdc_track(&self) -> Result<&ObjectTrack> {
        self.get_object_states(&self.metadata.sdc_id)
    }

    /// Recomputes the derived statistics in the metadata from the content tables.
    pub fn refresh_statistics(&mut self) {
        let md = &mut self.metadata;
        md.object_count = self.tracks.len();
        md.light_count = self.dynamic_states.len();
        md.per_object_moving_distance = self
            .tracks
            .iter()
            .map(|(id, t)| (id.clone(), t.moving_distance()))
            .collect();
        md.altitude_range = self
            .tracks
            .get(&md.sdc_id)
            .map_or(0.0, ObjectTrack::altitude_range);
        md.type_counts.clear();
        for t in self.tracks.values() {
            *md.type_counts.entry(t.object_type).or_insert(0) += 1;
        }
    }

    /// Wraps every heading into `[-pi, pi)`. Converters call this; reading never does.
    pub fn normalize_headings(&mut self) {
        for t in self.tracks.values_mut() {
            for h in &mut t.heading {
                *h = crate::geom::normalize_angle(*h);
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::map::{lane_polygon, Lane};

    /// One straight 100 m lane along +x and an ego driving along it.
    pub fn minimal(n: usize) -> ScenarioDescription {
        let mut desc = ScenarioDescription::new("minimal", ScenarioMetadata::new("test", 0.1, n, "ego"));
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)];
        desc.map_features.insert(
            "lane0".into(),
            MapFeature::Lane(Lane {
                polyline: pts.iter().map(|p| [p.x, p.y, 0.0]).collect(),
                polygon: lane_polygon(&pts, 3.5),
                speed_limit: Some(10.0),
                entry_lanes: vec![],
                exit_lanes: vec![],
                left_neighbors: vec![],
                right_neighbors: vec![],
            }),
        );
        let mut ego = ObjectTrack::empty(ObjectType::Vehicle, n, 4.5, 1.9, 1.5);
        for i in 0..n {
            ego.position[i] = [i as f64, 0.0, 0.0];
            ego.velocity[i] = [10.0, 0.0];
            ego.valid[i] = true;
        }
        desc.tracks.insert("ego".into(), ego);
        desc.refresh_statistics();
        desc
    }
}
