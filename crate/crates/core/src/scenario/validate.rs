use std::f64::consts::PI;
use std::fmt;

use serde_json::Value;

use super::{ObjectType, ScenarioDescription, COORDINATE_CONVENTION, FORMAT_VERSION};
use crate::map::MapFeature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    MissingKey,
    WrongType,
    PositionShape,
    VelocityShape,
    ArrayLength,
    NonPositiveSize,
    HeadingRange,
    NonFinite,
    DanglingLaneReference,
    DanglingConnectivity,
    BadGeometry,
    SdcMissing,
    SdcNotVehicle,
    SdcAbsentAtStart,
    BadDt,
    EpisodeTooShort,
    CountMismatch,
    StatisticMismatch,
    CoordinateConvention,
    UnsupportedVersion,
}

impl ViolationKind {
    pub fn message(self) -> &'static str {
        match self {
            ViolationKind::MissingKey => "missing required key",
            ViolationKind::WrongType => "value has the wrong type",
            ViolationKind::PositionShape => "position not shape (N,3)",
            ViolationKind::VelocityShape => "velocity not shape (N,2)",
            ViolationKind::ArrayLength => "state array length differs from episode_length",
            ViolationKind::NonPositiveSize => "object size must be positive",
            ViolationKind::HeadingRange => "heading outside [-pi, pi)",
            ViolationKind::NonFinite => "non-finite value",
            ViolationKind::DanglingLaneReference => "dangling lane reference",
            ViolationKind::DanglingConnectivity => "connectivity references unknown lane",
            ViolationKind::BadGeometry => "invalid geometry",
            ViolationKind::SdcMissing => "sdc_id does not name a track",
            ViolationKind::SdcNotVehicle => "sdc track is not a vehicle",
            ViolationKind::SdcAbsentAtStart => "sdc not valid at frame 0",
            ViolationKind::BadDt => "dt must be positive and finite",
            ViolationKind::EpisodeTooShort => "episode_length must be at least 2",
            ViolationKind::CountMismatch => "metadata count does not match content",
            ViolationKind::StatisticMismatch => "metadata statistic does not match content",
            ViolationKind::CoordinateConvention => "unexpected coordinate convention",
            ViolationKind::UnsupportedVersion => "unsupported format_version",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Dotted path of the offending entry, e.g. `tracks.ego.position`.
    pub location: String,
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.kind.message())?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, location: impl Into<String>, kind: ViolationKind, detail: impl Into<String>) {
        self.violations.push(Violation {
            location: location.into(),
            kind,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return f.write_str("pass");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
}

/// Checks every invariant of a typed scenario description. Never mutates it.
pub fn validate_scenario(desc: &ScenarioDescription) -> ValidationReport {
    let mut r = ValidationReport::default();
    let md = &desc.metadata;
    let n = md.episode_length;

    if desc.format_version != FORMAT_VERSION {
        r.push("format_version", ViolationKind::UnsupportedVersion, desc.format_version.clone());
    }
    if !(md.dt > 0.0 && md.dt.is_finite()) {
        r.push("metadata.dt", ViolationKind::BadDt, md.dt.to_string());
    }
    if n < 2 {
        r.push("metadata.episode_length", ViolationKind::EpisodeTooShort, n.to_string());
    }
    if md.coordinate_convention != COORDINATE_CONVENTION {
        r.push(
            "metadata.coordinate_convention",
            ViolationKind::CoordinateConvention,
            md.coordinate_convention.clone(),
        );
    }
    if let Some(d) = md.difficulty {
        if !d.is_finite() {
            r.push("metadata.difficulty", ViolationKind::NonFinite, "");
        }
    }

    // Map features.
    for (id, feature) in &desc.map_features {
        match feature {
            MapFeature::Lane(lane) => {
                for defect in lane.defects() {
                    r.push(format!("map_features.{id}"), ViolationKind::BadGeometry, defect.to_string());
                }
                if let Some(v) = lane.speed_limit {
                    if !(v > 0.0 && v.is_finite()) {
                        r.push(format!("map_features.{id}.speed_limit"), ViolationKind::NonFinite, v.to_string());
                    }
                }
                for other in lane.connections() {
                    if !matches!(desc.map_features.get(other), Some(MapFeature::Lane(_))) {
                        r.push(format!("map_features.{id}"), ViolationKind::DanglingConnectivity, other.clone());
                    }
                }
            }
            MapFeature::LaneLine(line) => {
                for defect in line.defects() {
                    r.push(format!("map_features.{id}"), ViolationKind::BadGeometry, defect.to_string());
                }
            }
        }
    }

    // Tracks.
    for (id, t) in &desc.tracks {
        let loc = |field: &str| format!("tracks.{id}.{field}");
        for (field, len) in [
            ("position", t.position.len()),
            ("heading", t.heading.len()),
            ("velocity", t.velocity.len()),
            ("valid", t.valid.len()),
        ] {
            if len != n {
                r.push(loc(field), ViolationKind::ArrayLength, format!("{len} != {n}"));
            }
        }
        if !(t.length > 0.0 && t.width > 0.0 && t.length.is_finite() && t.width.is_finite())
            || !(t.height >= 0.0 && t.height.is_finite())
        {
            r.push(
                loc("size"),
                ViolationKind::NonPositiveSize,
                format!("{} x {} x {}", t.length, t.width, t.height),
            );
        }
        if t.position.iter().flatten().chain(t.velocity.iter().flatten()).any(|v| !v.is_finite()) {
            r.push(loc("position"), ViolationKind::NonFinite, "");
        }
        if let Some(h) = t.heading.iter().find(|h| !(-PI..PI).contains(*h)) {
            r.push(loc("heading"), ViolationKind::HeadingRange, h.to_string());
        }
    }

    match desc.tracks.get(&md.sdc_id) {
        None => r.push("metadata.sdc_id", ViolationKind::SdcMissing, md.sdc_id.clone()),
        Some(t) => {
            if t.object_type != ObjectType::Vehicle {
                r.push("metadata.sdc_id", ViolationKind::SdcNotVehicle, t.object_type.to_string());
            }
            if !t.valid.first().copied().unwrap_or(false) {
                r.push("metadata.sdc_id", ViolationKind::SdcAbsentAtStart, md.sdc_id.clone());
            }
        }
    }

    // Traffic lights.
    for (id, light) in &desc.dynamic_states {
        if light.states.len() != n {
            r.push(
                format!("dynamic_states.{id}.states"),
                ViolationKind::ArrayLength,
                format!("{} != {n}", light.states.len()),
            );
        }
        if !matches!(desc.map_features.get(&light.lane_id), Some(MapFeature::Lane(_))) {
            r.push(
                format!("dynamic_states.{id}.lane_id"),
                ViolationKind::DanglingLaneReference,
                light.lane_id.clone(),
            );
        }
        if light.stop_point.iter().any(|v| !v.is_finite()) {
            r.push(format!("dynamic_states.{id}.stop_point"), ViolationKind::NonFinite, "");
        }
    }

    // Derived statistics.
    if md.object_count != desc.tracks.len() {
        r.push(
            "metadata.object_count",
            ViolationKind::CountMismatch,
            format!("{} != {}", md.object_count, desc.tracks.len()),
        );
    }
    if md.light_count != desc.dynamic_states.len() {
        r.push(
            "metadata.light_count",
            ViolationKind::CountMismatch,
            format!("{} != {}", md.light_count, desc.dynamic_states.len()),
        );
    }
    let lengths_ok = desc.tracks.values().all(|t| t.valid.len() == t.position.len());
    if lengths_ok {
        let keys_match = md.per_object_moving_distance.len() == desc.tracks.len()
            && desc.tracks.keys().all(|k| md.per_object_moving_distance.contains_key(k));
        if !keys_match {
            r.push("metadata.per_object_moving_distance", ViolationKind::StatisticMismatch, "key set differs from tracks");
        } else {
            for (id, t) in &desc.tracks {
                let stored = md.per_object_moving_distance[id];
                let actual = t.moving_distance();
                if !close(stored, actual) {
                    r.push(
                        format!("metadata.per_object_moving_distance.{id}"),
                        ViolationKind::StatisticMismatch,
                        format!("{stored} != {actual}"),
                    );
                }
            }
        }
        if let Some(t) = desc.tracks.get(&md.sdc_id) {
            if !close(md.altitude_range, t.altitude_range()) {
                r.push(
                    "metadata.altitude_range",
                    ViolationKind::StatisticMismatch,
                    format!("{} != {}", md.altitude_range, t.altitude_range()),
                );
            }
        }
    }
    for ty in ObjectType::ALL {
        let actual = desc.tracks.values().filter(|t| t.object_type == ty).count();
        if md.count_of(ty) != actual {
            r.push(
                format!("metadata.type_counts.{ty}"),
                ViolationKind::CountMismatch,
                format!("{} != {actual}", md.count_of(ty)),
            );
        }
    }
    r
}

fn is_triple_array(v: &Value, width: usize) -> bool {
    v.as_array()
        .map_or(false, |rows| rows.iter().all(|row| row.as_array().map_or(false, |c| c.len() == width && c.iter().all(Value::is_number))))
}

/// Structural validation of an untyped scenario document (key presence, value types
/// and array shapes), followed by the typed checks when the structure is sound.
pub fn validate_json(doc: &Value) -> ValidationReport {
    let mut r = ValidationReport::default();
    let Some(top) = doc.as_object() else {
        r.push("$", ViolationKind::WrongType, "scenario must be an object");
        return r;
    };
    for (key, want_object) in [
        ("scenario_id", false),
        ("format_version", false),
        ("map_features", true),
        ("tracks", true),
        ("dynamic_states", true),
        ("metadata", true),
    ] {
        match top.get(key) {
            None => r.push(key, ViolationKind::MissingKey, ""),
            Some(v) if want_object && !v.is_object() => r.push(key, ViolationKind::WrongType, "expected object"),
            Some(v) if !want_object && !v.is_string() => r.push(key, ViolationKind::WrongType, "expected string"),
            _ => {}
        }
    }
    if let Some(tracks) = top.get("tracks").and_then(Value::as_object) {
        for (id, t) in tracks {
            let loc = |f: &str| format!("tracks.{id}.{f}");
            let Some(t) = t.as_object() else {
                r.push(format!("tracks.{id}"), ViolationKind::WrongType, "expected object");
                continue;
            };
            for key in ["type", "position", "heading", "velocity", "valid", "length", "width", "height"] {
                if !t.contains_key(key) {
                    r.push(loc(key), ViolationKind::MissingKey, "");
                }
            }
            if let Some(p) = t.get("position") {
                if !is_triple_array(p, 3) {
                    r.push(loc("position"), ViolationKind::PositionShape, "");
                }
            }
            if let Some(v) = t.get("velocity") {
                if !is_triple_array(v, 2) {
                    r.push(loc("velocity"), ViolationKind::VelocityShape, "");
                }
            }
            if let Some(h) = t.get("heading") {
                if !h.as_array().map_or(false, |a| a.iter().all(Value::is_number)) {
                    r.push(loc("heading"), ViolationKind::WrongType, "expected numbers");
                }
            }
            if let Some(v) = t.get("valid") {
                if !v.as_array().map_or(false, |a| a.iter().all(Value::is_boolean)) {
                    r.push(loc("valid"), ViolationKind::WrongType, "expected booleans");
                }
            }
        }
    }
    if !r.passed() {
        return r;
    }
    match serde_json::from_value::<ScenarioDescription>(doc.clone()) {
        Ok(desc) => validate_scenario(&desc),
        Err(e) => {
            r.push("$", ViolationKind::WrongType, e.to_string());
            r
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::minimal;
    use super::super::{LightState, TrafficLightTrack};
    use super::*;

    #[test]
    fn minimal_passes() {
        let desc = minimal(2);
        let report = validate_scenario(&desc);
        assert!(report.passed(), "{report}");
        assert!(validate_json(&serde_json::to_value(&desc).unwrap()).passed());
    }

    #[test]
    fn position_pairs_rejected() {
        let mut doc = serde_json::to_value(minimal(2)).unwrap();
        doc["tracks"]["ego"]["position"] = serde_json::json!([[0.0, 0.0], [1.0, 0.0]]);
        let report = validate_json(&doc);
        assert!(!report.passed());
        assert!(report.has(ViolationKind::PositionShape));
        assert!(report.to_string().contains("position not shape (N,3)"));
    }

    #[test]
    fn dangling_light_lane() {
        let mut desc = minimal(2);
        desc.dynamic_states.insert(
            "light0".into(),
            TrafficLightTrack {
                lane_id: "nowhere".into(),
                states: vec![LightState::Red; 2],
                stop_point: [0.0; 3],
            },
        );
        desc.refresh_statistics();
        let report = validate_scenario(&desc);
        assert!(report.has(ViolationKind::DanglingLaneReference));
        assert!(report.to_string().contains("dangling lane reference"));
    }

    #[test]
    fn heading_and_sizes_checked() {
        let mut desc = minimal(3);
        desc.tracks.get_mut("ego").unwrap().heading[1] = PI;
        desc.tracks.get_mut("ego").unwrap().width = 0.0;
        let report = validate_scenario(&desc);
        assert!(report.has(ViolationKind::HeadingRange));
        assert!(report.has(ViolationKind::NonPositiveSize));
    }

    #[test]
    fn mismatched_lengths_and_counts() {
        let mut desc = minimal(3);
        desc.tracks.get_mut("ego").unwrap().heading.pop();
        desc.metadata.object_count = 7;
        let report = validate_scenario(&desc);
        assert!(report.has(ViolationKind::ArrayLength));
        assert!(report.has(ViolationKind::CountMismatch));
    }

    #[test]
    fn missing_keys_reported() {
        let mut doc = serde_json::to_value(minimal(2)).unwrap();
        doc.as_object_mut().unwrap().remove("dynamic_states");
        doc["tracks"]["ego"].as_object_mut().unwrap().remove("valid");
        let report = validate_json(&doc);
        assert_eq!(report.violations.iter().filter(|v| v.kind == ViolationKind::MissingKey).count(), 2);
    }
}
