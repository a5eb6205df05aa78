//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;
use sfb_core::geom::Vec2;
use sfb_core::map::{lane_polygon, Lane, LaneLine, LineType, MapFeature};
use sfb_core::scenario::{LightState, ObjectTrack, ObjectType, ScenarioDescription, ScenarioMetadata, TrafficLightTrack};
use sfb_core::sim::SimObject;

/// A float drawn to exercise shortest round-trip printing: plain values,
/// values with long expansions, tiny and huge magnitudes, negative zero.
pub fn awkward_float<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    match rng.gen_range(0..8) {
        0 => 0.1 + 0.2,
        1 => -0.0,
        2 => rng.gen::<f64>() * 1e-300,
        3 => (rng.gen::<f64>() - 0.5) * 1e15,
        4 => f64::from_bits(rng.gen::<u64>() >> 12 | 0x3ff0_0000_0000_0000) - 1.0,
        5 => 1.0 / 3.0 * scale,
        _ => (rng.gen::<f64>() - 0.5) * 2.0 * scale,
    }
}

pub fn straight_lane(from: Vec2, to: Vec2, width: f64) -> Lane {
    Lane {
        polyline: vec![[from.x, from.y, 0.0], [to.x, to.y, 0.0]],
        polygon: lane_polygon(&[from, to], width),
        speed_limit: Some(12.0),
        entry_lanes: vec![],
        exit_lanes: vec![],
        left_neighbors: vec![],
        right_neighbors: vec![],
    }
}

/// A gently winding lane: x strictly increasing, bounded y steps, so the
/// offset polygon stays simple.
pub fn random_lane<R: Rng>(rng: &mut R, origin: Vec2) -> Lane {
    let n = rng.gen_range(2..7);
    let mut pts = vec![origin];
    for _ in 1..n {
        let last = *pts.last().unwrap();
        pts.push(Vec2::new(last.x + rng.gen_range(8.0..25.0), last.y + rng.gen_range(-3.0..3.0)));
    }
    Lane {
        polyline: pts.iter().map(|p| [p.x, p.y, rng.gen_range(-1.0..1.0)]).collect(),
        polygon: lane_polygon(&pts, rng.gen_range(2.5..4.5)),
        speed_limit: rng.gen_bool(0.7).then(|| rng.gen_range(5.0..30.0)),
        entry_lanes: vec![],
        exit_lanes: vec![],
        left_neighbors: vec![],
        right_neighbors: vec![],
    }
}

/// A structurally valid scenario with random content.
pub fn random_scenario<R: Rng>(rng: &mut R, id: &str) -> ScenarioDescription {
    let n = rng.gen_range(2..40);
    let dt = [0.1, 0.05, 0.2, 1.0 / 3.0][rng.gen_range(0..4)];
    let mut desc = ScenarioDescription::new(id, ScenarioMetadata::new("random", dt, n, "ego"));

    let n_lanes = rng.gen_range(1..4);
    let lane_ids: Vec<String> = (0..n_lanes).map(|k| format!("lane_{k}")).collect();
    for (k, lid) in lane_ids.iter().enumerate() {
        let mut lane = random_lane(rng, Vec2::new(0.0, 10.0 * k as f64));
        if k + 1 < n_lanes {
            lane.left_neighbors.push(lane_ids[k + 1].clone());
        }
        if k > 0 {
            lane.right_neighbors.push(lane_ids[k - 1].clone());
        }
        desc.map_features.insert(lid.clone(), MapFeature::Lane(lane));
    }
    if rng.gen_bool(0.5) {
        let kind = [LineType::Broken, LineType::Solid, LineType::RoadEdge][rng.gen_range(0..3)];
        desc.map_features.insert(
            "line_0".into(),
            MapFeature::LaneLine(LaneLine {
                polyline: vec![[0.0, -2.0, 0.0], [rng.gen_range(10.0..90.0), -2.0, awkward_float(rng, 1.0)]],
                line_type: kind,
            }),
        );
    }

    let n_tracks = rng.gen_range(1..6);
    for k in 0..n_tracks {
        let (tid, ty) = if k == 0 {
            ("ego".to_string(), ObjectType::Vehicle)
        } else {
            (format!("obj {k}/\"x\""), *ObjectType::ALL.choose(rng).unwrap())
        };
        let mut t = ObjectTrack::empty(ty, n, rng.gen_range(0.3..6.0), rng.gen_range(0.3..2.5), rng.gen_range(0.0..3.0));
        for i in 0..n {
            t.valid[i] = (k == 0 && i == 0) || rng.gen_bool(0.8);
            if t.valid[i] || rng.gen_bool(0.1) {
                t.position[i] = [awkward_float(rng, 100.0), awkward_float(rng, 100.0), awkward_float(rng, 5.0)];
                t.heading[i] = rng.gen_range(-PI..PI);
                t.velocity[i] = [awkward_float(rng, 20.0), awkward_float(rng, 20.0)];
            }
        }
        if rng.gen_bool(0.3) {
            t.metadata.insert("original_id".into(), json!(rng.gen::<u32>()));
            t.metadata.insert("note".into(), json!({"f": awkward_float(rng, 1.0), "s": "ünïcødé"}));
        }
        desc.tracks.insert(tid, t);
    }

    for k in 0..rng.gen_range(0..3) {
        let states = (0..n)
            .map(|_| [LightState::Red, LightState::Yellow, LightState::Green, LightState::Unknown][rng.gen_range(0..4)])
            .collect();
        desc.dynamic_states.insert(
            format!("light_{k}"),
            TrafficLightTrack {
                lane_id: lane_ids.choose(rng).unwrap().clone(),
                states,
                stop_point: [awkward_float(rng, 50.0), awkward_float(rng, 50.0), 0.0],
            },
        );
    }
    if rng.gen_bool(0.5) {
        desc.metadata.difficulty = Some(rng.gen_range(0.0..500.0));
    }
    if rng.gen_bool(0.5) {
        desc.metadata.extra = BTreeMap::from([("seed".to_string(), json!(rng.gen::<u64>()))]);
    }
    desc.refresh_statistics();
    desc
}

/// An ego driving along +x at `speed` for `n` frames on one straight lane.
pub fn straight_scenario(id: &str, n: usize, speed: f64) -> ScenarioDescription {
    let mut desc = ScenarioDescription::new(id, ScenarioMetadata::new("test", 0.1, n, "ego"));
    desc.map_features.insert(
        "lane0".into(),
        MapFeature::Lane(straight_lane(Vec2::new(-50.0, 0.0), Vec2::new(500.0, 0.0), 3.5)),
    );
    let mut ego = ObjectTrack::empty(ObjectType::Vehicle, n, 4.5, 1.9, 1.5);
    for i in 0..n {
        ego.position[i] = [i as f64 * speed * 0.1, 0.0, 0.0];
        ego.velocity[i] = [speed, 0.0];
        ego.valid[i] = true;
    }
    desc.tracks.insert("ego".into(), ego);
    desc.refresh_statistics();
    desc
}

/// Pairs of live vehicles whose footprints overlap.
pub fn vehicle_contacts(objects: &[SimObject]) -> Vec<(String, String)> {
    let cars: Vec<&SimObject> = objects
        .iter()
        .filter(|o| o.alive && o.object_type == ObjectType::Vehicle)
        .collect();
    let mut out = Vec::new();
    for (i, a) in cars.iter().enumerate() {
        for b in &cars[i + 1..] {
            let reach = 0.5 * (a.length.hypot(a.width) + b.length.hypot(b.width));
            if a.position.distance(b.position) <= reach && a.footprint().overlaps(&b.footprint()) {
                out.push((a.id.clone(), b.id.clone()));
            }
        }
    }
    out
}

pub mod episodes;
pub mod oracle;
