//! Top-down SVG frames of a recorded scenario.

use std::fmt::Write as _;

use crate::geom::{Obb, Vec2};
use crate::map::{LineType, MapFeature};
use crate::scenario::{ObjectType, ScenarioDescription};

/// Width and height of the square viewport, in meters.
pub const VIEW_EXTENT: f64 = 100.0;
const PIXELS: u32 = 800;

fn object_color(t: ObjectType) -> &'static str {
    match t {
        ObjectType::Vehicle => "#3b6fd6",
        ObjectType::Pedestrian => "#e08a1e",
        ObjectType::Cyclist => "#2a9d4b",
        ObjectType::Cone => "#ff7f0e",
        ObjectType::Barrier => "#a23b72",
    }
}

struct View {
    center: Vec2,
}

impl View {
    fn map(&self, p: Vec2) -> (f64, f64) {
        let h = 0.5 * VIEW_EXTENT;
        (p.x - self.center.x + h, h - (p.y - self.center.y))
    }

    fn visible(&self, pts: &[Vec2]) -> bool {
        let h = 0.5 * VIEW_EXTENT;
        let (mut lo, mut hi) = (Vec2::new(f64::MAX, f64::MAX), Vec2::new(f64::MIN, f64::MIN));
        for p in pts {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        hi.x >= self.center.x - h && lo.x <= self.center.x + h && hi.y >= self.center.y - h && lo.y <= self.center.y + h
    }

    fn points(&self, pts: &[Vec2]) -> String {
        let mut s = String::new();
        for (i, p) in pts.iter().enumerate() {
            let (x, y) = self.map(*p);
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{x:.3},{y:.3}");
        }
        s
    }
}

/// Ego position at `frame`, falling back to the nearest valid frame.
fn ego_center(desc: &ScenarioDescription, frame: usize) -> Vec2 {
    let Ok(ego) = desc.sdc_track() else { return Vec2::ZERO };
    let nearest = ego
        .valid_frames()
        .min_by_key(|&f| f.abs_diff(frame))
        .unwrap_or(0);
    ego.position.get(nearest).map_or(Vec2::ZERO, |p| Vec2::from(*p))
}

/// One frame as a standalone SVG document, centered on the ego.
pub fn render_frame(desc: &ScenarioDescription, frame: usize) -> String {
    let view = View {
        center: ego_center(desc, frame),
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PIXELS}\" height=\"{PIXELS}\" viewBox=\"0 0 {VIEW_EXTENT} {VIEW_EXTENT}\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"#f4f4f0\"/>");

    for feature in desc.map_features.values() {
        if let MapFeature::Lane(lane) = feature {
            let ring: Vec<Vec2> = lane.polygon.iter().map(|p| Vec2::new(p[0], p[1])).collect();
            if ring.len() >= 3 && view.visible(&ring) {
                let _ = writeln!(svg, "<polygon points=\"{}\" fill=\"#bdbdbd\"/>", view.points(&ring));
            }
        }
    }
    for feature in desc.map_features.values() {
        if let MapFeature::LaneLine(line) = feature {
            let pts: Vec<Vec2> = line.polyline.iter().map(|p| Vec2::new(p[0], p[1])).collect();
            if pts.len() < 2 || !view.visible(&pts) {
                continue;
            }
            let style = match line.line_type {
                LineType::Broken => "stroke=\"#ffffff\" stroke-width=\"0.15\" stroke-dasharray=\"3 3\"",
                LineType::Solid => "stroke=\"#f2c200\" stroke-width=\"0.2\"",
                LineType::RoadEdge => "stroke=\"#333333\" stroke-width=\"0.3\"",
            };
            let _ = writeln!(svg, "<polyline points=\"{}\" fill=\"none\" {style}/>", view.points(&pts));
        }
    }
    for (id, track) in &desc.tracks {
        if frame >= track.len() || !track.valid[frame] {
            continue;
        }
        let p = track.position[frame];
        let obb = Obb::new(Vec2::new(p[0], p[1]), track.heading[frame], track.length, track.width);
        let corners = obb.corners();
        if !view.visible(&corners) {
            continue;
        }
        let is_ego = *id == desc.metadata.sdc_id;
        let (fill, extra) = if is_ego {
            ("#d62728", " stroke=\"#000000\" stroke-width=\"0.3\"")
        } else {
            (object_color(track.object_type), "")
        };
        let _ = writeln!(
            svg,
            "<polygon points=\"{}\" fill=\"{fill}\"{extra}><title>{}</title></polygon>",
            view.points(&corners),
            xml_escape(id)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"1\" y=\"4\" font-size=\"3\" font-family=\"monospace\">{} t={:.1}s</text>",
        xml_escape(&desc.scenario_id),
        frame as f64 * desc.metadata.dt
    );
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Every frame of the episode, in order.
pub fn render_episode(desc: &ScenarioDescription) -> Vec<String> {
    (0..desc.metadata.episode_length).map(|f| render_frame(desc, f)).collect()
}
