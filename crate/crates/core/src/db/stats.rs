use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{ObjectType, ScenarioMetadata};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Per-database summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub scenarios: usize,
    /// Ego moving distance in meters.
    pub track_length: MeanStd,
    pub vehicles: MeanStd,
    pub pedestrians: MeanStd,
    pub intersection_ratio: f64,
    pub construction_ratio: f64,
}

/// A scene counts as an intersection scene when the generator recorded an
/// intersection block or, for logged data, when it has a traffic light.
pub fn has_intersection(meta: &ScenarioMetadata) -> bool {
    match meta.intersection_count {
        Some(c) => c > 0,
        None => meta.light_count > 0,
    }
}

pub fn compute_stats<'a, I: IntoIterator<Item = &'a ScenarioMetadata>>(metas: I) -> Result<StatsTable> {
    let metas: Vec<&ScenarioMetadata> = metas.into_iter().collect();
    if metas.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let n = metas.len() as f64;
    let column = |f: &dyn Fn(&ScenarioMetadata) -> f64| MeanStd::of(&metas.iter().map(|m| f(m)).collect::<Vec<_>>());
    Ok(StatsTable {
        scenarios: metas.len(),
        track_length: column(&|m| m.ego_moving_distance()),
        vehicles: column(&|m| m.count_of(ObjectType::Vehicle) as f64),
        pedestrians: column(&|m| m.count_of(ObjectType::Pedestrian) as f64),
        intersection_ratio: metas.iter().filter(|m| has_intersection(m)).count() as f64 / n,
        construction_ratio: metas.iter().filter(|m| m.has_road_objects()).count() as f64 / n,
    })
}

impl fmt::Display for StatsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>10}  {:>18}  {:>18}  {:>18}  {:>12}  {:>12}",
            "scenarios", "track length (m)", "vehicles", "pedestrians", "intersection", "construction"
        )?;
        write!(
            f,
            "{:>10}  {:>18}  {:>18}  {:>18}  {:>12.2}  {:>12.2}",
            self.scenarios,
            self.track_length.to_string(),
            self.vehicles.to_string(),
            self.pedestrians.to_string(),
            self.intersection_ratio,
            self.construction_ratio
        )
    }
}
