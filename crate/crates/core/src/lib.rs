//! Scenario database engine and closed-loop 2D driving simulator.

pub mod bridge;
pub mod curriculum;
pub mod db;
pub mod error;
pub mod geom;
pub mod map;
pub mod metrics;
pub mod pg;
pub mod render;
pub mod scenario;
pub mod sensing;
pub mod sim;

pub use error::{Error, Result};
