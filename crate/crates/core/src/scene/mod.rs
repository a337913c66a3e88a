//! Scenario domain model, synthetic generation and file ingestion.

pub mod io;
pub mod motion;
pub mod synth;
mod types;

pub use io::{load_scenarios, save_scenarios, SCHEMA_VERSION};
pub use motion::{MotionProfile, PathSegment, Stop};
pub use synth::{generate_scenario, generate_synthetic, MapTemplate, SyntheticConfig, VoxelConfig};
pub use types::{
    AgentState, AgentTrack, AgentType, FutureState, MapElement, MapElementKind, Scenario,
    VoxelGrid,
};
