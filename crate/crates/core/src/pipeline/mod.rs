//! Staged build of a concept bank and its retrieval reports, persisted in a
//! model store directory.

pub mod config;
pub mod fixture;
pub mod stages;
pub mod store;

pub use config::{NegativeSource, Paths, PipelineConfig, Seeds};
pub use stages::{stage_hash, Pipeline, Stage, StageReport};
pub use store::{ModelStore, StageRecord};
pub use fixture::{fixture_config, generate_fixture, FixtureLayout, FixtureSpec, PlantedImage};
