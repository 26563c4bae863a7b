//! Management service: polls targets, classifies interface state, keeps
//! history and labels, trains models and serves the HTTP API.

pub mod api;
pub mod config;
pub mod engine;
pub mod server;

pub use config::{ClassConfig, ConfigError, ServiceConfig, UNIDENTIFIED};
pub use engine::{
    Engine, Health, LiveState, PipelineInput, ServiceError, ServiceEvent, Shared, StreamState, TrainOverrides,
    TrainingState, TrainingStatus,
};
pub use server::{start, start_with_clock, ServiceHandle, StartError};
