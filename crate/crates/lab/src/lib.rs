//! Desk-scale test rig: scenario generators, a synthetic SNMP v2c agent and
//! labeled fixtures.

pub mod agent;
pub mod dataset;
pub mod scenario;
pub mod trace;

pub use agent::{run_agent, AgentConfig, AgentHandle, AgentSource};
pub use dataset::{desk_scenarios, gaussian_fixture, labeled_dataset, DatasetError, GaussianFixture, LabeledDataset};
pub use scenario::{CounterModel, RateParams, Scenario, ScenarioError, ScenarioKind, NOISE};
pub use trace::{fixtures_dir, generate_trace, wrap_twin_scenario, wrap_twins, Trace, TraceError, TraceMeta, GENERATOR_VERSION};
