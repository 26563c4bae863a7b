//! Deterministic counter traces for one synthetic interface.
//!
//! A trace file is JSON Lines, one `CounterSnapshot` per line, in the same
//! format the feature pipeline reads. Generation metadata lives next to it in
//! `<trace>.meta.json` so the trace itself stays a plain snapshot stream.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nss_core::features::{read_snapshots_jsonl, write_snapshots_jsonl, CounterSnapshot, FeatureError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scenario::{CounterModel, Scenario, ScenarioError, ScenarioKind};

pub const GENERATOR_VERSION: &str = "nss-lab/1";

/// Timestamp of the first snapshot of a generated trace.
pub const TRACE_ORIGIN_MS: u64 = 1_700_000_000_000;
pub const TRACE_TARGET: &str = "synth";
pub const TRACE_IF_INDEX: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub generator_version: String,
    pub poll_interval_s: u64,
    pub duration_s: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: Option<TraceMeta>,
    pub snapshots: Vec<CounterSnapshot>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("poll interval must be between 1 and the scenario duration, got {0} s")]
    Interval(u64),
    #[error("timestamps of stream {target}/{if_index} do not increase at line {line}")]
    Order { target: String, if_index: u32, line: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Meta { path: PathBuf, source: serde_json::Error },
}

/// Samples `scenario` every `poll_interval_s` seconds of simulated time.
///
/// Produces `duration_s / poll_interval_s` snapshots (rounded down), the first
/// at time zero with all counters at zero. Rates are redrawn per interval.
pub fn generate_trace(scenario: &Scenario, poll_interval_s: u64) -> Result<Trace, TraceError> {
    scenario.validate()?;
    if poll_interval_s == 0 || poll_interval_s > scenario.duration_s {
        return Err(TraceError::Interval(poll_interval_s));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let boot_ticks: u32 = rng.random_range(0..10_000_000);
    let mut model = CounterModel::new();
    let count = scenario.duration_s / poll_interval_s;
    let mut snapshots = Vec::with_capacity(count as usize);
    for k in 0..count {
        let elapsed_s = k * poll_interval_s;
        if k > 0 {
            let step_start = (elapsed_s - poll_interval_s) as f64;
            let inc = CounterModel::draw_step(scenario, step_start, poll_interval_s as f64, &mut rng);
            model.add(&inc);
        }
        snapshots.push(CounterSnapshot {
            target: TRACE_TARGET.to_string(),
            if_index: TRACE_IF_INDEX,
            ts_ms: TRACE_ORIGIN_MS + elapsed_s * 1000,
            uptime_ticks: boot_ticks.wrapping_add((elapsed_s * 100) as u32),
            counters: model.values().into_iter().map(|(n, v)| (n.to_string(), v)).collect(),
        });
    }
    Ok(Trace {
        meta: Some(TraceMeta {
            scenario: scenario.kind,
            seed: scenario.seed,
            generator_version: GENERATOR_VERSION.to_string(),
            poll_interval_s,
            duration_s: scenario.duration_s,
        }),
        snapshots,
    })
}

/// The same trace twice: once as generated, once with every counter shifted so
/// it passes 2^32 between the middle snapshot and the one before it. Rates
/// derived from the two are identical.
pub fn wrap_twins(scenario: &Scenario, poll_interval_s: u64) -> Result<(Trace, Trace), TraceError> {
    let plain = generate_trace(scenario, poll_interval_s)?;
    let mid = &plain.snapshots[plain.snapshots.len() / 2];
    let offsets: BTreeMap<String, u32> =
        mid.counters.iter().map(|(n, &v)| (n.clone(), 0u32.wrapping_sub(v))).collect();
    let mut wrapped = plain.clone();
    wrapped.offset_counters(&offsets);
    Ok((plain, wrapped))
}

/// Scenario behind the shipped wrap-twin fixtures.
pub fn wrap_twin_scenario() -> (Scenario, u64) {
    (Scenario::preset(ScenarioKind::Congestion, 120, 2024), 5)
}

/// Directory holding the shipped fixture traces.
pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TraceError + '_ {
    move |source| TraceError::Io { path: path.to_path_buf(), source }
}

impl Trace {
    pub fn from_snapshots(snapshots: Vec<CounterSnapshot>) -> Self {
        Self { meta: None, snapshots }
    }

    /// Adds a per-counter offset modulo 2^32 to every snapshot.
    pub fn offset_counters(&mut self, offsets: &BTreeMap<String, u32>) {
        for s in &mut self.snapshots {
            for (name, v) in s.counters.iter_mut() {
                if let Some(off) = offsets.get(name) {
                    *v = v.wrapping_add(*off);
                }
            }
        }
    }

    /// Whether any counter decreases between consecutive snapshots of a stream
    /// without the device having restarted.
    pub fn has_wrap(&self) -> bool {
        let mut last: BTreeMap<(&str, u32), &CounterSnapshot> = BTreeMap::new();
        for s in &self.snapshots {
            if let Some(prev) = last.insert((&s.target, s.if_index), s) {
                if s.uptime_ticks >= prev.uptime_ticks
                    && s.counters.iter().any(|(n, v)| prev.counters.get(n).is_some_and(|p| v < p))
                {
                    return true;
                }
            }
        }
        false
    }

    /// Checks that timestamps strictly increase within every stream.
    pub fn validate(&self) -> Result<(), TraceError> {
        let mut last: BTreeMap<(&str, u32), u64> = BTreeMap::new();
        for (i, s) in self.snapshots.iter().enumerate() {
            if let Some(prev) = last.insert((&s.target, s.if_index), s.ts_ms) {
                if s.ts_ms <= prev {
                    return Err(TraceError::Order {
                        target: s.target.clone(),
                        if_index: s.if_index,
                        line: i + 1,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_snapshots_jsonl(&mut out, &self.snapshots).expect("writing to memory");
        out
    }

    /// Writes the trace and, if present, its metadata sidecar.
    pub fn write(&self, path: &Path) -> Result<(), TraceError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_jsonl()).and_then(|_| w.flush()).map_err(io_err(path))?;
        if let Some(meta) = &self.meta {
            let mp = meta_path(path);
            let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
            std::fs::write(&mp, json + "\n").map_err(io_err(&mp))?;
        }
        Ok(())
    }

    /// Reads a trace; the metadata sidecar is optional.
    pub fn read(path: &Path) -> Result<Self, TraceError> {
        let file = File::open(path).map_err(io_err(path))?;
        let snapshots = read_snapshots_jsonl(BufReader::new(file))?;
        let mp = meta_path(path);
        let meta = match std::fs::read(&mp) {
            Ok(bytes) => Some(
                serde_json::from_slice(&bytes).map_err(|source| TraceError::Meta { path: mp, source })?,
            ),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(TraceError::Io { path: mp, source: e }),
        };
        let trace = Self { meta, snapshots };
        trace.validate()?;
        Ok(trace)
    }
}
