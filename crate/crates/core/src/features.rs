//! Counter snapshots to normalized feature vectors.
//!
//! ```text
//! CounterSnapshot --counter_delta--> deltas --to_rates--> RateVector --normalize--> FeatureVector
//! ```
//!
//! Counters are SNMP Counter32 values, so deltas are taken modulo 2^32. A drop
//! in device uptime means the agent restarted and the pair yields a reset flag
//! instead of deltas.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::FeatureVector;

pub const IN_OCTETS: &str = "in_octets";
pub const OUT_OCTETS: &str = "out_octets";
pub const IN_ERRORS: &str = "in_errors";
pub const OUT_ERRORS: &str = "out_errors";
pub const IN_DISCARDS: &str = "in_discards";
pub const OUT_DISCARDS: &str = "out_discards";
pub const IN_NUCAST_PKTS: &str = "in_nucast_pkts";
pub const IN_UCAST_PKTS: &str = "in_ucast_pkts";

/// Interface counters polled per snapshot.
pub const COUNTER_NAMES: [&str; 8] = [
    IN_OCTETS,
    OUT_OCTETS,
    IN_ERRORS,
    OUT_ERRORS,
    IN_DISCARDS,
    OUT_DISCARDS,
    IN_NUCAST_PKTS,
    IN_UCAST_PKTS,
];

/// Feature order of the v1 feature set.
pub const FEATURE_NAMES: [&str; 6] = [
    "in_octets_rate",
    "out_octets_rate",
    "in_pkts_rate",
    "error_ratio",
    "discard_ratio",
    "broadcast_ratio",
];

/// Standard deviations below this are treated as a constant feature.
pub const DEGENERATE_STD: f64 = 1e-9;

const COUNTER_MODULUS: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("snapshots belong to different streams: {0}")]
    StreamMismatch(String),
    #[error("timestamp did not increase: previous {prev} ms, current {curr} ms")]
    NonIncreasingTimestamp { prev: u64, curr: u64 },
    #[error("interval must be positive, got {0} s")]
    InvalidInterval(f64),
    #[error("cannot fit a normalizer on zero samples")]
    EmptySamples,
    #[error("missing feature '{0}'")]
    MissingFeature(String),
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value for feature '{0}'")]
    NonFinite(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One poll result for one interface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub target: String,
    pub if_index: u32,
    /// Collector wall-clock at request send, milliseconds since the epoch.
    pub ts_ms: u64,
    /// Device sysUpTime in hundredths of a second.
    pub uptime_ticks: u32,
    pub counters: BTreeMap<String, u32>,
}

impl CounterSnapshot {
    pub fn counter(&self, name: &str) -> Option<u32> {
        self.counters.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterDeltas {
    pub interval_ms: u64,
    /// Per-counter increments, present only for counters in both snapshots.
    pub values: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeltaOutcome {
    Deltas(CounterDeltas),
    /// The device restarted between the two snapshots.
    Reset,
}

/// Per-counter increments between two snapshots of the same stream, modulo 2^32.
pub fn counter_delta(
    prev: &CounterSnapshot,
    curr: &CounterSnapshot,
) -> Result<DeltaOutcome, FeatureError> {
    if prev.target != curr.target || prev.if_index != curr.if_index {
        return Err(FeatureError::StreamMismatch(format!(
            "{}/{} vs {}/{}",
            prev.target, prev.if_index, curr.target, curr.if_index
        )));
    }
    if curr.ts_ms <= prev.ts_ms {
        return Err(FeatureError::NonIncreasingTimestamp { prev: prev.ts_ms, curr: curr.ts_ms });
    }
    if curr.uptime_ticks < prev.uptime_ticks {
        return Ok(DeltaOutcome::Reset);
    }
    let values = curr
        .counters
        .iter()
        .filter_map(|(name, &now)| {
            prev.counters.get(name).map(|&before| (name.clone(), wrapping_delta(before, now)))
        })
        .collect();
    Ok(DeltaOutcome::Deltas(CounterDeltas { interval_ms: curr.ts_ms - prev.ts_ms, values }))
}

/// Increment of a 32-bit counter that may have wrapped once.
pub fn wrapping_delta(prev: u32, curr: u32) -> u32 {
    ((u64::from(curr) + COUNTER_MODULUS - u64::from(prev)) % COUNTER_MODULUS) as u32
}

/// Per-second rates plus the derived ratios of one polling interval.
///
/// A ratio is `None` when one of the counters it needs was not reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateVector {
    pub interval_s: f64,
    /// Units per second keyed by counter name (octets/s or packets/s).
    pub rates: BTreeMap<String, f64>,
    pub error_ratio: Option<f64>,
    pub discard_ratio: Option<f64>,
    pub broadcast_ratio: Option<f64>,
}

impl RateVector {
    pub fn rate(&self, counter: &str) -> Option<f64> {
        self.rates.get(counter).copied()
    }

    /// Value of one named feature of the v1 set.
    pub fn feature(&self, name: &str) -> Option<f64> {
        match name {
            "in_octets_rate" => self.rate(IN_OCTETS),
            "out_octets_rate" => self.rate(OUT_OCTETS),
            "in_pkts_rate" => Some(self.rate(IN_UCAST_PKTS)? + self.rate(IN_NUCAST_PKTS)?),
            "error_ratio" => self.error_ratio,
            "discard_ratio" => self.discard_ratio,
            "broadcast_ratio" => self.broadcast_ratio,
            _ => None,
        }
    }

    /// Features in `order`, unnormalized.
    pub fn features(&self, order: &[String]) -> Result<Vec<f64>, FeatureError> {
        order
            .iter()
            .map(|name| self.feature(name).ok_or_else(|| FeatureError::MissingFeature(name.clone())))
            .collect()
    }

    /// Features in the default v1 order, unnormalized.
    pub fn raw_features(&self) -> Result<Vec<f64>, FeatureError> {
        self.features(&default_feature_order())
    }
}

pub fn default_feature_order() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Converts counter deltas over `interval_s` seconds into rates and ratios.
pub fn to_rates(deltas: &BTreeMap<String, u32>, interval_s: f64) -> Result<RateVector, FeatureError> {
    if !(interval_s.is_finite() && interval_s > 0.0) {
        return Err(FeatureError::InvalidInterval(interval_s));
    }
    let rates: BTreeMap<String, f64> =
        deltas.iter().map(|(k, &v)| (k.clone(), f64::from(v) / interval_s)).collect();
    let d = |name: &str| deltas.get(name).map(|&v| f64::from(v));
    let packets = match (d(IN_UCAST_PKTS), d(IN_NUCAST_PKTS)) {
        (Some(u), Some(n)) => Some(u + n),
        _ => None,
    };
    let error_ratio = match (d(IN_ERRORS), d(OUT_ERRORS), packets) {
        (Some(i), Some(o), Some(p)) => Some(ratio(i + o, p)),
        _ => None,
    };
    let discard_ratio = match (d(IN_DISCARDS), d(OUT_DISCARDS), packets) {
        (Some(i), Some(o), Some(p)) => Some(ratio(i + o, p)),
        _ => None,
    };
    let broadcast_ratio = match (d(IN_NUCAST_PKTS), packets) {
        (Some(n), Some(p)) => Some(ratio(n, p)),
        _ => None,
    };
    Ok(RateVector { interval_s, rates, error_ratio, discard_ratio, broadcast_ratio })
}

/// Z-score parameters, one entry per feature in `feature_order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub feature_order: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fitted parameters plus which features were constant over the samples.
#[derive(Debug, Clone, PartialEq)]
pub struct NormFit {
    pub params: NormParams,
    pub degenerate: Vec<bool>,
}

impl NormParams {
    pub fn dim(&self) -> usize {
        self.feature_order.len()
    }

    /// Population mean and std per column. Constant columns get `std = 1`.
    pub fn fit_rows(feature_order: Vec<String>, rows: &[Vec<f64>]) -> Result<NormFit, FeatureError> {
        if rows.is_empty() {
            return Err(FeatureError::EmptySamples);
        }
        let dim = feature_order.len();
        for row in rows {
            if row.len() != dim {
                return Err(FeatureError::DimensionMismatch { expected: dim, got: row.len() });
            }
            if let Some(i) = row.iter().position(|v| !v.is_finite()) {
                return Err(FeatureError::NonFinite(feature_order[i].clone()));
            }
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
        let mut degenerate = Vec::with_capacity(dim);
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                let flat = s < DEGENERATE_STD;
                degenerate.push(flat);
                if flat {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(NormFit { params: NormParams { feature_order, mean, std }, degenerate })
    }

    /// Normalizes one raw row given in `feature_order`.
    pub fn normalize_row(&self, row: &[f64]) -> Result<FeatureVector, FeatureError> {
        if row.len() != self.dim() {
            return Err(FeatureError::DimensionMismatch { expected: self.dim(), got: row.len() });
        }
        let values = row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect::<Vec<_>>();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(self.feature_order[i].clone()));
        }
        FeatureVector::new(values).map_err(|_| FeatureError::EmptySamples)
    }

    /// Maps a normalized vector back to feature units.
    pub fn denormalize(&self, v: &FeatureVector) -> Result<Vec<f64>, FeatureError> {
        if v.dim() != self.dim() {
            return Err(FeatureError::DimensionMismatch { expected: self.dim(), got: v.dim() });
        }
        Ok(v.values().iter().zip(self.mean.iter().zip(&self.std)).map(|(z, (m, s))| z * s + m).collect())
    }
}

/// Fits z-score parameters over the v1 features of `samples`.
pub fn fit_normalizer(samples: &[RateVector]) -> Result<NormParams, FeatureError> {
    let rows = samples.iter().map(RateVector::raw_features).collect::<Result<Vec<_>, _>>()?;
    Ok(NormParams::fit_rows(default_feature_order(), &rows)?.params)
}

/// `(value - mean) / std` per feature, emitted in `params.feature_order`.
pub fn normalize(rates: &RateVector, params: &NormParams) -> Result<FeatureVector, FeatureError> {
    params.normalize_row(&rates.features(&params.feature_order)?)
}

/// What feeding one snapshot into a [`StreamCursor`] produced.
#[derive(Debug, Clone, PartialEq)]
pub enum CursorEvent {
    /// First snapshot of the stream; nothing to pair with yet.
    First,
    /// The device restarted; the chain restarts from this snapshot.
    Reset,
    Rates(RateVector),
}

/// Pairs consecutive snapshots of one (target, interface) stream.
#[derive(Debug, Clone, Default)]
pub struct StreamCursor {
    prev: Option<CounterSnapshot>,
}

impl StreamCursor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last(&self) -> Option<&CounterSnapshot> {
        self.prev.as_ref()
    }

    /// Consumes the next snapshot. On error the cursor keeps its previous state.
    pub fn push(&mut self, snapshot: CounterSnapshot) -> Result<CursorEvent, FeatureError> {
        let Some(prev) = &self.prev else {
            self.prev = Some(snapshot);
            return Ok(CursorEvent::First);
        };
        let event = match counter_delta(prev, &snapshot)? {
            DeltaOutcome::Reset => CursorEvent::Reset,
            DeltaOutcome::Deltas(d) => {
                CursorEvent::Rates(to_rates(&d.values, d.interval_ms as f64 / 1000.0)?)
            }
        };
        self.prev = Some(snapshot);
        Ok(event)
    }
}

/// Reads a JSON Lines trace, one snapshot per line. Blank lines are skipped.
pub fn read_snapshots_jsonl<R: BufRead>(reader: R) -> Result<Vec<CounterSnapshot>, FeatureError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let snap = serde_json::from_str(&line)
            .map_err(|e| FeatureError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(snap);
    }
    Ok(out)
}

pub fn write_snapshots_jsonl<W: Write>(
    mut writer: W,
    snapshots: &[CounterSnapshot],
) -> Result<(), FeatureError> {
    for s in snapshots {
        let line = serde_json::to_string(s).map_err(std::io::Error::other)?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// Writes feature rows as CSV with `feature_order` as header.
pub fn write_feature_csv<W: Write>(
    writer: W,
    feature_order: &[String],
    rows: &[Vec<f64>],
) -> Result<(), FeatureError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(feature_order)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
