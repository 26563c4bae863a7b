//! Named network states and the counter model that realizes them.
//!
//! Every kind has a rate envelope. Each time the model advances it draws a
//! fresh multiplier in `[1 - NOISE, 1 + NOISE]` per rate, so consecutive polls
//! differ while staying inside the envelope of their kind.

use std::fmt;
use std::str::FromStr;

use nss_core::features::{
    IN_DISCARDS, IN_ERRORS, IN_NUCAST_PKTS, IN_OCTETS, IN_UCAST_PKTS, OUT_DISCARDS, OUT_ERRORS,
    OUT_OCTETS,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Relative half-width of the per-step rate noise.
pub const NOISE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Normal,
    Congestion,
    ErrorBurst,
    BroadcastStorm,
    Custom,
}

impl ScenarioKind {
    /// The four preset states, in cycling order.
    pub const PRESETS: [ScenarioKind; 4] =
        [Self::Normal, Self::Congestion, Self::ErrorBurst, Self::BroadcastStorm];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Congestion => "congestion",
            Self::ErrorBurst => "error-burst",
            Self::BroadcastStorm => "broadcast-storm",
            Self::Custom => "custom",
        }
    }

    /// Class name used when the state is a training label.
    pub fn label(self) -> &'static str {
        match self {
            Self::Normal => "Normal",
            Self::Congestion => "Congestion",
            Self::ErrorBurst => "ErrorBurst",
            Self::BroadcastStorm => "BroadcastStorm",
            Self::Custom => "Custom",
        }
    }

    /// Preset rates; `None` for `Custom`.
    pub fn preset(self) -> Option<RateParams> {
        let normal = RateParams {
            in_octets_per_s: 1.25e6,
            out_octets_per_s: 1.0e6,
            packets_per_s: 5_000.0,
            error_prob: 1e-4,
            discard_prob_start: 1e-4,
            discard_prob_end: 1e-4,
            broadcast_fraction: 0.02,
        };
        Some(match self {
            Self::Normal => normal,
            Self::Congestion => RateParams {
                in_octets_per_s: 8.0e6,
                out_octets_per_s: 6.5e6,
                packets_per_s: 15_000.0,
                error_prob: 1e-4,
                discard_prob_start: 0.01,
                discard_prob_end: 0.05,
                ..normal
            },
            Self::ErrorBurst => RateParams { error_prob: 0.15, ..normal },
            Self::BroadcastStorm => RateParams {
                in_octets_per_s: 2.0e6,
                packets_per_s: 20_000.0,
                broadcast_fraction: 0.8,
                ..normal
            },
            Self::Custom => return None,
        })
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match norm.as_str() {
            "normal" => Self::Normal,
            "congestion" => Self::Congestion,
            "error-burst" | "errorburst" => Self::ErrorBurst,
            "broadcast-storm" | "broadcaststorm" => Self::BroadcastStorm,
            "custom" => Self::Custom,
            _ => return Err(ScenarioError::UnknownKind(s.to_string())),
        })
    }
}

/// Mean rates of a scenario. Probabilities are per inbound packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub in_octets_per_s: f64,
    pub out_octets_per_s: f64,
    /// Inbound packets per second, unicast plus non-unicast.
    pub packets_per_s: f64,
    pub error_prob: f64,
    /// Discard probability at the start of the scenario; it moves linearly to
    /// `discard_prob_end` over the scenario's duration.
    pub discard_prob_start: f64,
    pub discard_prob_end: f64,
    pub broadcast_fraction: f64,
}

impl RateParams {
    fn validate(&self) -> Result<(), ScenarioError> {
        let all = [
            ("in_octets_per_s", self.in_octets_per_s),
            ("out_octets_per_s", self.out_octets_per_s),
            ("packets_per_s", self.packets_per_s),
            ("error_prob", self.error_prob),
            ("discard_prob_start", self.discard_prob_start),
            ("discard_prob_end", self.discard_prob_end),
            ("broadcast_fraction", self.broadcast_fraction),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ScenarioError::Invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.broadcast_fraction > 1.0 {
            return Err(ScenarioError::Invalid("broadcast_fraction must be <= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("unknown scenario kind '{0}'")]
    UnknownKind(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub duration_s: u64,
    pub seed: u64,
    pub params: RateParams,
}

impl Scenario {
    /// A preset kind. Panics for `Custom`, which needs explicit parameters.
    pub fn preset(kind: ScenarioKind, duration_s: u64, seed: u64) -> Self {
        let params = kind.preset().expect("custom scenarios need explicit params");
        Self { kind, duration_s, seed, params }
    }

    pub fn custom(duration_s: u64, seed: u64, params: RateParams) -> Self {
        Self { kind: ScenarioKind::Custom, duration_s, seed, params }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_s < 1 {
            return Err(ScenarioError::Invalid("duration_s must be >= 1".into()));
        }
        self.params.validate()
    }

    /// Discard probability at `elapsed_s` into the scenario.
    pub fn discard_prob(&self, elapsed_s: f64) -> f64 {
        let p = &self.params;
        let t = (elapsed_s / self.duration_s as f64).clamp(0.0, 1.0);
        p.discard_prob_start + (p.discard_prob_end - p.discard_prob_start) * t
    }
}

/// Order of the cumulative totals inside [`CounterModel`].
const ORDER: [&str; 8] = [
    IN_OCTETS,
    OUT_OCTETS,
    IN_ERRORS,
    OUT_ERRORS,
    IN_DISCARDS,
    OUT_DISCARDS,
    IN_NUCAST_PKTS,
    IN_UCAST_PKTS,
];

/// Cumulative interface counters driven by scenario rates.
///
/// Totals are kept as unbounded floats and truncated on read, so rounding
/// never accumulates; reported values wrap modulo 2^32 like real Counter32s.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterModel {
    totals: [f64; 8],
    offsets: [u32; 8],
}

impl Default for CounterModel {
    fn default() -> Self {
        Self::new()
    }
}

impl CounterModel {
    pub fn new() -> Self {
        Self { totals: [0.0; 8], offsets: [0; 8] }
    }

    /// Counters start at `offsets` (by counter name) instead of zero.
    pub fn with_offsets(offsets: &[(&str, u32)]) -> Self {
        let mut m = Self::new();
        for &(name, v) in offsets {
            if let Some(i) = ORDER.iter().position(|n| *n == name) {
                m.offsets[i] = v;
            }
        }
        m
    }

    /// Increments one step of `dt_s` seconds would add, with fresh noise.
    pub fn draw_step<R: Rng>(scenario: &Scenario, elapsed_s: f64, dt_s: f64, rng: &mut R) -> [f64; 8] {
        let p = &scenario.params;
        let mut noisy = |v: f64| v * rng.random_range(1.0 - NOISE..=1.0 + NOISE);
        let packets = noisy(p.packets_per_s) * dt_s;
        let broadcast = (noisy(p.broadcast_fraction)).min(1.0) * packets;
        let in_octets = noisy(p.in_octets_per_s) * dt_s;
        let out_octets = noisy(p.out_octets_per_s) * dt_s;
        let errors = noisy(p.error_prob) * packets;
        let discards = noisy(scenario.discard_prob(elapsed_s)) * packets;
        [
            in_octets,
            out_octets,
            errors * 0.7,
            errors * 0.3,
            discards * 0.5,
            discards * 0.5,
            broadcast,
            packets - broadcast,
        ]
    }

    pub fn add(&mut self, increments: &[f64; 8]) {
        for (t, d) in self.totals.iter_mut().zip(increments) {
            *t += d;
        }
    }

    /// Reported Counter32 values, optionally with a partial step added.
    pub fn values_with(&self, partial: Option<(&[f64; 8], f64)>) -> Vec<(&'static str, u32)> {
        ORDER
            .iter()
            .enumerate()
            .map(|(i, &name)| {
                let extra = partial.map_or(0.0, |(inc, frac)| inc[i] * frac);
                let total = (self.totals[i] + extra).floor() as u64;
                (name, self.offsets[i].wrapping_add((total % (1 << 32)) as u32))
            })
            .collect()
    }

    pub fn values(&self) -> Vec<(&'static str, u32)> {
        self.values_with(None)
    }
}
