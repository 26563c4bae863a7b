//! Labeled training sets: scenario traces pushed through the feature
//! pipeline, and a two-blob Gaussian set for classifier checks.

use std::collections::BTreeMap;

use nss_core::classifier::{ClassLabel, FeatureVector, TrainingSample};
use nss_core::features::{default_feature_order, CursorEvent, FeatureError, NormParams, StreamCursor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scenario::{Scenario, ScenarioKind};
use crate::trace::{generate_trace, TraceError};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("need at least 2 distinct labels, got {0}")]
    TooFewLabels(usize),
    #[error("label id {id} is used with two names: '{a}' and '{b}'")]
    ConflictingLabel { id: usize, a: String, b: String },
    #[error("every feature is constant across the dataset")]
    Degenerate,
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<TrainingSample>,
    /// Unnormalized feature rows, parallel to `samples`.
    pub raw: Vec<Vec<f64>>,
    pub norm: NormParams,
    /// Distinct labels ordered by id.
    pub classes: Vec<ClassLabel>,
}

/// Generates every scenario's trace, fits one normalizer over the union of
/// their feature rows and tags each normalized row with its scenario's label.
///
/// Each trace of `n` snapshots contributes `n - 1` samples. Sample order
/// follows the input order of the scenarios.
pub fn labeled_dataset(
    scenarios: &[(Scenario, ClassLabel)],
    poll_interval_s: u64,
) -> Result<LabeledDataset, DatasetError> {
    let mut classes: BTreeMap<usize, ClassLabel> = BTreeMap::new();
    for (_, label) in scenarios {
        if let Some(prev) = classes.insert(label.id, label.clone()) {
            if prev.name != label.name {
                return Err(DatasetError::ConflictingLabel { id: label.id, a: prev.name, b: label.name.clone() });
            }
        }
    }
    if classes.len() < 2 {
        return Err(DatasetError::TooFewLabels(classes.len()));
    }

    let mut raw = Vec::new();
    let mut tags = Vec::new();
    for (scenario, label) in scenarios {
        let trace = generate_trace(scenario, poll_interval_s)?;
        let mut cursor = StreamCursor::new();
        for (k, snap) in trace.snapshots.into_iter().enumerate() {
            if let CursorEvent::Rates(r) = cursor.push(snap)? {
                raw.push(r.raw_features()?);
                tags.push((label.clone(), format!("{}:{}:{k}", scenario.kind, scenario.seed)));
            }
        }
    }

    let fit = NormParams::fit_rows(default_feature_order(), &raw)?;
    if fit.degenerate.iter().all(|d| *d) {
        return Err(DatasetError::Degenerate);
    }
    let samples = raw
        .iter()
        .zip(tags)
        .map(|(row, (label, source))| {
            let mut s = TrainingSample::new(fit.params.normalize_row(row)?, label);
            s.source_id = Some(source);
            Ok(s)
        })
        .collect::<Result<Vec<_>, FeatureError>>()?;
    Ok(LabeledDataset { samples, raw, norm: fit.params, classes: classes.into_values().collect() })
}

/// The four preset states as labels 0..=3, each long enough to yield
/// `samples_per_class` samples at `poll_interval_s`. Seeds are `seed`,
/// `seed + 1`, ...
pub fn desk_scenarios(samples_per_class: u64, poll_interval_s: u64, seed: u64) -> Vec<(Scenario, ClassLabel)> {
    ScenarioKind::PRESETS
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let duration = (samples_per_class + 1) * poll_interval_s;
            (Scenario::preset(kind, duration, seed + i as u64), ClassLabel::new(i, kind.label()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFixture {
    pub classes: Vec<ClassLabel>,
    pub train: Vec<TrainingSample>,
    pub test: Vec<TrainingSample>,
}

pub const GAUSSIAN_CENTERS: [[f64; 2]; 2] = [[0.0, 0.0], [6.0, 0.0]];

/// Two unit-variance 2-D blobs six units apart: 200 training points and 100
/// held-out points, classes alternating.
pub fn gaussian_fixture(seed: u64) -> GaussianFixture {
    let classes = vec![ClassLabel::new(0, "A"), ClassLabel::new(1, "B")];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<TrainingSample> {
        (0..n)
            .map(|i| {
                let c = i % 2;
                let v = GAUSSIAN_CENTERS[c]
                    .iter()
                    .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                    .collect();
                TrainingSample::new(FeatureVector::new(v).expect("finite"), classes[c].clone())
            })
            .collect()
    };
    let train = draw(200);
    let test = draw(100);
    GaussianFixture { classes, train, test }
}
