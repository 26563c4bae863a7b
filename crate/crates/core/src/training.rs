//! One complete training run: normalizer fit, stage one, stage two and the
//! resulting artifact. Shared by the service and the offline CLI so both
//! produce the same report for the same samples.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    train_stage1_with_classes, train_stage2, ClassLabel, ClassifierError, FeatureVector,
    KernelParams, StateDecision, TrainParams, TrainingSample,
};
use crate::features::{FeatureError, NormParams};
use crate::store::{encode_artifact, fingerprint_samples, ModelArtifact, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingOptions {
    #[serde(flatten)]
    pub params: TrainParams,
    pub alpha: f64,
    /// Fit a z-score normalizer over the samples and embed it in the model.
    pub normalize: bool,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self { params: TrainParams::default(), alpha: 1.0, normalize: true }
    }
}

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("need >= 2 classes among the labeled samples, found {0}")]
    InsufficientClasses(usize),
    #[error("label '{0}' is not in the class set")]
    UnknownLabel(String),
    #[error("sample {index} has {got} features, expected {expected}")]
    Dimension { index: usize, expected: usize, got: usize },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Report {
    pub passes: usize,
    pub converged: bool,
    pub updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub passes: usize,
    pub converged: bool,
    pub reassignments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub model_id: String,
    pub samples: usize,
    pub classes: Vec<String>,
    pub class_counts: BTreeMap<String, usize>,
    pub stage1: Stage1Report,
    pub stage2: Stage2Report,
    /// Share of training samples the final model assigns to their own label.
    pub training_accuracy: f64,
    pub unidentified: usize,
    pub fingerprint: String,
    pub options: TrainingOptions,
}

/// A labeled row of raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub features: Vec<f64>,
    pub label: String,
}

/// Trains a model on `samples` over the class set `classes` (ids follow its
/// order). Classes without samples stay in the model with zero potential.
pub fn train_model(
    samples: &[RawSample],
    classes: &[String],
    feature_order: Vec<String>,
    options: &TrainingOptions,
    created_at_ms: u64,
) -> Result<(ModelArtifact, TrainingReport), TrainingError> {
    let labels: Vec<ClassLabel> =
        classes.iter().enumerate().map(|(i, n)| ClassLabel::new(i, n.clone())).collect();
    let dim = feature_order.len();
    let mut present = BTreeSet::new();
    for (index, s) in samples.iter().enumerate() {
        if s.features.len() != dim {
            return Err(TrainingError::Dimension { index, expected: dim, got: s.features.len() });
        }
        let id = classes
            .iter()
            .position(|c| *c == s.label)
            .ok_or_else(|| TrainingError::UnknownLabel(s.label.clone()))?;
        present.insert(id);
    }
    if present.len() < 2 {
        return Err(TrainingError::InsufficientClasses(present.len()));
    }

    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();
    let norm = if options.normalize {
        Some(NormParams::fit_rows(feature_order.clone(), &rows)?.params)
    } else {
        None
    };
    let sequence = samples
        .iter()
        .map(|s| {
            let vector = match &norm {
                Some(n) => n.normalize_row(&s.features)?,
                None => FeatureVector::new(s.features.clone())?,
            };
            let id = classes.iter().position(|c| *c == s.label).expect("checked above");
            Ok(TrainingSample::new(vector, labels[id].clone()))
        })
        .collect::<Result<Vec<_>, TrainingError>>()?;

    let kernel = KernelParams::new(options.alpha)?;
    let s1 = train_stage1_with_classes(labels, &sequence, &options.params, kernel)?;
    let s2 = train_stage2(&s1.model, &sequence, &options.params)?;
    let mut model = s2.model;
    if let Some(n) = norm {
        model = model.with_norm_params(n)?;
    }

    let mut correct = 0;
    let mut unidentified = 0;
    for s in &sequence {
        let d = model.classify(&s.vector)?;
        if d.label.is_unidentified() {
            unidentified += 1;
        } else if d.label.class_id() == Some(s.label.id) {
            correct += 1;
        }
    }

    let fingerprint = fingerprint_samples(&sequence);
    let artifact = ModelArtifact::new(model, feature_order, fingerprint.clone(), created_at_ms)?;
    let (model_id, _) = encode_artifact(&artifact)?;
    let mut class_counts = BTreeMap::new();
    for s in samples {
        *class_counts.entry(s.label.clone()).or_insert(0) += 1;
    }
    let report = TrainingReport {
        model_id,
        samples: samples.len(),
        classes: classes.to_vec(),
        class_counts,
        stage1: Stage1Report { passes: s1.passes, converged: s1.converged, updates: s1.updates },
        stage2: Stage2Report {
            passes: s2.passes,
            converged: s2.converged,
            reassignments: s2.reassignments,
        },
        training_accuracy: correct as f64 / samples.len() as f64,
        unidentified,
        fingerprint,
        options: *options,
    };
    Ok((artifact, report))
}

/// Classifies a raw feature row, normalizing it first when the model embeds a
/// normalizer. Returns the vector actually classified alongside the decision.
pub fn classify_raw(
    artifact: &ModelArtifact,
    row: &[f64],
) -> Result<(FeatureVector, StateDecision), TrainingError> {
    let expected = artifact.feature_order.len();
    if row.len() != expected {
        return Err(TrainingError::Dimension { index: 0, expected, got: row.len() });
    }
    let vector = match artifact.model.norm_params() {
        Some(n) => n.normalize_row(row)?,
        None => FeatureVector::new(row.to_vec())?,
    };
    let decision = artifact.model.classify(&vector)?;
    Ok((vector, decision))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(label: &str, cx: f64, n: usize) -> Vec<RawSample> {
        (0..n)
            .map(|i| RawSample {
                features: vec![cx + (i % 3) as f64 * 0.1, 100.0 + (i % 2) as f64],
                label: label.into(),
            })
            .collect()
    }

    fn classes() -> Vec<String> {
        vec!["a".into(), "b".into(), "c".into()]
    }

    fn order() -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    #[test]
    fn trains_and_reports() {
        let mut samples = blob("a", 0.0, 10);
        samples.extend(blob("b", 5.0, 10));
        let (artifact, report) =
            train_model(&samples, &classes(), order(), &TrainingOptions::default(), 7).unwrap();
        assert!(report.stage1.converged);
        assert_eq!(report.training_accuracy, 1.0);
        assert_eq!(report.samples, 20);
        assert_eq!(report.class_counts["a"], 10);
        assert_eq!(artifact.model.class_count(), 3);
        assert_eq!(encode_artifact(&artifact).unwrap().0, report.model_id);
        let (_, d) = classify_raw(&artifact, &[5.1, 100.0]).unwrap();
        assert_eq!(d.label.name(), "b");
        assert!(matches!(classify_raw(&artifact, &[1.0]), Err(TrainingError::Dimension { .. })));
    }

    #[test]
    fn validation() {
        let one = blob("a", 0.0, 5);
        assert!(matches!(
            train_model(&one, &classes(), order(), &TrainingOptions::default(), 0),
            Err(TrainingError::InsufficientClasses(1))
        ));
        let mut bad = blob("a", 0.0, 2);
        bad.push(RawSample { features: vec![1.0, 2.0], label: "zzz".into() });
        assert!(matches!(
            train_model(&bad, &classes(), order(), &TrainingOptions::default(), 0),
            Err(TrainingError::UnknownLabel(_))
        ));
    }

    #[test]
    fn without_normalizer_vectors_are_used_as_given() {
        let mut samples = blob("a", 0.0, 4);
        samples.extend(blob("c", 3.0, 4));
        let opts = TrainingOptions { normalize: false, ..Default::default() };
        let (artifact, _) = train_model(&samples, &classes(), order(), &opts, 0).unwrap();
        assert!(artifact.model.norm_params().is_none());
        let (v, _) = classify_raw(&artifact, &[3.0, 100.0]).unwrap();
        assert_eq!(v.values(), &[3.0, 100.0]);
    }

    #[test]
    fn deterministic() {
        let mut samples = blob("a", 0.0, 6);
        samples.extend(blob("b", 2.0, 6));
        let a = train_model(&samples, &classes(), order(), &TrainingOptions::default(), 1).unwrap();
        let b = train_model(&samples, &classes(), order(), &TrainingOptions::default(), 1).unwrap();
        assert_eq!(encode_artifact(&a.0).unwrap(), encode_artifact(&b.0).unwrap());
        assert_eq!(a.1, b.1);
    }
}
