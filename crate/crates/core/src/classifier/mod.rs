//! Deterministic potential-function classifier.
//!
//! Every class is scored at a point `y` by its total potential
//! `K(q, y) = sum_j c_qj * f(x_j, y)` over the weighted vectors the class owns,
//! with `f(a, b) = 1 / (1 + alpha * |a - b|^2)`. The point goes to the class with
//! the largest potential unless the gap to the runner-up falls inside the
//! `epsilon` margin, in which case it is left unidentified for the operator.
//!
//! Training happens in two stages. Stage one grows per-vector weights
//! perceptron-style until every training vector clears the margin. Stage two
//! keeps per-class accumulated potentials `S_p` and member counts `c_p` and
//! moves training vectors between classes when that raises class cohesion.
//! The same bookkeeping absorbs recognized vectors during online operation.
//!
//! All operations are value-semantic: they take a model by reference and
//! return a new one.

mod kernel;
mod model;
mod online;
mod stage1;
mod stage2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kernel::{potential, KernelParams};
pub use model::{
    ClassDecision, MemoryEntry, PotentialModel, StateDecision, WeightedVector,
    DEFAULT_MEMORY_CAP, MODEL_SCHEMA_VERSION,
};
pub use online::recognize_online;
pub use stage1::{
    apply_stage1_update, stage1_needs_update, train_stage1, train_stage1_with_classes,
    Stage1Outcome,
};
pub use stage2::{
    apply_stage2_update, reassignment_scores, stage2_needs_reassign, train_stage2,
    Stage2Outcome,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature vector must be non-empty")]
    EmptyVector,
    #[error("non-finite value in feature vector or kernel evaluation")]
    NonFinite,
    #[error("unknown class id {0}")]
    UnknownClass(usize),
    #[error("model needs at least 2 classes, has {0}")]
    TooFewClasses(usize),
    #[error("model has no positively weighted vectors")]
    Untrained,
    #[error("training sequence is empty")]
    EmptySequence,
    #[error("class ids must be dense 0..K-1: {0}")]
    SparseClassIds(String),
    #[error("source and destination class are the same ({0})")]
    SameClass(usize),
    #[error("class {0} has no members to release")]
    ClassUnderflow(usize),
    #[error("training sequence does not match the model's training memory: {0}")]
    SequenceMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// A normalized point in feature space. Never empty, never NaN or infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ClassifierError> {
        if values.is_empty() {
            return Err(ClassifierError::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ClassifierError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    /// Bitwise equality, used to find the stored copy of a training vector.
    pub fn bit_eq(&self, other: &FeatureVector) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = ClassifierError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassLabel {
    pub id: usize,
    pub name: String,
}

impl ClassLabel {
    pub fn new(id: usize, name: impl Into<String>) -> Self {
        Self { id, name: name.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub vector: FeatureVector,
    pub label: ClassLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

impl TrainingSample {
    pub fn new(vector: FeatureVector, label: ClassLabel) -> Self {
        Self { vector, label, source_id: None }
    }
}

/// How stage-one reorganization treats the competing class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpdateVariant {
    /// Only the true class gains weight.
    #[default]
    A,
    /// The true class gains and the strongest competitor's nearest vector loses.
    B,
}

impl std::str::FromStr for UpdateVariant {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" | "A" => Ok(Self::A),
            "b" | "B" => Ok(Self::B),
            other => Err(ClassifierError::InvalidParam(format!(
                "update variant must be 'a' or 'b', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub delta: f64,
    pub max_passes: usize,
    pub update_variant: UpdateVariant,
    pub epsilon: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { delta: 1.0, max_passes: 20, update_variant: UpdateVariant::A, epsilon: 0.0 }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(ClassifierError::InvalidParam(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if self.max_passes == 0 {
            return Err(ClassifierError::InvalidParam("max_passes must be at least 1".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(ClassifierError::InvalidParam(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}
