use serde::{Deserialize, Serialize};

use super::kernel::sq_distance;
use super::{ClassLabel, ClassifierError, FeatureVector, KernelParams};
use crate::features::NormParams;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Default bound on the recognized-vector memory kept for online reorganization.
pub const DEFAULT_MEMORY_CAP: usize = 10_000;

/// A stored vector with its weight factor inside the class that owns it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedVector {
    pub vector: FeatureVector,
    pub weight: f64,
    pub owner: usize,
}

/// One entry of the recognized-vector sequence together with its current class.
///
/// Training entries are the replayed training sequence; the rest were absorbed
/// during online recognition (`class` is `None` for unidentified vectors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub vector: FeatureVector,
    pub class: Option<usize>,
    pub training: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassDecision {
    Class(ClassLabel),
    Unidentified,
}

impl ClassDecision {
    pub fn class_id(&self) -> Option<usize> {
        match self {
            Self::Class(c) => Some(c.id),
            Self::Unidentified => None,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Class(c) => &c.name,
            Self::Unidentified => "Unidentified",
        }
    }

    pub fn is_unidentified(&self) -> bool {
        matches!(self, Self::Unidentified)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDecision {
    pub label: ClassDecision,
    /// Total potential of every class, indexed by class id.
    pub potentials: Vec<f64>,
    /// Best potential minus runner-up.
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_at_ms: Option<u64>,
}

impl StateDecision {
    pub fn at(mut self, ts_ms: u64) -> Self {
        self.decided_at_ms = Some(ts_ms);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialModel {
    classes: Vec<ClassLabel>,
    dim: usize,
    kernel: KernelParams,
    epsilon: f64,
    weighted: Vec<WeightedVector>,
    stage2_s: Vec<f64>,
    stage2_c: Vec<u64>,
    memory: Vec<MemoryEntry>,
    memory_cap: usize,
    #[serde(default)]
    norm: Option<NormParams>,
    schema_version: u32,
}

impl PotentialModel {
    /// An empty model over `classes`. Class ids must be exactly `0..K`.
    pub fn new(
        classes: Vec<ClassLabel>,
        dim: usize,
        kernel: KernelParams,
        epsilon: f64,
    ) -> Result<Self, ClassifierError> {
        check_classes(&classes)?;
        if dim == 0 {
            return Err(ClassifierError::EmptyVector);
        }
        KernelParams::new(kernel.alpha)?;
        check_epsilon(epsilon)?;
        let k = classes.len();
        Ok(Self {
            classes,
            dim,
            kernel,
            epsilon,
            weighted: Vec::new(),
            stage2_s: vec![0.0; k],
            stage2_c: vec![0; k],
            memory: Vec::new(),
            memory_cap: DEFAULT_MEMORY_CAP,
            norm: None,
            schema_version: MODEL_SCHEMA_VERSION,
        })
    }

    /// Re-checks every structural invariant, e.g. after deserializing.
    pub fn validate(&self) -> Result<(), ClassifierError> {
        check_classes(&self.classes)?;
        KernelParams::new(self.kernel.alpha)?;
        check_epsilon(self.epsilon)?;
        let k = self.classes.len();
        if self.stage2_s.len() != k || self.stage2_c.len() != k {
            return Err(ClassifierError::InvalidParam(
                "stage-2 tables do not match the class count".into(),
            ));
        }
        if self.stage2_s.iter().any(|s| !s.is_finite()) {
            return Err(ClassifierError::NonFinite);
        }
        for wv in &self.weighted {
            self.check_vector(&wv.vector)?;
            self.check_class(wv.owner)?;
            if !(wv.weight.is_finite() && wv.weight >= 0.0) {
                return Err(ClassifierError::InvalidParam(format!(
                    "weight {} is negative or non-finite",
                    wv.weight
                )));
            }
        }
        for entry in &self.memory {
            self.check_vector(&entry.vector)?;
            if let Some(c) = entry.class {
                self.check_class(c)?;
            }
        }
        if let Some(norm) = &self.norm {
            if norm.dim() != self.dim {
                return Err(ClassifierError::DimensionMismatch { expected: self.dim, got: norm.dim() });
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class_by_name(&self, name: &str) -> Option<&ClassLabel> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kernel(&self) -> KernelParams {
        self.kernel
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn weighted_vectors(&self) -> &[WeightedVector] {
        &self.weighted
    }

    pub fn stage2_s(&self) -> &[f64] {
        &self.stage2_s
    }

    pub fn stage2_c(&self) -> &[u64] {
        &self.stage2_c
    }

    pub fn memory(&self) -> &[MemoryEntry] {
        &self.memory
    }

    pub fn memory_cap(&self) -> usize {
        self.memory_cap
    }

    pub fn norm_params(&self) -> Option<&NormParams> {
        self.norm.as_ref()
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self, ClassifierError> {
        check_epsilon(epsilon)?;
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn with_norm_params(mut self, norm: NormParams) -> Result<Self, ClassifierError> {
        if norm.dim() != self.dim {
            return Err(ClassifierError::DimensionMismatch { expected: self.dim, got: norm.dim() });
        }
        self.norm = Some(norm);
        Ok(self)
    }

    pub fn with_memory_cap(mut self, cap: usize) -> Self {
        self.memory_cap = cap;
        self
    }

    /// Adds a weighted vector to `owner`'s set.
    pub fn push_weighted(
        &mut self,
        vector: FeatureVector,
        weight: f64,
        owner: usize,
    ) -> Result<(), ClassifierError> {
        self.check_vector(&vector)?;
        self.check_class(owner)?;
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(ClassifierError::InvalidParam(format!("weight must be >= 0, got {weight}")));
        }
        self.weighted.push(WeightedVector { vector, weight, owner });
        Ok(())
    }

    /// Overwrites the stage-2 scalars of one class. Used to seed fixtures.
    pub fn set_stage2(&mut self, class: usize, s: f64, c: u64) -> Result<(), ClassifierError> {
        self.check_class(class)?;
        if !s.is_finite() {
            return Err(ClassifierError::NonFinite);
        }
        self.stage2_s[class] = s;
        self.stage2_c[class] = c;
        Ok(())
    }

    /// Copy of the model with every weight multiplied by `factor`.
    pub fn scaled_weights(&self, factor: f64) -> Result<Self, ClassifierError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(ClassifierError::InvalidParam(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        let mut out = self.clone();
        for wv in &mut out.weighted {
            wv.weight *= factor;
        }
        Ok(out)
    }

    /// Copy of the model without zero-weight vectors.
    pub fn pruned(&self) -> Self {
        let mut out = self.clone();
        out.weighted.retain(|wv| wv.weight > 0.0);
        out
    }

    pub fn has_positive_weight(&self) -> bool {
        self.weighted.iter().any(|wv| wv.weight > 0.0)
    }

    /// Total potential `K(class, y)`.
    pub fn total_potential(&self, class: usize, y: &FeatureVector) -> Result<f64, ClassifierError> {
        self.check_class(class)?;
        self.check_vector(y)?;
        Ok(self
            .weighted
            .iter()
            .filter(|wv| wv.owner == class)
            .map(|wv| wv.weight * self.kernel.eval_sq(sq_distance(wv.vector.values(), y.values())))
            .sum())
    }

    /// Total potentials of all classes, indexed by class id.
    pub fn potentials(&self, y: &FeatureVector) -> Result<Vec<f64>, ClassifierError> {
        self.check_vector(y)?;
        let mut out = vec![0.0; self.classes.len()];
        for wv in &self.weighted {
            out[wv.owner] +=
                wv.weight * self.kernel.eval_sq(sq_distance(wv.vector.values(), y.values()));
        }
        Ok(out)
    }

    /// Assigns `y` to the class of largest total potential. Exact ties go to the
    /// lowest class id; a margin inside a positive `epsilon` is `Unidentified`.
    pub fn classify(&self, y: &FeatureVector) -> Result<StateDecision, ClassifierError> {
        if self.classes.len() < 2 {
            return Err(ClassifierError::TooFewClasses(self.classes.len()));
        }
        if !self.has_positive_weight() {
            return Err(ClassifierError::Untrained);
        }
        let potentials = self.potentials(y)?;
        let (best, margin) = best_and_margin(&potentials);
        let label = if self.epsilon > 0.0 && margin <= self.epsilon {
            ClassDecision::Unidentified
        } else {
            ClassDecision::Class(self.classes[best].clone())
        };
        Ok(StateDecision { label, potentials, margin, decided_at_ms: None })
    }

    pub(crate) fn check_class(&self, class: usize) -> Result<(), ClassifierError> {
        if class < self.classes.len() {
            Ok(())
        } else {
            Err(ClassifierError::UnknownClass(class))
        }
    }

    pub(crate) fn check_vector(&self, v: &FeatureVector) -> Result<(), ClassifierError> {
        if v.dim() != self.dim {
            return Err(ClassifierError::DimensionMismatch { expected: self.dim, got: v.dim() });
        }
        Ok(())
    }

    pub(crate) fn weighted_mut(&mut self) -> &mut Vec<WeightedVector> {
        &mut self.weighted
    }

    pub(crate) fn stage2_mut(&mut self) -> (&mut Vec<f64>, &mut Vec<u64>) {
        (&mut self.stage2_s, &mut self.stage2_c)
    }

    pub(crate) fn memory_mut(&mut self) -> &mut Vec<MemoryEntry> {
        &mut self.memory
    }
}

/// Index of the largest potential (lowest index on ties) and the gap to the
/// runner-up.
pub(crate) fn best_and_margin(potentials: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &p) in potentials.iter().enumerate().skip(1) {
        if p > potentials[best] {
            best = i;
        }
    }
    let runner_up = potentials
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    (best, potentials[best] - runner_up)
}

/// Strongest class other than `exclude`; lowest id on ties.
pub(crate) fn best_competitor(potentials: &[f64], exclude: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &p) in potentials.iter().enumerate() {
        if i == exclude {
            continue;
        }
        match best {
            Some(b) if p <= potentials[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

fn check_classes(classes: &[ClassLabel]) -> Result<(), ClassifierError> {
    if classes.len() < 2 {
        return Err(ClassifierError::TooFewClasses(classes.len()));
    }
    for (i, c) in classes.iter().enumerate() {
        if c.id != i {
            return Err(ClassifierError::SparseClassIds(format!(
                "class '{}' at position {i} has id {}",
                c.name, c.id
            )));
        }
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<(), ClassifierError> {
    if epsilon.is_finite() && epsilon >= 0.0 {
        Ok(())
    } else {
        Err(ClassifierError::InvalidParam(format!("epsilon must be >= 0, got {epsilon}")))
    }
}
