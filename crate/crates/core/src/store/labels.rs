//! Operator-labeled samples used for retraining.
//!
//! Stored as checksummed JSON lines in a single append-only file. A sample is
//! keyed by its source (usually a history record id): labeling the same source
//! again with the same label is a no-op, with a different label it replaces the
//! earlier one. Replacements are appended; the latest line per source wins on
//! reload.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{decode_line, encode_line, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub source_id: String,
    pub label: String,
    /// Raw (unnormalized) features.
    pub features: Vec<f64>,
    #[serde(default)]
    pub labeled_at_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelOutcome {
    Added,
    Unchanged,
    Relabeled,
}

#[derive(Debug)]
pub struct LabelStore {
    path: PathBuf,
    samples: Vec<LabeledSample>,
    by_source: HashMap<String, usize>,
    file: File,
}

impl LabelStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut samples = Vec::new();
        let mut by_source = HashMap::new();
        let mut offset = 0usize;
        while offset < bytes.len() {
            let end = bytes[offset..].iter().position(|&b| b == b'\n').map(|p| offset + p);
            let sample = end
                .and_then(|end| decode_line(&bytes[offset..end]))
                .and_then(|json| serde_json::from_slice::<LabeledSample>(json).ok());
            match (end, sample) {
                (Some(end), Some(sample)) => {
                    upsert(&mut samples, &mut by_source, sample);
                    offset = end + 1;
                }
                (None, _) => break,
                (Some(_), None) => {
                    return Err(StoreError::Corrupt(format!(
                        "label log {} is damaged at byte {offset}",
                        path.display()
                    )))
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if offset < bytes.len() {
            // torn final line
            file.set_len(offset as u64)?;
            file.sync_all()?;
        }
        Ok(Self { path, samples, by_source, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Records a label. `classes` is the set of names the label must belong to.
    pub fn add(
        &mut self,
        sample: LabeledSample,
        classes: &[String],
    ) -> Result<LabelOutcome, StoreError> {
        if !classes.iter().any(|c| c == &sample.label) {
            return Err(StoreError::UnknownLabel(sample.label));
        }
        if sample.features.is_empty() || sample.features.iter().any(|f| !f.is_finite()) {
            return Err(StoreError::Invalid("labeled features must be non-empty and finite".into()));
        }
        let outcome = match self.by_source.get(&sample.source_id) {
            Some(&i) if self.samples[i].label == sample.label => return Ok(LabelOutcome::Unchanged),
            Some(_) => LabelOutcome::Relabeled,
            None => LabelOutcome::Added,
        };
        let json = serde_json::to_vec(&sample).map_err(|e| StoreError::Serialize(e.to_string()))?;
        self.file.write_all(&encode_line(&json))?;
        self.file.sync_data()?;
        upsert(&mut self.samples, &mut self.by_source, sample);
        Ok(outcome)
    }

    /// Current samples in first-labeled order.
    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn get(&self, source_id: &str) -> Option<&LabeledSample> {
        self.by_source.get(source_id).map(|&i| &self.samples[i])
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            *out.entry(s.label.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn upsert(
    samples: &mut Vec<LabeledSample>,
    by_source: &mut HashMap<String, usize>,
    sample: LabeledSample,
) {
    match by_source.get(&sample.source_id) {
        Some(&i) => samples[i] = sample,
        None => {
            by_source.insert(sample.source_id.clone(), samples.len());
            samples.push(sample);
        }
    }
}
