//! Trained model artifacts.
//!
//! File layout: one header line followed by the canonical JSON payload.
//!
//! ```text
//! nss-model 1 sha256:<hex of payload>
//! {"created_at_ms":...,"feature_order":[...],"fingerprint":"...","model":{...},"schema_version":1}
//! ```
//!
//! A store directory holds `<model_id>.model` files plus an `ACTIVE` pointer
//! file. The model id is derived from the payload hash, so saving the same
//! artifact twice yields the same id and the same bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{canonical::to_canonical_bytes, write_atomic, StoreError};
use crate::classifier::{ClassLabel, PotentialModel, TrainingSample, MODEL_SCHEMA_VERSION};

const MAGIC: &str = "nss-model";
const FILE_EXT: &str = "model";
const ACTIVE_FILE: &str = "ACTIVE";

/// Self-contained trained model: everything needed to classify.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema_version: u32,
    pub created_at_ms: u64,
    /// Hash of the training samples the model was built from.
    pub fingerprint: String,
    pub feature_order: Vec<String>,
    pub model: PotentialModel,
}

impl ModelArtifact {
    /// Wraps a model, dropping zero-weight vectors.
    pub fn new(
        model: PotentialModel,
        feature_order: Vec<String>,
        fingerprint: String,
        created_at_ms: u64,
    ) -> Result<Self, StoreError> {
        let artifact = Self {
            schema_version: MODEL_SCHEMA_VERSION,
            created_at_ms,
            fingerprint,
            feature_order,
            model: model.pruned(),
        };
        artifact.validate()?;
        Ok(artifact)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        self.model.validate().map_err(|e| StoreError::Invalid(e.to_string()))?;
        if self.feature_order.len() != self.model.dim() {
            return Err(StoreError::Invalid(format!(
                "feature order names {} features, model has dimension {}",
                self.feature_order.len(),
                self.model.dim()
            )));
        }
        if let Some(norm) = self.model.norm_params() {
            if norm.feature_order != self.feature_order {
                return Err(StoreError::Invalid("normalizer feature order differs".into()));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> &[ClassLabel] {
        self.model.classes()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub id: String,
    pub created_at_ms: u64,
    pub fingerprint: String,
    pub classes: Vec<String>,
    pub weighted_vectors: usize,
}

impl ModelSummary {
    pub fn of(id: &str, artifact: &ModelArtifact) -> Self {
        Self {
            id: id.to_string(),
            created_at_ms: artifact.created_at_ms,
            fingerprint: artifact.fingerprint.clone(),
            classes: artifact.classes().iter().map(|c| c.name.clone()).collect(),
            weighted_vectors: artifact.model.weighted_vectors().len(),
        }
    }
}

/// Stable hash of a training set (vectors by bit pattern, labels by id and name).
pub fn fingerprint_samples(samples: &[TrainingSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update((s.vector.dim() as u64).to_le_bytes());
        for v in s.vector.values() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update((s.label.id as u64).to_le_bytes());
        h.update((s.label.name.len() as u64).to_le_bytes());
        h.update(s.label.name.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Serializes an artifact into the model file format. Returns `(id, bytes)`.
pub fn encode_artifact(artifact: &ModelArtifact) -> Result<(String, Vec<u8>), StoreError> {
    let mut artifact = artifact.clone();
    artifact.model = artifact.model.pruned();
    artifact.validate()?;
    let payload = to_canonical_bytes(&artifact)?;
    let digest = hex::encode(Sha256::digest(&payload));
    let mut out = format!("{MAGIC} {} sha256:{digest}\n", artifact.schema_version).into_bytes();
    out.extend_from_slice(&payload);
    Ok((digest[..16].to_string(), out))
}

/// Parses and verifies a model file. Returns `(id, artifact)`.
pub fn decode_artifact(bytes: &[u8]) -> Result<(String, ModelArtifact), StoreError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| StoreError::Corrupt("missing model header".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| StoreError::Corrupt("model header is not UTF-8".into()))?;
    let payload = &bytes[newline + 1..];
    let mut parts = header.split(' ');
    let (Some(MAGIC), Some(version), Some(sum), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(StoreError::Corrupt(format!("bad model header '{header}'")));
    };
    let version: u32 =
        version.parse().map_err(|_| StoreError::Corrupt(format!("bad schema version '{version}'")))?;
    let expected = sum
        .strip_prefix("sha256:")
        .ok_or_else(|| StoreError::Corrupt(format!("bad checksum field '{sum}'")))?;
    let actual = hex::encode(Sha256::digest(payload));
    if actual != expected {
        return Err(StoreError::Checksum(format!("model payload hash {actual} != {expected}")));
    }
    check_schema(version)?;

    #[derive(Deserialize)]
    struct Versioned {
        schema_version: u32,
    }
    let probe: Versioned =
        serde_json::from_slice(payload).map_err(|e| StoreError::Corrupt(e.to_string()))?;
    check_schema(probe.schema_version)?;
    let artifact: ModelArtifact =
        serde_json::from_slice(payload).map_err(|e| StoreError::Corrupt(e.to_string()))?;
    check_schema(artifact.model.schema_version())?;
    artifact.validate()?;
    Ok((actual[..16].to_string(), artifact))
}

fn check_schema(found: u32) -> Result<(), StoreError> {
    if found > MODEL_SCHEMA_VERSION {
        Err(StoreError::SchemaTooNew { found, supported: MODEL_SCHEMA_VERSION })
    } else {
        Ok(())
    }
}

/// Directory of model files plus the active-model pointer.
#[derive(Debug, Clone)]
pub struct ModelStore {
    dir: PathBuf,
}

impl ModelStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn path_of(&self, id: &str) -> Result<PathBuf, StoreError> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(StoreError::NotFound(format!("model '{id}'")));
        }
        Ok(self.dir.join(format!("{id}.{FILE_EXT}")))
    }

    pub fn save(&self, artifact: &ModelArtifact) -> Result<String, StoreError> {
        let (id, bytes) = encode_artifact(artifact)?;
        write_atomic(&self.path_of(&id)?, &bytes)?;
        Ok(id)
    }

    pub fn load(&self, id: &str) -> Result<ModelArtifact, StoreError> {
        let bytes = self.raw(id)?;
        let (found, artifact) = decode_artifact(&bytes)?;
        if found != id {
            return Err(StoreError::Checksum(format!("model file {id} holds model {found}")));
        }
        Ok(artifact)
    }

    /// Raw file bytes of a stored model.
    pub fn raw(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.path_of(id)?;
        match fs::read(&path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(StoreError::NotFound(format!("model '{id}'")))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Verifies a model file and stores it. Returns its id.
    pub fn import(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let (_, artifact) = decode_artifact(bytes)?;
        self.save(&artifact)
    }

    pub fn export(&self, id: &str, to: &Path) -> Result<(), StoreError> {
        let bytes = self.raw(id)?;
        decode_artifact(&bytes)?;
        write_atomic(to, &bytes)
    }

    pub fn ids(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some(FILE_EXT) {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Summaries of all readable models, newest first.
    pub fn list(&self) -> Result<Vec<ModelSummary>, StoreError> {
        let mut out = Vec::new();
        for id in self.ids()? {
            if let Ok(artifact) = self.load(&id) {
                out.push(ModelSummary::of(&id, &artifact));
            }
        }
        out.sort_by(|a, b| b.created_at_ms.cmp(&a.created_at_ms).then(a.id.cmp(&b.id)));
        Ok(out)
    }

    pub fn set_active(&self, id: &str) -> Result<(), StoreError> {
        self.load(id)?;
        write_atomic(&self.dir.join(ACTIVE_FILE), format!("{id}\n").as_bytes())
    }

    pub fn active_id(&self) -> Result<Option<String>, StoreError> {
        match fs::read_to_string(self.dir.join(ACTIVE_FILE)) {
            Ok(s) => Ok(Some(s.trim().to_string()).filter(|s| !s.is_empty())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn active(&self) -> Result<Option<(String, ModelArtifact)>, StoreError> {
        match self.active_id()? {
            Some(id) => {
                let artifact = self.load(&id)?;
                Ok(Some((id, artifact)))
            }
            None => Ok(None),
        }
    }
}
