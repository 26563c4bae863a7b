use super::{ClassDecision, ClassifierError, FeatureVector, MemoryEntry, PotentialModel, StateDecision};

/// Recognition with reorganization: classifies `stream` in order and absorbs each
/// identified vector into its class bookkeeping (`S_p += K_p(x)`, `c_p += 1`).
///
/// Every vector is appended to the recognized-vector memory; unidentified ones
/// are remembered without touching `S`/`c`. When the memory exceeds its cap the
/// oldest non-training entries are evicted first. Eviction only forgets the
/// vector; the class bookkeeping it contributed to is kept.
pub fn recognize_online(
    model: &PotentialModel,
    stream: &[FeatureVector],
) -> Result<(Vec<StateDecision>, PotentialModel), ClassifierError> {
    if !model.has_positive_weight() {
        return Err(ClassifierError::Untrained);
    }
    let mut model = model.clone();
    let mut decisions = Vec::with_capacity(stream.len());
    for x in stream {
        let decision = model.classify(x)?;
        let class = decision.label.class_id();
        if let ClassDecision::Class(label) = &decision.label {
            let k = decision.potentials[label.id];
            let (s, c) = model.stage2_mut();
            s[label.id] += k;
            c[label.id] += 1;
        }
        model.memory_mut().push(MemoryEntry { vector: x.clone(), class, training: false });
        evict(&mut model);
        decisions.push(decision);
    }
    Ok((decisions, model))
}

fn evict(model: &mut PotentialModel) {
    let cap = model.memory_cap();
    let memory = model.memory_mut();
    let mut excess = memory.len().saturating_sub(cap);
    if excess == 0 {
        return;
    }
    memory.retain(|e| {
        if excess > 0 && !e.training {
            excess -= 1;
            false
        } else {
            true
        }
    });
}
