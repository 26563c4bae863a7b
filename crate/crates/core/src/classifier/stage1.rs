use std::collections::BTreeSet;

use super::kernel::sq_distance;
use super::model::best_competitor;
use super::{
    ClassLabel, ClassifierError, FeatureVector, KernelParams, MemoryEntry, PotentialModel,
    TrainParams, TrainingSample, UpdateVariant,
};

/// Result of a stage-one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Outcome {
    pub model: PotentialModel,
    /// Passes over the sequence, including the final clean pass when converged.
    pub passes: usize,
    pub converged: bool,
    /// Total weight reorganizations applied.
    pub updates: usize,
}

/// True when `x_r` fails to clear the margin for its true class:
/// `K(true, x_r) - max_{G != true} K(G, x_r) <= epsilon`.
pub fn stage1_needs_update(
    model: &PotentialModel,
    x_r: &FeatureVector,
    true_class: usize,
    epsilon: f64,
) -> Result<bool, ClassifierError> {
    if model.class_count() < 2 {
        return Err(ClassifierError::TooFewClasses(model.class_count()));
    }
    model.check_class(true_class)?;
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(ClassifierError::InvalidParam(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let potentials = model.potentials(x_r)?;
    let competitor = best_competitor(&potentials, true_class).expect("at least two classes");
    Ok(potentials[true_class] - potentials[competitor] <= epsilon)
}

/// Reorganizes weights after `x_r` (of class `true_class`) failed the margin.
///
/// The stored copy of `x_r` in the true class gains `delta` (inserted if absent,
/// matched by exact bit equality). Under variant B the strongest competing
/// class also loses `delta` on its positively weighted vector nearest to `x_r`,
/// floored at zero.
pub fn apply_stage1_update(
    model: &PotentialModel,
    x_r: &FeatureVector,
    true_class: usize,
    params: &TrainParams,
) -> Result<PotentialModel, ClassifierError> {
    params.validate()?;
    let mut out = model.clone();
    update_in_place(&mut out, x_r, true_class, params)?;
    Ok(out)
}

fn update_in_place(
    model: &mut PotentialModel,
    x_r: &FeatureVector,
    true_class: usize,
    params: &TrainParams,
) -> Result<(), ClassifierError> {
    model.check_class(true_class)?;
    model.check_vector(x_r)?;

    if params.update_variant == UpdateVariant::B {
        let potentials = model.potentials(x_r)?;
        if let Some(g) = best_competitor(&potentials, true_class) {
            let kernel = model.kernel();
            let mut nearest: Option<(usize, f64)> = None;
            for (i, wv) in model.weighted_vectors().iter().enumerate() {
                if wv.owner != g || wv.weight <= 0.0 {
                    continue;
                }
                let f = kernel.eval_sq(sq_distance(wv.vector.values(), x_r.values()));
                match nearest {
                    Some((_, best)) if f <= best => {}
                    _ => nearest = Some((i, f)),
                }
            }
            if let Some((i, _)) = nearest {
                let wv = &mut model.weighted_mut()[i];
                wv.weight = (wv.weight - params.delta).max(0.0);
            }
        }
    }

    let stored = model
        .weighted_vectors()
        .iter()
        .position(|wv| wv.owner == true_class && wv.vector.bit_eq(x_r));
    match stored {
        Some(i) => model.weighted_mut()[i].weight += params.delta,
        None => model.push_weighted(x_r.clone(), params.delta, true_class)?,
    }
    Ok(())
}

/// Stage-one training with the class set derived from the sample labels.
pub fn train_stage1(
    sequence: &[TrainingSample],
    params: &TrainParams,
    kernel: KernelParams,
) -> Result<Stage1Outcome, ClassifierError> {
    if sequence.is_empty() {
        return Err(ClassifierError::EmptySequence);
    }
    let mut by_id: Vec<Option<String>> = Vec::new();
    for s in sequence {
        let id = s.label.id;
        if by_id.len() <= id {
            by_id.resize(id + 1, None);
        }
        match &by_id[id] {
            Some(name) if *name != s.label.name => {
                return Err(ClassifierError::SparseClassIds(format!(
                    "class id {id} used with names '{name}' and '{}'",
                    s.label.name
                )));
            }
            Some(_) => {}
            None => by_id[id] = Some(s.label.name.clone()),
        }
    }
    let classes = by_id
        .into_iter()
        .enumerate()
        .map(|(id, name)| {
            name.map(|n| ClassLabel::new(id, n))
                .ok_or_else(|| ClassifierError::SparseClassIds(format!("no samples for class id {id}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if classes.len() < 2 {
        return Err(ClassifierError::TooFewClasses(classes.len()));
    }
    train_stage1_with_classes(classes, sequence, params, kernel)
}

/// Stage-one training over an explicit class set.
///
/// Sweeps the sequence in order, reorganizing weights for every vector that
/// fails the margin, until a pass needs no reorganization or `max_passes` is
/// spent. The returned model carries the training sequence as memory with each
/// vector assigned to its labelled class, zeroed `S_p` and member counts `c_p`.
pub fn train_stage1_with_classes(
    classes: Vec<ClassLabel>,
    sequence: &[TrainingSample],
    params: &TrainParams,
    kernel: KernelParams,
) -> Result<Stage1Outcome, ClassifierError> {
    params.validate()?;
    let first = sequence.first().ok_or(ClassifierError::EmptySequence)?;
    let dim = first.vector.dim();
    let mut model = PotentialModel::new(classes, dim, kernel, params.epsilon)?;
    let mut distinct = BTreeSet::new();
    for s in sequence {
        model.check_vector(&s.vector)?;
        model.check_class(s.label.id)?;
        distinct.insert(s.label.id);
    }
    if distinct.len() < 2 {
        return Err(ClassifierError::TooFewClasses(distinct.len()));
    }

    let mut passes = 0;
    let mut converged = false;
    let mut updates = 0;
    while passes < params.max_passes {
        passes += 1;
        let mut pass_updates = 0;
        for s in sequence {
            if stage1_needs_update(&model, &s.vector, s.label.id, params.epsilon)? {
                update_in_place(&mut model, &s.vector, s.label.id, params)?;
                pass_updates += 1;
            }
        }
        updates += pass_updates;
        if pass_updates == 0 {
            converged = true;
            break;
        }
    }

    let (s_table, c_table) = model.stage2_mut();
    s_table.iter_mut().for_each(|s| *s = 0.0);
    c_table.iter_mut().for_each(|c| *c = 0);
    for s in sequence {
        c_table[s.label.id] += 1;
    }
    let memory = model.memory_mut();
    memory.clear();
    memory.extend(sequence.iter().map(|s| MemoryEntry {
        vector: s.vector.clone(),
        class: Some(s.label.id),
        training: true,
    }));

    Ok(Stage1Outcome { model, passes, converged, updates })
}
