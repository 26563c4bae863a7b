use super::{ClassifierError, FeatureVector, PotentialModel, TrainParams, TrainingSample};

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Outcome {
    pub model: PotentialModel,
    pub passes: usize,
    pub converged: bool,
    pub reassignments: usize,
}

/// Reassignment score of `x_j` towards every class, `None` where moving is not
/// an option (the current class and classes without members).
///
/// With `m_p = S_p / c_p` the mean potential of class `p` over its members, the
/// score for moving from `i` to `q` is the change in `q`'s mean when it adopts
/// `x_j` minus the drop in `i`'s mean when it releases it:
///
/// ```text
/// score(q) = (K_q(x_j) - m_q) / (c_q + 1) - (K_i(x_j) - m_i) / (c_i - 1)
/// ```
///
/// A class with a single member cannot release it; all scores are `None` then.
pub fn reassignment_scores(
    model: &PotentialModel,
    x_j: &FeatureVector,
    current: usize,
) -> Result<Vec<Option<f64>>, ClassifierError> {
    model.check_class(current)?;
    let k = model.potentials(x_j)?;
    let (s, c) = (model.stage2_s(), model.stage2_c());
    let mut out = vec![None; model.class_count()];
    if c[current] < 2 {
        return Ok(out);
    }
    let ci = c[current] as f64;
    let loss = (k[current] - s[current] / ci) / (ci - 1.0);
    for (q, slot) in out.iter_mut().enumerate() {
        if q == current || c[q] == 0 {
            continue;
        }
        let cq = c[q] as f64;
        let gain = (k[q] - s[q] / cq) / (cq + 1.0);
        *slot = Some(gain - loss);
    }
    Ok(out)
}

/// Class that `x_j` should move to, if any: the best-scoring class (lowest id on
/// ties) provided its score is strictly positive.
pub fn stage2_needs_reassign(
    model: &PotentialModel,
    x_j: &FeatureVector,
    current: usize,
) -> Result<Option<usize>, ClassifierError> {
    let scores = reassignment_scores(model, x_j, current)?;
    let mut best: Option<(usize, f64)> = None;
    for (q, score) in scores.iter().enumerate() {
        if let Some(score) = *score {
            match best {
                Some((_, b)) if score <= b => {}
                _ => best = Some((q, score)),
            }
        }
    }
    Ok(best.filter(|&(_, score)| score > 0.0).map(|(q, _)| q))
}

/// Moves `x_j` from class `from` to `to`:
/// `S_to += K_to(x_j)`, `c_to += 1`, `S_from -= K_from(x_j)`, `c_from -= 1`.
///
/// The first memory entry equal to `x_j` and assigned to `from` is re-pointed
/// to `to`.
pub fn apply_stage2_update(
    model: &PotentialModel,
    x_j: &FeatureVector,
    from: usize,
    to: usize,
) -> Result<PotentialModel, ClassifierError> {
    let mut out = model.clone();
    let entry = out
        .memory()
        .iter()
        .position(|e| e.class == Some(from) && e.vector.bit_eq(x_j));
    move_in_place(&mut out, x_j, from, to)?;
    if let Some(i) = entry {
        out.memory_mut()[i].class = Some(to);
    }
    Ok(out)
}

fn move_in_place(
    model: &mut PotentialModel,
    x_j: &FeatureVector,
    from: usize,
    to: usize,
) -> Result<(), ClassifierError> {
    model.check_class(from)?;
    model.check_class(to)?;
    if from == to {
        return Err(ClassifierError::SameClass(from));
    }
    if model.stage2_c()[from] == 0 {
        return Err(ClassifierError::ClassUnderflow(from));
    }
    let k_to = model.total_potential(to, x_j)?;
    let k_from = model.total_potential(from, x_j)?;
    let (s, c) = model.stage2_mut();
    s[to] += k_to;
    c[to] += 1;
    s[from] -= k_from;
    c[from] -= 1;
    Ok(())
}

/// Stage-two training over the model's training memory.
///
/// `S_p` is first rebuilt as the sum of `K_p` over the vectors currently
/// assigned to `p`. The sequence is then swept repeatedly, moving every vector
/// for which [`stage2_needs_reassign`] names a target, until a pass moves
/// nothing or `max_passes` is spent. Member counts are conserved throughout.
pub fn train_stage2(
    model: &PotentialModel,
    sequence: &[TrainingSample],
    params: &TrainParams,
) -> Result<Stage2Outcome, ClassifierError> {
    params.validate()?;
    let training: Vec<usize> = model
        .memory()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.training)
        .map(|(i, _)| i)
        .collect();
    if training.len() != sequence.len() {
        return Err(ClassifierError::SequenceMismatch(format!(
            "model remembers {} training vectors, sequence has {}",
            training.len(),
            sequence.len()
        )));
    }
    for (pos, (&idx, sample)) in training.iter().zip(sequence).enumerate() {
        if !model.memory()[idx].vector.bit_eq(&sample.vector) {
            return Err(ClassifierError::SequenceMismatch(format!(
                "vector at position {pos} differs"
            )));
        }
    }

    let mut model = model.clone();
    let mut rebuilt = vec![0.0; model.class_count()];
    for entry in model.memory() {
        if let Some(p) = entry.class {
            rebuilt[p] += model.total_potential(p, &entry.vector)?;
        }
    }
    model.stage2_mut().0.copy_from_slice(&rebuilt);

    let mut passes = 0;
    let mut converged = false;
    let mut reassignments = 0;
    while passes < params.max_passes {
        passes += 1;
        let mut moved = 0;
        for &idx in &training {
            let entry = &model.memory()[idx];
            let Some(current) = entry.class else { continue };
            let vector = entry.vector.clone();
            if let Some(to) = stage2_needs_reassign(&model, &vector, current)? {
                move_in_place(&mut model, &vector, current, to)?;
                model.memory_mut()[idx].class = Some(to);
                moved += 1;
            }
        }
        reassignments += moved;
        if moved == 0 {
            converged = true;
            break;
        }
    }
    Ok(Stage2Outcome { model, passes, converged, reassignments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{ClassLabel, KernelParams};

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn labels() -> Vec<ClassLabel> {
        vec![ClassLabel::new(0, "A"), ClassLabel::new(1, "B")]
    }

    /// K_A(x) = 0.1 and K_B(x) = 0.4 at x = (0, 0).
    fn bookkeeping_model() -> PotentialModel {
        let mut m = PotentialModel::new(labels(), 2, KernelParams::default(), 0.0).unwrap();
        m.push_weighted(fv(&[0.0, 0.0]), 0.1, 0).unwrap();
        m.push_weighted(fv(&[0.0, 0.0]), 0.4, 1).unwrap();
        m.set_stage2(0, 1.0, 3).unwrap();
        m.set_stage2(1, 0.5, 2).unwrap();
        m
    }

    #[test]
    fn update_formulas() {
        let m = bookkeeping_model();
        let out = apply_stage2_update(&m, &fv(&[0.0, 0.0]), 0, 1).unwrap();
        assert!((out.stage2_s()[1] - 0.9).abs() < 1e-15);
        assert!((out.stage2_s()[0] - 0.9).abs() < 1e-15);
        assert_eq!(out.stage2_c(), &[2, 3]);
    }

    #[test]
    fn inverse_update_restores() {
        let m = bookkeeping_model();
        let x = fv(&[0.0, 0.0]);
        let there = apply_stage2_update(&m, &x, 0, 1).unwrap();
        let back = apply_stage2_update(&there, &x, 1, 0).unwrap();
        assert_eq!(back.stage2_c(), m.stage2_c());
        for (a, b) in back.stage2_s().iter().zip(m.stage2_s()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn update_errors() {
        let mut m = bookkeeping_model();
        let x = fv(&[0.0, 0.0]);
        assert_eq!(apply_stage2_update(&m, &x, 1, 1), Err(ClassifierError::SameClass(1)));
        m.set_stage2(0, 0.0, 0).unwrap();
        assert_eq!(apply_stage2_update(&m, &x, 0, 1), Err(ClassifierError::ClassUnderflow(0)));
    }

    #[test]
    fn sole_member_is_never_released() {
        let mut m = PotentialModel::new(labels(), 2, KernelParams::default(), 0.0).unwrap();
        m.push_weighted(fv(&[0.0, 0.0]), 1.0, 0).unwrap();
        m.push_weighted(fv(&[5.0, 5.0]), 1.0, 1).unwrap();
        m.set_stage2(0, 0.01, 1).unwrap();
        m.set_stage2(1, 2.0, 2).unwrap();
        assert_eq!(stage2_needs_reassign(&m, &fv(&[5.0, 5.0]), 0).unwrap(), None);
    }

    #[test]
    fn reassign_to_class_whose_prototype_it_sits_on() {
        // x_j currently in A, but sits on B's prototype while A is far away.
        let mut m = PotentialModel::new(labels(), 2, KernelParams::default(), 0.0).unwrap();
        m.push_weighted(fv(&[0.0, 0.0]), 1.0, 0).unwrap();
        m.push_weighted(fv(&[6.0, 6.0]), 1.0, 1).unwrap();
        // A: two members at its prototype (K_A = 1 each) plus x_j; B: two members.
        let x = fv(&[6.0, 6.0]);
        let k_a_x = 1.0 / 73.0;
        m.set_stage2(0, 2.0 + k_a_x, 3).unwrap();
        m.set_stage2(1, 2.0, 2).unwrap();
        // brute-force score: gain_B = (1 - 1)/3 = 0, loss_A = (k_a_x - S_A/3)/2 < 0
        let s_a = 2.0 + k_a_x;
        let expected = 0.0 - (k_a_x - s_a / 3.0) / 2.0;
        let scores = reassignment_scores(&m, &x, 0).unwrap();
        assert!((scores[1].unwrap() - expected).abs() < 1e-15);
        assert!(expected > 0.0);
        assert_eq!(stage2_needs_reassign(&m, &x, 0).unwrap(), Some(1));
    }

    #[test]
    fn deep_member_stays() {
        let mut m = PotentialModel::new(labels(), 2, KernelParams::default(), 0.0).unwrap();
        m.push_weighted(fv(&[0.0, 0.0]), 1.0, 0).unwrap();
        m.push_weighted(fv(&[8.0, 8.0]), 1.0, 1).unwrap();
        // three members of A all on the prototype, two of B on theirs
        m.set_stage2(0, 3.0, 3).unwrap();
        m.set_stage2(1, 2.0, 2).unwrap();
        let x = fv(&[0.0, 0.0]);
        let k_b = 1.0 / 129.0;
        let expected = (k_b - 1.0) / 3.0 - (1.0 - 1.0) / 2.0;
        let scores = reassignment_scores(&m, &x, 0).unwrap();
        assert!((scores[1].unwrap() - expected).abs() < 1e-15);
        assert!(expected < 0.0);
        assert_eq!(stage2_needs_reassign(&m, &x, 0).unwrap(), None);
    }
}
