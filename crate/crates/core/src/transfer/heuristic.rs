use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::loopnest::KernelClassId;

use super::model::{ModelDescriptor, ModelError};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeuristicScore {
    pub target: String,
    pub candidate: String,
    pub score: f64,
    pub per_class_terms: BTreeMap<KernelClassId, f64>,
    pub shared_classes: usize,
}

/// `Σ_c P_c² · √|W_Tc|` over classes present in both models, where `P_c` is
/// the target's untuned-time share of class `c` and `|W_Tc|` the
/// candidate's number of unique class-`c` kernels.
pub fn heuristic_score(
    target: &ModelDescriptor,
    candidate: &ModelDescriptor,
) -> Result<HeuristicScore, ModelError> {
    let summary = target.class_summary()?;
    let counts = candidate.class_counts();
    let mut per_class_terms = BTreeMap::new();
    let mut score = 0.0;
    for (class, s) in &summary {
        if let Some(&w) = counts.get(class) {
            if w == 0 {
                continue;
            }
            let term = s.proportion * s.proportion * (w as f64).sqrt();
            score += term;
            per_class_terms.insert(class.clone(), term);
        }
    }
    Ok(HeuristicScore {
        target: target.name.clone(),
        candidate: candidate.name.clone(),
        score,
        shared_classes: per_class_terms.len(),
        per_class_terms,
    })
}

fn rank(a: &HeuristicScore, b: &HeuristicScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.shared_classes.cmp(&a.shared_classes))
        .then(a.candidate.cmp(&b.candidate))
}

/// Candidates from `library` (excluding the target itself) ordered by score,
/// then by shared-class count, then by name; truncated to `top_k`.
pub fn select_tuning_model(
    target: &ModelDescriptor,
    library: &[ModelDescriptor],
    top_k: usize,
) -> Result<Vec<HeuristicScore>, ModelError> {
    let mut scores = library
        .iter()
        .filter(|m| m.name != target.name)
        .map(|m| heuristic_score(target, m))
        .collect::<Result<Vec<_>, _>>()?;
    scores.sort_by(rank);
    scores.truncate(top_k);
    Ok(scores)
}
