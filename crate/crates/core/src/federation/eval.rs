use super::LabeledSet;
use crate::error::Result;
use crate::fam::FamParams;
use crate::losses::{class_probabilities, cosine_similarity, Temperature};
use crate::metrics::EvalRecord;
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Eval-mode classification of every row: masked features are compared with
/// each class prompt by cosine similarity and turned into a distribution with
/// a temperature softmax.
pub fn evaluate<T: Scalar>(
    fam: &FamParams<T>,
    set: &LabeledSet<T>,
    prompt_bank: &Matrix<T>,
    tau: Temperature,
) -> Result<Vec<EvalRecord>> {
    if set.is_empty() {
        return Ok(Vec::new());
    }
    let masked = fam.masked_features(&set.features)?;
    let sim = cosine_similarity(&masked, prompt_bank)?;
    Ok((0..sim.rows())
        .map(|j| {
            let probs = class_probabilities(sim.row(j), tau)
                .into_iter()
                .map(Scalar::as_f64)
                .collect();
            EvalRecord::new(set.labels[j], probs)
        })
        .collect())
}
