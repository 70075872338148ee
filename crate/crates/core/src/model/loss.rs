//! Scoring losses (pointwise, multiple choice) and post-training losses.

use crate::error::Result;
use crate::numeric::{Scalar, Tape, Tensor, Var};

pub const PROB_EPS: f64 = 1e-7;

/// Binary cross-entropy of `σ(logit)` against `label`.
pub fn pointwise_loss<F: Scalar>(t: &mut Tape<F>, logit: Var, label: u8) -> Result<Var> {
    let p = t.sigmoid(logit);
    t.binary_cross_entropy(p, F::from_u8(label).expect("label"), F::from_f64_lossy(PROB_EPS))
}

/// Softmax cross-entropy over the candidate logits (each `1 × 1`).
pub fn multichoice_loss<F: Scalar>(t: &mut Tape<F>, logits: &[Var], gold: usize) -> Result<Var> {
    let row = t.concat_last(logits)?;
    t.softmax_cross_entropy(row, &[gold])
}

/// Mean token cross-entropy over masked positions; zero when there are none.
pub fn mlm_loss<F: Scalar>(t: &mut Tape<F>, logits: Option<Var>, targets: &[usize]) -> Result<Var> {
    match logits {
        Some(z) if !targets.is_empty() => t.softmax_cross_entropy(z, targets),
        _ => Ok(t.constant(Tensor::scalar(F::zero()))),
    }
}

/// Binary cross-entropy of the next-utterance probability.
pub fn nup_loss<F: Scalar>(t: &mut Tape<F>, prob: Var, label: u8) -> Result<Var> {
    t.binary_cross_entropy(prob, F::from_u8(label).expect("label"), F::from_f64_lossy(PROB_EPS))
}

/// Unweighted sum of the two post-training objectives.
pub fn combined_loss<F: Scalar>(t: &mut Tape<F>, intra: Var, inter: Var) -> Result<Var> {
    t.add(intra, inter)
}
