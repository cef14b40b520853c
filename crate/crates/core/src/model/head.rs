use crate::data::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ndiff::{Tape, Tensor, Var};

/// `features · Embᵀ`: one logit per class, no bias. The embedding rows
/// enter as a constant, so the head is never trained.
pub fn head_logits(tape: &mut Tape, features: Var, emb: &EmbeddingTable) -> Result<Var> {
    if tape.shape(features).last() != Some(&emb.dim()) {
        return Err(Error::dim(
            "head_logits",
            tape.shape(features),
            emb.rows().shape(),
        ));
    }
    let w = tape.constant(emb.rows().transpose()?);
    tape.matmul(features, w)
}

pub fn head_logits_tensor(features: &Tensor, emb: &EmbeddingTable) -> Result<Tensor> {
    if features.rank() != 2 || features.cols() != emb.dim() {
        return Err(Error::dim(
            "head_logits",
            features.shape(),
            emb.rows().shape(),
        ));
    }
    features.matmul(&emb.rows().transpose()?)
}

/// Row-wise argmax over the `allowed` classes; ties go to the lowest id.
pub fn predict_labels(logits: &Tensor, allowed: &[usize]) -> Result<Vec<usize>> {
    if allowed.is_empty() {
        return Err(Error::contract(
            "predict_labels needs at least one allowed class",
        ));
    }
    let n = logits.cols();
    if let Some(&c) = allowed.iter().find(|&&c| c >= n) {
        return Err(Error::dim("predict_labels", logits.shape(), &[c]));
    }
    let mut order = allowed.to_vec();
    order.sort_unstable();
    Ok((0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = order[0];
            for &c in &order[1..] {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}
