use crate::error::{Error, Result};
use crate::ndiff::{Tape, Tensor, Var};

/// Row-wise softmax.
pub fn softmax(tape: &mut Tape, logits: Var) -> Result<Var> {
    let k = tape.value(logits).rows();
    let lse = tape.logsumexp(logits)?;
    let lse = tape.reshape(lse, &[k, 1])?;
    let shifted = tape.sub(logits, lse)?;
    Ok(tape.exp(shifted))
}

fn check_targets(tape: &Tape, x: Var, labels: &[usize], weights: &[f64]) -> Result<Vec<usize>> {
    let v = tape.value(x);
    if v.rank() != 2 || v.rows() != labels.len() || weights.len() != labels.len() {
        return Err(Error::dim(
            "segmentation loss",
            v.shape(),
            &[labels.len(), weights.len()],
        ));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= v.cols()) {
        return Err(Error::contract(format!(
            "label {l} outside {} classes",
            v.cols()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::contract(
            "loss weights must be finite and nonnegative",
        ));
    }
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| weights[i] > 0.0).collect();
    if keep.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(keep)
}

/// Weighted mean of `−log softmax(logits)[label]`, normalized by the total
/// weight.
pub fn cross_entropy_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    weights: &[f64],
) -> Result<Var> {
    let keep = check_targets(tape, logits, labels, weights)?;
    let n = tape.value(logits).cols();
    let m = keep.len();
    let rows = tape.gather_rows(logits, &keep)?;
    let lse = tape.logsumexp(rows)?;
    let picked: Vec<usize> = keep
        .iter()
        .enumerate()
        .map(|(r, &i)| r * n + labels[i])
        .collect();
    let target = tape.take(rows, &picked, &[m])?;
    let nll = tape.sub(lse, target)?;
    let w: Vec<f64> = keep.iter().map(|&i| weights[i]).collect();
    let total: f64 = w.iter().sum();
    let w = tape.constant(Tensor::vector(w));
    let weighted = tape.mul(nll, w)?;
    let s = tape.sum(weighted);
    Ok(tape.scale(s, 1.0 / total))
}

/// Lovász-softmax on class probabilities, averaged over the classes present
/// among the labeled rows. Rows of weight 0 are ignored; other weights only
/// mark membership.
pub fn lovasz_softmax_from_probs(
    tape: &mut Tape,
    probs: Var,
    labels: &[usize],
    weights: &[f64],
) -> Result<Var> {
    let keep = check_targets(tape, probs, labels, weights)?;
    let n = tape.value(probs).cols();
    let mut present: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
    present.sort_unstable();
    present.dedup();

    let mut terms = Vec::with_capacity(present.len());
    for &c in &present {
        let pv = tape.value(probs);
        let fg: Vec<bool> = keep.iter().map(|&i| labels[i] == c).collect();
        let err: Vec<f64> = keep
            .iter()
            .zip(&fg)
            .map(|(&i, &f)| {
                let p = pv.data()[i * n + c];
                if f {
                    1.0 - p
                } else {
                    p
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..keep.len()).collect();
        order.sort_by(|&a, &b| err[b].total_cmp(&err[a]).then(a.cmp(&b)));

        let gts = fg.iter().filter(|&&f| f).count() as f64;
        let mut coef = Vec::with_capacity(order.len());
        let (mut cum_fg, mut cum_bg, mut prev) = (0.0, 0.0, 0.0);
        let mut offset = 0.0;
        let mut index = Vec::with_capacity(order.len());
        for &r in &order {
            if fg[r] {
                cum_fg += 1.0;
            } else {
                cum_bg += 1.0;
            }
            let jac = 1.0 - (gts - cum_fg) / (gts + cum_bg);
            let g = jac - prev;
            prev = jac;
            // err = 1 − p on foreground rows, p elsewhere.
            if fg[r] {
                coef.push(-g);
                offset += g;
            } else {
                coef.push(g);
            }
            index.push(keep[r] * n + c);
        }
        let p = tape.take(probs, &index, &[index.len()])?;
        let coef = tape.constant(Tensor::vector(coef));
        let dotted = tape.mul(p, coef)?;
        let s = tape.sum(dotted);
        let off = tape.constant(Tensor::scalar(offset));
        terms.push(tape.add(s, off)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(tape.scale(total, 1.0 / present.len() as f64))
}

/// [`lovasz_softmax_from_probs`] applied to the softmax of `logits`.
pub fn lovasz_softmax_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    weights: &[f64],
) -> Result<Var> {
    let keep = check_targets(tape, logits, labels, weights)?;
    let rows = tape.gather_rows(logits, &keep)?;
    let probs = softmax(tape, rows)?;
    let kept_labels: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
    lovasz_softmax_from_probs(tape, probs, &kept_labels, &vec![1.0; keep.len()])
}
