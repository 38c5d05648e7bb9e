use alloc::vec::Vec;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (rows, classes) = logits.dims2().ok_or_else(|| Error::Rank {
        op: "softmax_cross_entropy",
        expected: 2,
        shape: logits.shape().to_vec(),
    })?;
    if rows != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: alloc::vec![labels.len()],
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok((rows, classes))
}

/// Mean cross-entropy of row-wise softmax over `logits` (`batch x classes`).
///
/// Each row is shifted by its (constant) maximum before exponentiating; the
/// shift cancels in value and in every derivative.
pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (rows, classes) = check_labels(tape.value(logits), labels)?;
    let values = tape.value(logits);
    let mut shift = Vec::with_capacity(rows * classes);
    let mut one_hot = alloc::vec![0.0; rows * classes];
    for (i, &label) in labels.iter().enumerate() {
        let m = values.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        shift.extend(core::iter::repeat_n(m, classes));
        one_hot[i * classes + label] = 1.0;
    }
    let shift = tape.constant(Tensor::matrix(rows, classes, shift)?);
    let one_hot = tape.constant(Tensor::matrix(rows, classes, one_hot)?);

    let shifted = tape.sub(logits, shift)?;
    let e = tape.exp(shifted)?;
    let denom = tape.sum_last(e)?;
    let lse = tape.log(denom)?;
    let picked = tape.mul(shifted, one_hot)?;
    let picked = tape.sum_last(picked)?;
    let per_row = tape.sub(lse, picked)?;
    let total = tape.sum(per_row)?;
    tape.scale(total, 1.0 / rows as f64)
}

/// Row-wise softmax of a `batch x classes` tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (rows, classes) = logits.dims2().ok_or_else(|| Error::Rank {
        op: "softmax",
        expected: 2,
        shape: logits.shape().to_vec(),
    })?;
    let mut out = Vec::with_capacity(rows * classes);
    for i in 0..rows {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|&y| libm::exp(y - m)));
        let s: f64 = out[start..].iter().sum();
        for z in &mut out[start..] {
            *z /= s;
        }
    }
    Tensor::matrix(rows, classes, out)
}

/// Value of [`softmax_cross_entropy`] without recording.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (rows, _) = check_labels(logits, labels)?;
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|&y| libm::exp(y - m)).sum();
        total += libm::log(s) - (row[label] - m);
    }
    Ok(total / rows as f64)
}
