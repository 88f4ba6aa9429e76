use ndarray::{Array3, ArrayView3, NdFloat};

use super::LossError;

fn check<F: NdFloat>(logits: ArrayView3<'_, F>, labels: &[usize]) -> Result<(), LossError> {
    let (b, classes, _) = logits.dim();
    if b == 0 {
        return Err(LossError::EmptyBatch);
    }
    if classes < 2 {
        return Err(LossError::TooFewClasses(classes));
    }
    if labels.len() != b {
        return Err(LossError::ShapeMismatch {
            what: "labels".into(),
            expected: vec![b],
            got: vec![labels.len()],
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(LossError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Softmax cross-entropy of `[B, K, P]` logits, one classifier per part,
/// averaged over parts and batch.
pub fn ce_loss<F: NdFloat>(logits: ArrayView3<'_, F>, labels: &[usize]) -> Result<F, LossError> {
    Ok(ce_loss_grad(logits, labels)?.0)
}

pub fn ce_loss_grad<F: NdFloat>(logits: ArrayView3<'_, F>, labels: &[usize]) -> Result<(F, Array3<F>), LossError> {
    check(logits, labels)?;
    let (b, classes, parts) = logits.dim();
    let scale = F::one() / F::from(b * parts).unwrap();
    let mut grad = Array3::zeros((b, classes, parts));
    let mut total = F::zero();
    let mut probs = vec![F::zero(); classes];
    for (i, &label) in labels.iter().enumerate() {
        for q in 0..parts {
            let row = logits.slice(ndarray::s![i, .., q]);
            let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
            let mut sum = F::zero();
            for (p, &v) in probs.iter_mut().zip(row.iter()) {
                *p = (v - max).exp();
                sum += *p;
            }
            total += max + sum.ln() - row[label];
            for (k, &p) in probs.iter().enumerate() {
                let target = if k == label { F::one() } else { F::zero() };
                grad[(i, k, q)] = (p / sum - target) * scale;
            }
        }
    }
    Ok((total * scale, grad))
}
