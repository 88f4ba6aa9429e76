use ndarray::{Array2, Array3, ArrayView3, Axis, NdFloat};

use super::LossError;

/// Outcome of batch-all mining: the mean over active (positive-hinge)
/// triplets, and how many of the valid triplets were active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletValue<F> {
    pub loss: F,
    pub active: usize,
    pub valid: usize,
}

impl<F: NdFloat> TripletValue<F> {
    fn zero() -> Self {
        TripletValue { loss: F::zero(), active: 0, valid: 0 }
    }

    pub fn nonzero_fraction(&self) -> f64 {
        if self.valid == 0 {
            0.0
        } else {
            self.active as f64 / self.valid as f64
        }
    }
}

/// Per-part Euclidean norms `[Ba, Bb, P]` between every anchor and every
/// candidate.
fn part_norms<F: NdFloat>(anchors: ArrayView3<'_, F>, others: ArrayView3<'_, F>) -> Array3<F> {
    let (ba, c, p) = anchors.dim();
    let bb = others.dim().0;
    let mut out = Array3::zeros((ba, bb, p));
    for a in 0..ba {
        for b in 0..bb {
            for q in 0..p {
                let mut s = F::zero();
                for k in 0..c {
                    let d = anchors[(a, k, q)] - others[(b, k, q)];
                    s += d * d;
                }
                out[(a, b, q)] = s.sqrt();
            }
        }
    }
    out
}

fn check(anchors: ArrayView3<'_, impl NdFloat>, others: ArrayView3<'_, impl NdFloat>, labels: &[usize]) -> Result<(), LossError> {
    if anchors.dim().0 == 0 {
        return Err(LossError::EmptyBatch);
    }
    if anchors.dim() != others.dim() {
        return Err(LossError::ShapeMismatch {
            what: "paired features".into(),
            expected: anchors.shape().to_vec(),
            got: others.shape().to_vec(),
        });
    }
    if labels.len() != anchors.dim().0 {
        return Err(LossError::ShapeMismatch {
            what: "labels".into(),
            expected: vec![anchors.dim().0],
            got: vec![labels.len()],
        });
    }
    Ok(())
}

struct Mined<F> {
    value: TripletValue<F>,
    /// Coefficient of each anchor-candidate distance in the loss.
    weights: Array2<F>,
    norms: Array3<F>,
}

/// Visits every valid triplet `(a, p, n)`: `p != a` shares the anchor's
/// label, `n` does not. Distances are anchor to candidate.
fn for_each_triplet<F: NdFloat>(dist: &Array2<F>, labels: &[usize], margin: F, mut f: impl FnMut(usize, usize, usize, F)) {
    let b = labels.len();
    for a in 0..b {
        for p in (0..b).filter(|&p| p != a && labels[p] == labels[a]) {
            for n in (0..b).filter(|&n| labels[n] != labels[a]) {
                f(a, p, n, margin + dist[(a, p)] - dist[(a, n)]);
            }
        }
    }
}

fn mine<F: NdFloat>(anchors: ArrayView3<'_, F>, others: ArrayView3<'_, F>, labels: &[usize], margin: F) -> Mined<F> {
    let norms = part_norms(anchors, others);
    let parts = F::from(norms.dim().2).unwrap();
    let dist = norms.sum_axis(Axis(2)).mapv(|s| s / parts);
    let b = labels.len();
    let mut weights = Array2::zeros((b, b));
    let mut value = TripletValue::zero();
    // sum of d(a,p) - d(a,n) over active triplets; the margin is added once
    let mut gap = F::zero();
    for_each_triplet(&dist, labels, margin, |a, p, n, h| {
        value.valid += 1;
        if h > F::zero() {
            value.active += 1;
            gap += dist[(a, p)] - dist[(a, n)];
            weights[(a, p)] += F::one();
            weights[(a, n)] -= F::one();
        }
    });
    if value.active > 0 {
        let count = F::from(value.active).unwrap();
        value.loss = margin + gap / count;
        weights.mapv_inplace(|w| w / count);
    }
    Mined { value, weights, norms }
}

/// Chain rule through the part distances: gradients for anchors and
/// candidates.
fn distance_grads<F: NdFloat>(
    anchors: ArrayView3<'_, F>,
    others: ArrayView3<'_, F>,
    mined: &Mined<F>,
) -> (Array3<F>, Array3<F>) {
    let (b, c, p) = anchors.dim();
    let inv_parts = F::one() / F::from(p).unwrap();
    let mut da = Array3::zeros((b, c, p));
    let mut db = Array3::zeros((b, c, p));
    for a in 0..b {
        for o in 0..b {
            let w = mined.weights[(a, o)];
            if w == F::zero() {
                continue;
            }
            for q in 0..p {
                let norm = mined.norms[(a, o, q)];
                if norm == F::zero() {
                    continue;
                }
                let scale = w * inv_parts / norm;
                for k in 0..c {
                    let g = scale * (anchors[(a, k, q)] - others[(o, k, q)]);
                    da[(a, k, q)] += g;
                    db[(o, k, q)] -= g;
                }
            }
        }
    }
    (da, db)
}

fn degenerate(labels: &[usize]) -> bool {
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        log::warn!("triplet loss on a batch with a single identity; returning 0");
        true
    } else {
        false
    }
}

/// Batch-all triplet loss over `[B, C3, P]` features.
pub fn triplet_loss<F: NdFloat>(features: ArrayView3<'_, F>, labels: &[usize], margin: F) -> Result<TripletValue<F>, LossError> {
    Ok(triplet_loss_grad(features, labels, margin)?.0)
}

pub fn triplet_loss_grad<F: NdFloat>(
    features: ArrayView3<'_, F>,
    labels: &[usize],
    margin: F,
) -> Result<(TripletValue<F>, Array3<F>), LossError> {
    check(features, features, labels)?;
    if degenerate(labels) {
        return Ok((TripletValue::zero(), Array3::zeros(features.dim())));
    }
    let mined = mine(features, features, labels, margin);
    let (da, db) = distance_grads(features, features, &mined);
    Ok((mined.value, da + db))
}

/// Triplets anchored in one modality with positives and negatives drawn
/// from the other, averaged over both directions.
pub fn cross_modal_triplet<F: NdFloat>(
    feat_m1: ArrayView3<'_, F>,
    feat_m2: ArrayView3<'_, F>,
    labels: &[usize],
    margin: F,
) -> Result<TripletValue<F>, LossError> {
    Ok(cross_modal_triplet_grad(feat_m1, feat_m2, labels, margin)?.0)
}

pub fn cross_modal_triplet_grad<F: NdFloat>(
    feat_m1: ArrayView3<'_, F>,
    feat_m2: ArrayView3<'_, F>,
    labels: &[usize],
    margin: F,
) -> Result<(TripletValue<F>, Array3<F>, Array3<F>), LossError> {
    check(feat_m1, feat_m2, labels)?;
    if degenerate(labels) {
        return Ok((TripletValue::zero(), Array3::zeros(feat_m1.dim()), Array3::zeros(feat_m2.dim())));
    }
    let half = F::from(0.5).unwrap();
    let fwd = mine(feat_m1, feat_m2, labels, margin);
    let bwd = mine(feat_m2, feat_m1, labels, margin);
    let (a1, o2) = distance_grads(feat_m1, feat_m2, &fwd);
    let (a2, o1) = distance_grads(feat_m2, feat_m1, &bwd);
    let value = TripletValue {
        loss: half * (fwd.value.loss + bwd.value.loss),
        active: fwd.value.active + bwd.value.active,
        valid: fwd.value.valid + bwd.value.valid,
    };
    Ok((value, (a1 + o1) * half, (a2 + o2) * half))
}

/// Indices `(a, p, n)` of the triplets with a positive hinge, in mining
/// order.
pub fn active_triplets<F: NdFloat>(features: ArrayView3<'_, F>, labels: &[usize], margin: F) -> Result<Vec<[usize; 3]>, LossError> {
    check(features, features, labels)?;
    let norms = part_norms(features, features);
    let parts = F::from(norms.dim().2).unwrap();
    let dist = norms.sum_axis(Axis(2)).mapv(|s| s / parts);
    let mut out = Vec::new();
    for_each_triplet(&dist, labels, margin, |a, p, n, h| {
        if h > F::zero() {
            out.push([a, p, n]);
        }
    });
    Ok(out)
}
