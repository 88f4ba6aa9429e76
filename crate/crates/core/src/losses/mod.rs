//! Identity objectives over part features `[B, C3, P]` and per-part logits
//! `[B, K, P]`.
//!
//! Every loss comes in a value-only form and a `_grad` form that also
//! returns gradients with respect to its inputs.

mod ce;
mod triplet;

use std::collections::BTreeMap;

use ndarray::{Array3, ArrayView3, NdFloat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ce::{ce_loss, ce_loss_grad};
pub use triplet::{active_triplets, cross_modal_triplet, cross_modal_triplet_grad, triplet_loss, triplet_loss_grad, TripletValue};

pub const DEFAULT_MARGIN: f64 = 0.2;

pub const CE: &str = "ce";
pub const TRIPLET: &str = "triplet";
pub const CROSS_TRIPLET: &str = "cross_triplet";

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("cross-entropy needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("objective needs at least one stream")]
    NoStreams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamLoss {
    pub name: String,
    pub ce: f64,
    pub triplet: f64,
}

/// Scalar summary of one objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    /// Always holds `ce`, `triplet` and `cross_triplet`; terms an objective
    /// does not use are 0.
    pub components: BTreeMap<String, f64>,
    pub nonzero_triplet_fraction: f64,
    pub streams: Vec<StreamLoss>,
}

impl LossReport {
    pub fn component(&self, name: &str) -> f64 {
        self.components.get(name).copied().unwrap_or(0.0)
    }

    /// First non-finite value, as `(stream, component)`; the stream is
    /// `"total"` for aggregated values.
    pub fn first_non_finite(&self) -> Option<(String, String)> {
        for s in &self.streams {
            for (name, v) in [(CE, s.ce), (TRIPLET, s.triplet)] {
                if !v.is_finite() {
                    return Some((s.name.clone(), name.to_string()));
                }
            }
        }
        if let Some((name, _)) = self.components.iter().find(|(_, v)| !v.is_finite()) {
            return Some(("total".into(), name.clone()));
        }
        (!self.total.is_finite()).then(|| ("total".into(), "total".into()))
    }
}

fn components(ce: f64, triplet: f64, cross: f64) -> BTreeMap<String, f64> {
    [(CE, ce), (TRIPLET, triplet), (CROSS_TRIPLET, cross)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// Outputs of one stream of the network.
#[derive(Debug, Clone)]
pub struct StreamView<'a, F> {
    pub name: String,
    pub features: ArrayView3<'a, F>,
    pub logits: ArrayView3<'a, F>,
}

/// Loss value with gradients for every stream's features and logits.
#[derive(Debug, Clone)]
pub struct Objective<F> {
    pub total: F,
    pub report: LossReport,
    pub d_features: Vec<Array3<F>>,
    pub d_logits: Vec<Array3<F>>,
}

fn to_f64<F: NdFloat>(v: F) -> f64 {
    v.to_f64().unwrap()
}

/// Mean over streams of `ce + triplet`, every stream weighted equally.
pub fn omni_objective<F: NdFloat>(streams: &[StreamView<'_, F>], labels: &[usize], margin: F) -> Result<Objective<F>, LossError> {
    if streams.is_empty() {
        return Err(LossError::NoStreams);
    }
    let weight = F::one() / F::from(streams.len()).unwrap();
    let (mut ce_sum, mut trip_sum) = (F::zero(), F::zero());
    let (mut active, mut valid) = (0, 0);
    let mut out = Objective {
        total: F::zero(),
        report: LossReport {
            total: 0.0,
            components: BTreeMap::new(),
            nonzero_triplet_fraction: 0.0,
            streams: Vec::new(),
        },
        d_features: Vec::new(),
        d_logits: Vec::new(),
    };
    for s in streams {
        let (ce, d_logits) = ce_loss_grad(s.logits, labels)?;
        let (trip, d_feat) = triplet_loss_grad(s.features, labels, margin)?;
        ce_sum += ce;
        trip_sum += trip.loss;
        active += trip.active;
        valid += trip.valid;
        out.report.streams.push(StreamLoss {
            name: s.name.clone(),
            ce: to_f64(ce),
            triplet: to_f64(trip.loss),
        });
        out.d_features.push(d_feat * weight);
        out.d_logits.push(d_logits * weight);
    }
    out.total = (ce_sum + trip_sum) * weight;
    out.report.total = to_f64(out.total);
    out.report.components = components(to_f64(ce_sum * weight), to_f64(trip_sum * weight), 0.0);
    out.report.nonzero_triplet_fraction = TripletValue { loss: 0.0, active, valid }.nonzero_fraction();
    Ok(out)
}

/// `½(cross_triplet + ½(ce_1 + ce_2))` for the two-stream variant.
pub fn two_stream_objective<F: NdFloat>(
    m1: &StreamView<'_, F>,
    m2: &StreamView<'_, F>,
    labels: &[usize],
    margin: F,
) -> Result<Objective<F>, LossError> {
    let half = F::from(0.5).unwrap();
    let (ce1, dl1) = ce_loss_grad(m1.logits, labels)?;
    let (ce2, dl2) = ce_loss_grad(m2.logits, labels)?;
    let (cross, df1, df2) = cross_modal_triplet_grad(m1.features, m2.features, labels, margin)?;
    let ce = half * (ce1 + ce2);
    let total = half * (cross.loss + ce);
    let quarter = half * half;
    Ok(Objective {
        total,
        report: LossReport {
            total: to_f64(total),
            components: components(to_f64(ce), 0.0, to_f64(cross.loss)),
            nonzero_triplet_fraction: cross.nonzero_fraction(),
            streams: vec![
                StreamLoss { name: m1.name.clone(), ce: to_f64(ce1), triplet: 0.0 },
                StreamLoss { name: m2.name.clone(), ce: to_f64(ce2), triplet: 0.0 },
            ],
        },
        d_features: vec![df1 * half, df2 * half],
        d_logits: vec![dl1 * quarter, dl2 * quarter],
    })
}
