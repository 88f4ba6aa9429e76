//! Minimal layer library with hand-written backward passes.
//!
//! Every layer is generic over the float type so the same code runs at
//! `f32` for training and `f64` for gradient checks. Forward passes return
//! whatever the matching backward pass needs; layers only keep parameters.

mod conv;
pub mod init;
mod norm;
mod param;
mod winograd;

pub use conv::Conv2d;
pub use norm::{BatchNorm, BatchStats, NormCache, BN_EPS, BN_MOMENTUM};
pub use param::{join_path, Module, Param};

use ndarray::{ArrayD, Dimension, NdFloat};

pub fn relu_inplace<F: NdFloat, D: Dimension>(x: &mut ndarray::Array<F, D>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Masks `dy` where the forward output was clamped to zero.
pub fn relu_backward<F: NdFloat, D: Dimension>(y: &ndarray::Array<F, D>, dy: &mut ndarray::Array<F, D>) {
    ndarray::Zip::from(dy).and(y).for_each(|g, &o| {
        if o <= F::zero() {
            *g = F::zero();
        }
    });
}

/// Collects a model's parameter values into an owned snapshot.
pub fn snapshot<F: NdFloat, M: Module<F> + ?Sized>(m: &M) -> Vec<(String, ArrayD<F>)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, p| out.push((name.to_string(), p.value.clone())));
    out
}
