use ndarray::{ArrayD, IxDyn, NdFloat};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// He (fan-in) normal initialization: `N(0, 2 / fan_in)`.
pub fn he_normal<F: NdFloat, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> ArrayD<F> {
    normal(rng, shape, (2.0 / fan_in.max(1) as f64).sqrt())
}

pub fn normal<F: NdFloat, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> ArrayD<F> {
    let dist = Normal::new(0.0f64, std).expect("finite std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || F::from(dist.sample(rng)).unwrap())
}
