use std::collections::BTreeMap;

use ndarray::{ArrayD, Zip};

use crate::model::{Checkpoint, CheckpointError};
use crate::nn::Module;

pub const OPTIM_PREFIX: &str = "optim.";

/// Momentum gradient descent with L2 decay folded into the gradient:
/// `v = mu v + (g + wd w)`, `w -= lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: BTreeMap<String, ArrayD<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32, weight_decay: f32) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step<M: Module<f32> + ?Sized>(&mut self, model: &mut M) {
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        model.visit_mut("", &mut |name, p| {
            if !p.trainable {
                return;
            }
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            Zip::from(&mut p.value).and(&p.grad).and(v).for_each(|w, &g, v| {
                *v = mu * *v + g + wd * *w;
                *w -= lr * *v;
            });
        });
    }

    /// Momentum buffers under [`OPTIM_PREFIX`].
    pub fn state_tensors(&self) -> Vec<(String, ArrayD<f32>)> {
        self.velocity
            .iter()
            .map(|(k, v)| (format!("{OPTIM_PREFIX}{k}"), v.clone()))
            .collect()
    }

    /// Restores the momentum buffers stored in `ckpt`; every buffer has to
    /// name a trainable parameter of `model` with the same shape.
    pub fn load_state<M: Module<f32> + ?Sized>(&mut self, ckpt: &Checkpoint, model: &M) -> Result<(), CheckpointError> {
        let mut shapes = BTreeMap::new();
        model.visit("", &mut |name, p| {
            if p.trainable {
                shapes.insert(name.to_string(), p.shape().to_vec());
            }
        });
        let mut velocity = BTreeMap::new();
        for (name, t) in ckpt.section(OPTIM_PREFIX) {
            match shapes.get(&name) {
                Some(s) if s.as_slice() == t.shape() => {
                    velocity.insert(name, t.clone());
                }
                Some(s) => {
                    return Err(CheckpointError::Corrupt(format!(
                        "optimizer state {name}: shape {:?}, expected {s:?}",
                        t.shape()
                    )))
                }
                None => return Err(CheckpointError::Corrupt(format!("optimizer state for unknown parameter {name}"))),
            }
        }
        self.velocity = velocity;
        Ok(())
    }
}
