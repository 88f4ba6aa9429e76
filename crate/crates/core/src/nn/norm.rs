use ndarray::{ArrayD, IxDyn, NdFloat};

use super::param::{join_path, Module, Param};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over the channel axis of an `N x C x S` layout
/// (`S` = flattened spatial extent, 1 for feature vectors).
///
/// Training mode normalizes with the statistics of the batch actually passed
/// in and folds them into the running estimates; evaluation mode only reads
/// the running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Param<F>,
    pub running_var: Param<F>,
    pub channels: usize,
}

/// Statistics of one training-mode batch, per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance (the one used for normalization).
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NormCache<F> {
    xhat: Vec<F>,
    inv_std: Vec<F>,
    dims: (usize, usize, usize),
    pub stats: BatchStats,
}

impl<F: NdFloat> BatchNorm<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::filled(&[channels], F::one()),
            beta: Param::zeros(&[channels]),
            running_mean: Param::buffer(ArrayD::zeros(IxDyn(&[channels]))),
            running_var: Param::buffer(ArrayD::from_elem(IxDyn(&[channels]), F::one())),
            channels,
        }
    }

    pub fn forward_eval(&self, x: &[F], dims: (usize, usize, usize)) -> Vec<F> {
        let (n, c, s) = dims;
        assert_eq!(c, self.channels);
        assert_eq!(x.len(), n * c * s);
        let eps = F::from(BN_EPS).unwrap();
        let scale: Vec<F> = (0..c)
            .map(|ch| self.gamma.values()[ch] / (self.running_var.values()[ch] + eps).sqrt())
            .collect();
        let mut y = vec![F::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * s;
                let mean = self.running_mean.values()[ch];
                let beta = self.beta.values()[ch];
                for (yo, xi) in y[off..off + s].iter_mut().zip(&x[off..off + s]) {
                    *yo = (*xi - mean) * scale[ch] + beta;
                }
            }
        }
        y
    }

    pub fn forward_train(&mut self, x: &[F], dims: (usize, usize, usize)) -> (Vec<F>, NormCache<F>) {
        let (n, c, s) = dims;
        assert_eq!(c, self.channels);
        assert_eq!(x.len(), n * c * s);
        let count = (n * s) as f64;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for ch in 0..c {
            let mut sum = 0.0f64;
            for b in 0..n {
                let off = (b * c + ch) * s;
                sum += x[off..off + s].iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
            }
            let m = sum / count;
            let mut sq = 0.0f64;
            for b in 0..n {
                let off = (b * c + ch) * s;
                sq += x[off..off + s]
                    .iter()
                    .map(|v| {
                        let d = v.to_f64().unwrap() - m;
                        d * d
                    })
                    .sum::<f64>();
            }
            mean[ch] = m;
            var[ch] = sq / count;
        }

        let inv_std: Vec<F> = var
            .iter()
            .map(|v| F::from(1.0 / (v + BN_EPS).sqrt()).unwrap())
            .collect();
        let mut xhat = vec![F::zero(); x.len()];
        let mut y = vec![F::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * s;
                let m = F::from(mean[ch]).unwrap();
                let g = self.gamma.values()[ch];
                let be = self.beta.values()[ch];
                for i in off..off + s {
                    let h = (x[i] - m) * inv_std[ch];
                    xhat[i] = h;
                    y[i] = h * g + be;
                }
            }
        }

        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        for ch in 0..c {
            let rm = &mut self.running_mean.values_mut()[ch];
            *rm = F::from((1.0 - BN_MOMENTUM) * rm.to_f64().unwrap() + BN_MOMENTUM * mean[ch]).unwrap();
            let rv = &mut self.running_var.values_mut()[ch];
            *rv = F::from((1.0 - BN_MOMENTUM) * rv.to_f64().unwrap() + BN_MOMENTUM * var[ch] * unbias)
                .unwrap();
        }

        (
            y,
            NormCache {
                xhat,
                inv_std,
                dims,
                stats: BatchStats { mean, var },
            },
        )
    }

    pub fn backward(&mut self, cache: &NormCache<F>, dy: &[F]) -> Vec<F> {
        let (n, c, s) = cache.dims;
        assert_eq!(dy.len(), n * c * s);
        let count = F::from(n * s).unwrap();
        let mut dx = vec![F::zero(); dy.len()];
        for ch in 0..c {
            let mut sum_dy = F::zero();
            let mut sum_dy_xhat = F::zero();
            for b in 0..n {
                let off = (b * c + ch) * s;
                for i in off..off + s {
                    sum_dy += dy[i];
                    sum_dy_xhat += dy[i] * cache.xhat[i];
                }
            }
            self.gamma.grads_mut()[ch] += sum_dy_xhat;
            self.beta.grads_mut()[ch] += sum_dy;
            let g = self.gamma.values()[ch];
            let k = g * cache.inv_std[ch] / count;
            for b in 0..n {
                let off = (b * c + ch) * s;
                for i in off..off + s {
                    dx[i] = k * (count * dy[i] - sum_dy - cache.xhat[i] * sum_dy_xhat);
                }
            }
        }
        dx
    }
}

impl<F: NdFloat> Module<F> for BatchNorm<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join_path(prefix, "weight"), &self.gamma);
        f(&join_path(prefix, "bias"), &self.beta);
        f(&join_path(prefix, "running_mean"), &self.running_mean);
        f(&join_path(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join_path(prefix, "weight"), &mut self.gamma);
        f(&join_path(prefix, "bias"), &mut self.beta);
        f(&join_path(prefix, "running_mean"), &mut self.running_mean);
        f(&join_path(prefix, "running_var"), &mut self.running_var);
    }
}
