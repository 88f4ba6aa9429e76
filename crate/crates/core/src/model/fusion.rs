use ndarray::{concatenate, s, Array2, Array4, ArrayView4, Axis, NdFloat};
use rand::Rng;

use crate::nn::{join_path, relu_backward, relu_inplace, Conv2d, Module, Param};

/// Two-way softmax.
pub fn softmax2<F: NdFloat>(l: [F; 2]) -> [F; 2] {
    let m = l[0].max(l[1]);
    let e0 = (l[0] - m).exp();
    let e1 = (l[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// Gated fusion of two encoder outputs.
///
/// `mix` maps the channel concatenation back to `C` channels; the gate pools
/// the mixed map per sequence, runs a two-layer 1x1 MLP and a softmax over
/// the two inputs. The result is `mix + w0 * f_i + w1 * f_j`. One instance
/// serves every modality pair.
#[derive(Debug, Clone)]
pub struct Fusion<F> {
    pub mix: Conv2d<F>,
    pub gate_fc1: Conv2d<F>,
    pub gate_fc2: Conv2d<F>,
    /// Replaces the learned gate with fixed weights.
    pub frozen_gate: Option<[F; 2]>,
}

#[derive(Debug)]
pub struct FusionCache<F> {
    fi: Array4<F>,
    fj: Array4<F>,
    pooled: Array4<F>,
    hidden: Array4<F>,
    weights: Array2<F>,
    frames: usize,
}

impl<F: NdFloat> Fusion<F> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: usize, hidden: usize) -> Self {
        Fusion {
            mix: Conv2d::new(rng, 2 * channels, channels, 1, 1, true),
            gate_fc1: Conv2d::new(rng, channels, hidden, 1, 1, true),
            gate_fc2: Conv2d::new(rng, hidden, 2, 1, 1, true),
            frozen_gate: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.mix.out_channels
    }

    /// Mean over frames and space of each sequence: `[B, C, 1, 1]`.
    fn pool(mixed: ArrayView4<'_, F>, frames: usize) -> Array4<F> {
        let (n, c, h, w) = mixed.dim();
        let b = n / frames;
        let scale = F::from(frames * h * w).unwrap();
        Array4::from_shape_fn((b, c, 1, 1), |(bi, ci, _, _)| {
            mixed.slice(s![bi * frames..(bi + 1) * frames, ci, .., ..]).sum() / scale
        })
    }

    fn gate_hidden(&self, pooled: &Array4<F>) -> Array4<F> {
        let mut h = self.gate_fc1.forward(pooled.view());
        relu_inplace(&mut h);
        h
    }

    /// Gate logits for a mixed map `[B*T, C, H, W]`: `[B, 2]`.
    pub fn gate_logits(&self, mixed: ArrayView4<'_, F>, frames: usize) -> Array2<F> {
        let h = self.gate_hidden(&Self::pool(mixed, frames));
        let l = self.gate_fc2.forward(h.view());
        l.into_shape_with_order((mixed.dim().0 / frames, 2)).expect("two logits")
    }

    /// Softmax gate weights, `[B, 2]`; each row sums to one.
    pub fn gate_weights(&self, mixed: ArrayView4<'_, F>, frames: usize) -> Array2<F> {
        let b = mixed.dim().0 / frames;
        if let Some(w) = self.frozen_gate {
            return Array2::from_shape_fn((b, 2), |(_, k)| w[k]);
        }
        let mut l = self.gate_logits(mixed, frames);
        for mut row in l.rows_mut() {
            let w = softmax2([row[0], row[1]]);
            row[0] = w[0];
            row[1] = w[1];
        }
        l
    }

    pub fn mixed(&self, fi: ArrayView4<'_, F>, fj: ArrayView4<'_, F>) -> Array4<F> {
        let cat = concatenate(Axis(1), &[fi, fj]).expect("matching shapes");
        self.mix.forward(cat.view())
    }

    fn combine(mixed: &mut Array4<F>, fi: ArrayView4<'_, F>, fj: ArrayView4<'_, F>, w: &Array2<F>, frames: usize) {
        for (n, ((mut m, a), b)) in mixed
            .outer_iter_mut()
            .zip(fi.outer_iter())
            .zip(fj.outer_iter())
            .enumerate()
        {
            let (w0, w1) = (w[(n / frames, 0)], w[(n / frames, 1)]);
            ndarray::Zip::from(&mut m).and(&a).and(&b).for_each(|m, &a, &b| {
                *m = *m + w0 * a + w1 * b;
            });
        }
    }

    /// Fuses two `[B*T, C, H, W]` maps of `frames`-long sequences.
    pub fn forward(&self, fi: ArrayView4<'_, F>, fj: ArrayView4<'_, F>, frames: usize) -> Array4<F> {
        assert_eq!(fi.dim(), fj.dim(), "fusion inputs differ in shape");
        assert_eq!(fi.dim().0 % frames, 0);
        let mut m = self.mixed(fi, fj);
        let w = self.gate_weights(m.view(), frames);
        Self::combine(&mut m, fi, fj, &w, frames);
        m
    }

    /// Like [`forward`](Self::forward), keeping what the backward pass needs.
    pub fn forward_cached(&self, fi: Array4<F>, fj: Array4<F>, frames: usize) -> (Array4<F>, FusionCache<F>) {
        assert_eq!(fi.dim(), fj.dim(), "fusion inputs differ in shape");
        let mut m = self.mixed(fi.view(), fj.view());
        let pooled = Self::pool(m.view(), frames);
        let hidden = self.gate_hidden(&pooled);
        let weights = self.gate_weights(m.view(), frames);
        Self::combine(&mut m, fi.view(), fj.view(), &weights, frames);
        let cache = FusionCache {
            fi,
            fj,
            pooled,
            hidden,
            weights,
            frames,
        };
        (m, cache)
    }

    /// Accumulates parameter gradients; returns the gradients for both inputs.
    pub fn backward(&mut self, cache: FusionCache<F>, dy: &Array4<F>) -> (Array4<F>, Array4<F>) {
        let frames = cache.frames;
        let (n, c, h, w) = dy.dim();
        let b = n / frames;
        let mut dm = dy.clone();

        if self.frozen_gate.is_none() {
            let mut dlogits = Array4::<F>::zeros((b, 2, 1, 1));
            for bi in 0..b {
                let rows = s![bi * frames..(bi + 1) * frames, .., .., ..];
                let g = dy.slice(rows);
                let dw0 = (&g * &cache.fi.slice(rows)).sum();
                let dw1 = (&g * &cache.fj.slice(rows)).sum();
                let (w0, w1) = (cache.weights[(bi, 0)], cache.weights[(bi, 1)]);
                let dot = w0 * dw0 + w1 * dw1;
                dlogits[(bi, 0, 0, 0)] = w0 * (dw0 - dot);
                dlogits[(bi, 1, 0, 0)] = w1 * (dw1 - dot);
            }
            let mut dh = self.gate_fc2.backward(cache.hidden.view(), dlogits.view());
            relu_backward(&cache.hidden, &mut dh);
            let dpool = self.gate_fc1.backward(cache.pooled.view(), dh.view());
            let scale = F::from(frames * h * w).unwrap();
            for (ni, mut frame) in dm.outer_iter_mut().enumerate() {
                for ci in 0..c {
                    let g = dpool[(ni / frames, ci, 0, 0)] / scale;
                    frame.index_axis_mut(Axis(0), ci).mapv_inplace(|v| v + g);
                }
            }
        }

        let cat = concatenate(Axis(1), &[cache.fi.view(), cache.fj.view()]).expect("matching shapes");
        let dcat = self.mix.backward(cat.view(), dm.view());
        let mut dfi = dcat.slice(s![.., ..c, .., ..]).to_owned();
        let mut dfj = dcat.slice(s![.., c.., .., ..]).to_owned();
        for (ni, (mut a, mut bb)) in dfi.outer_iter_mut().zip(dfj.outer_iter_mut()).enumerate() {
            let (w0, w1) = (cache.weights[(ni / frames, 0)], cache.weights[(ni / frames, 1)]);
            a.scaled_add(w0, &dy.index_axis(Axis(0), ni));
            bb.scaled_add(w1, &dy.index_axis(Axis(0), ni));
        }
        (dfi, dfj)
    }
}

impl<F: NdFloat> Module<F> for Fusion<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.mix.visit(&join_path(prefix, "mix"), f);
        self.gate_fc1.visit(&join_path(prefix, "gate.0"), f);
        self.gate_fc2.visit(&join_path(prefix, "gate.1"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.mix.visit_mut(&join_path(prefix, "mix"), f);
        self.gate_fc1.visit_mut(&join_path(prefix, "gate.0"), f);
        self.gate_fc2.visit_mut(&join_path(prefix, "gate.1"), f);
    }
}
