use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array4, ArrayView4, NdFloat};
use rand::Rng;

use crate::nn::{join_path, relu_backward, relu_inplace, BatchNorm, BatchStats, Conv2d, Module, NormCache, Param, BN_EPS};

fn dims3(d: (usize, usize, usize, usize)) -> (usize, usize, usize) {
    (d.0, d.1, d.2 * d.3)
}

fn to4<F>(v: Vec<F>, d: (usize, usize, usize, usize)) -> Array4<F> {
    Array4::from_shape_vec(d, v).expect("normalized tensor keeps its shape")
}

/// Convolution without bias followed by batch normalization.
#[derive(Debug, Clone)]
pub struct ConvBn<F> {
    pub conv: Conv2d<F>,
    pub bn: BatchNorm<F>,
}

#[derive(Debug)]
pub struct ConvBnCache<F> {
    norm: NormCache<F>,
    out_dim: (usize, usize, usize, usize),
}

impl<F> ConvBnCache<F> {
    pub fn stats(&self) -> &BatchStats {
        &self.norm.stats
    }
}

impl<F: NdFloat> ConvBn<F> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        ConvBn {
            conv: Conv2d::new(rng, cin, cout, kernel, stride, false),
            bn: BatchNorm::new(cout),
        }
    }

    /// Per-channel `(scale, shift)` equivalent to the eval-mode normalization.
    fn affine(&self) -> (Vec<F>, Vec<F>) {
        let eps = F::from(BN_EPS).unwrap();
        let g = self.bn.gamma.values();
        let b = self.bn.beta.values();
        let m = self.bn.running_mean.values();
        let v = self.bn.running_var.values();
        (0..self.bn.channels)
            .map(|c| {
                let s = g[c] / (v[c] + eps).sqrt();
                (s, b[c] - m[c] * s)
            })
            .unzip()
    }

    pub fn forward(&self, x: ArrayView4<'_, F>) -> Array4<F> {
        self.forward_fused(x, None, false)
    }

    /// Eval-mode forward with an optional residual `[N, C, H, W]` added
    /// after normalization and an optional ReLU, in one pass.
    pub fn forward_fused(&self, x: ArrayView4<'_, F>, residual: Option<ArrayView4<'_, F>>, relu: bool) -> Array4<F> {
        let (scale, shift) = self.affine();
        let res = residual.as_ref().map(|r| r.as_standard_layout());
        let hw = {
            let (h, w) = self.conv.output_hw(x.dim().2, x.dim().3);
            h * w
        };
        let c = self.bn.channels;
        let rs = res.as_ref().map(|r| r.as_slice().expect("standard"));
        self.conv.forward_with(x, |n, co, src, dst| {
            let (a, b) = (scale[co], shift[co]);
            match rs {
                Some(r) => {
                    let r = &r[(n * c + co) * hw..(n * c + co + 1) * hw];
                    for ((d, s), r) in dst.iter_mut().zip(src).zip(r) {
                        *d = *s * a + b + *r;
                    }
                }
                None => {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = *s * a + b;
                    }
                }
            }
            if relu {
                for d in dst.iter_mut() {
                    if *d < F::zero() {
                        *d = F::zero();
                    }
                }
            }
        })
    }

    pub fn forward_train(&mut self, x: ArrayView4<'_, F>) -> (Array4<F>, ConvBnCache<F>) {
        let y = self.conv.forward(x);
        let d = y.dim();
        let (out, norm) = self.bn.forward_train(y.as_slice().expect("fresh"), dims3(d));
        (to4(out, d), ConvBnCache { norm, out_dim: d })
    }

    /// `x` is the input given to the matching `forward_train`.
    pub fn backward(
        &mut self,
        x: ArrayView4<'_, F>,
        cache: &ConvBnCache<F>,
        dy: &Array4<F>,
        need_dx: bool,
    ) -> Option<Array4<F>> {
        let dy = dy.as_standard_layout();
        let dconv = to4(self.bn.backward(&cache.norm, dy.as_slice().expect("standard")), cache.out_dim);
        if need_dx {
            Some(self.conv.backward(x, dconv.view()))
        } else {
            self.conv.backward_weights(x, dconv.view());
            None
        }
    }
}

impl<F: NdFloat> Module<F> for ConvBn<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.conv.visit(&join_path(prefix, "conv"), f);
        self.bn.visit(&join_path(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.conv.visit_mut(&join_path(prefix, "conv"), f);
        self.bn.visit_mut(&join_path(prefix, "bn"), f);
    }
}

/// Two 3x3 conv-BN layers with an identity or projected shortcut.
#[derive(Debug, Clone)]
pub struct BasicBlock<F> {
    pub conv1: ConvBn<F>,
    pub conv2: ConvBn<F>,
    pub shortcut: Option<ConvBn<F>>,
}

#[derive(Debug)]
pub struct BlockCache<F> {
    input: Array4<F>,
    c1: ConvBnCache<F>,
    mid: Array4<F>,
    c2: ConvBnCache<F>,
    sc: Option<ConvBnCache<F>>,
    out: Array4<F>,
}

impl<F: NdFloat> BasicBlock<F> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cin: usize, cout: usize, stride: usize) -> Self {
        let conv1 = ConvBn::new(rng, cin, cout, 3, stride);
        let conv2 = ConvBn::new(rng, cout, cout, 3, 1);
        let shortcut = (cin != cout || stride != 1).then(|| ConvBn::new(rng, cin, cout, 1, stride));
        BasicBlock { conv1, conv2, shortcut }
    }

    pub fn forward(&self, x: ArrayView4<'_, F>) -> Array4<F> {
        let h = self.conv1.forward_fused(x, None, true);
        match &self.shortcut {
            Some(sc) => {
                let s = sc.forward(x);
                self.conv2.forward_fused(h.view(), Some(s.view()), true)
            }
            None => self.conv2.forward_fused(h.view(), Some(x), true),
        }
    }

    pub fn forward_train(&mut self, x: Array4<F>) -> (Array4<F>, BlockCache<F>) {
        let (mut mid, c1) = self.conv1.forward_train(x.view());
        relu_inplace(&mut mid);
        let (mut y, c2) = self.conv2.forward_train(mid.view());
        let sc = match &mut self.shortcut {
            Some(conv) => {
                let (s, cache) = conv.forward_train(x.view());
                y += &s;
                Some(cache)
            }
            None => {
                y += &x;
                None
            }
        };
        relu_inplace(&mut y);
        let cache = BlockCache {
            input: x,
            c1,
            mid,
            c2,
            sc,
            out: y.clone(),
        };
        (y, cache)
    }

    pub fn backward(&mut self, cache: BlockCache<F>, mut dy: Array4<F>, need_dx: bool) -> Option<Array4<F>> {
        relu_backward(&cache.out, &mut dy);
        let mut dmid = self.conv2.backward(cache.mid.view(), &cache.c2, &dy, true).expect("requested");
        relu_backward(&cache.mid, &mut dmid);
        let dx = self.conv1.backward(cache.input.view(), &cache.c1, &dmid, need_dx);
        match (&mut self.shortcut, &cache.sc) {
            (Some(conv), Some(sc)) => {
                let ds = conv.backward(cache.input.view(), sc, &dy, need_dx);
                dx.zip(ds).map(|(a, b)| a + b)
            }
            _ => dx.map(|a| a + dy),
        }
    }

    pub fn first_stats<'a>(&self, cache: &'a BlockCache<F>) -> &'a BatchStats {
        cache.c1.stats()
    }
}

impl<F: NdFloat> Module<F> for BasicBlock<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.conv1.visit(&join_path(prefix, "conv1"), f);
        self.conv2.visit(&join_path(prefix, "conv2"), f);
        if let Some(sc) = &self.shortcut {
            sc.visit(&join_path(prefix, "shortcut"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.conv1.visit_mut(&join_path(prefix, "conv1"), f);
        self.conv2.visit_mut(&join_path(prefix, "conv2"), f);
        if let Some(sc) = &mut self.shortcut {
            sc.visit_mut(&join_path(prefix, "shortcut"), f);
        }
    }
}

/// Shared residual stages. Counts how many times it is run so tests can
/// check that a training step pushes everything through in one batch.
#[derive(Debug)]
pub struct Backbone<F> {
    pub blocks: Vec<BasicBlock<F>>,
    calls: AtomicUsize,
}

impl<F: Clone> Clone for Backbone<F> {
    fn clone(&self) -> Self {
        Backbone {
            blocks: self.blocks.clone(),
            calls: AtomicUsize::new(0),
        }
    }
}

#[derive(Debug)]
pub struct BackboneCache<F> {
    blocks: Vec<BlockCache<F>>,
}

impl<F> BackboneCache<F> {
    /// Batch statistics of the first normalization layer.
    pub fn first_stats(&self) -> &BatchStats {
        self.blocks[0].c1.stats()
    }
}

impl<F: NdFloat> Backbone<F> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        cin: usize,
        widths: &[usize],
        strides: &[usize],
        blocks_per_stage: usize,
    ) -> Self {
        let mut blocks = Vec::new();
        let mut c = cin;
        for (&w, &s) in widths.iter().zip(strides) {
            for b in 0..blocks_per_stage {
                blocks.push(BasicBlock::new(rng, c, w, if b == 0 { s } else { 1 }));
                c = w;
            }
        }
        Backbone {
            blocks,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn forward(&self, x: ArrayView4<'_, F>) -> Array4<F> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut h = self.blocks[0].forward(x);
        for b in &self.blocks[1..] {
            h = b.forward(h.view());
        }
        h
    }

    pub fn forward_train(&mut self, x: Array4<F>) -> (Array4<F>, BackboneCache<F>) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for b in &mut self.blocks {
            let (y, c) = b.forward_train(h);
            caches.push(c);
            h = y;
        }
        (h, BackboneCache { blocks: caches })
    }

    pub fn backward(&mut self, cache: BackboneCache<F>, dy: Array4<F>) -> Array4<F> {
        let mut g = dy;
        for (b, c) in self.blocks.iter_mut().zip(cache.blocks).rev() {
            g = b.backward(c, g, true).expect("requested");
        }
        g
    }
}

impl<F: NdFloat> Module<F> for Backbone<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join_path(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join_path(prefix, &i.to_string()), f);
        }
    }
}

/// Modality-specific stem: one conv-BN-ReLU layer. Counts reads so tests
/// can check that a forward pass only touches the encoders it needs.
#[derive(Debug)]
pub struct Encoder<F> {
    pub layer: ConvBn<F>,
    reads: AtomicUsize,
}

impl<F: Clone> Clone for Encoder<F> {
    fn clone(&self) -> Self {
        Encoder {
            layer: self.layer.clone(),
            reads: AtomicUsize::new(0),
        }
    }
}

#[derive(Debug)]
pub struct EncoderCache<F> {
    input: Array4<F>,
    layer: ConvBnCache<F>,
    out: Array4<F>,
}

impl<F: NdFloat> Encoder<F> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cin: usize, cout: usize, stride: usize) -> Self {
        Encoder {
            layer: ConvBn::new(rng, cin, cout, 3, stride),
            reads: AtomicUsize::new(0),
        }
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn reset_reads(&self) {
        self.reads.store(0, Ordering::Relaxed);
    }

    pub fn forward(&self, x: ArrayView4<'_, F>) -> Array4<F> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.layer.forward_fused(x, None, true)
    }

    pub fn forward_train(&mut self, x: Array4<F>) -> (Array4<F>, EncoderCache<F>) {
        self.reads.fetch_add(1, Ordering::Relaxed);
        let (mut y, layer) = self.layer.forward_train(x.view());
        relu_inplace(&mut y);
        let cache = EncoderCache {
            input: x,
            layer,
            out: y.clone(),
        };
        (y, cache)
    }

    pub fn backward(&mut self, cache: EncoderCache<F>, mut dy: Array4<F>) {
        self.reads.fetch_add(1, Ordering::Relaxed);
        relu_backward(&cache.out, &mut dy);
        self.layer.backward(cache.input.view(), &cache.layer, &dy, false);
    }
}

impl<F: NdFloat> Module<F> for Encoder<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.layer.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.layer.visit_mut(prefix, f);
    }
}
