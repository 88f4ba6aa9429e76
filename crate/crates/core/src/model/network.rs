use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array3, Array4, Array5, ArrayView4, ArrayView5, Axis, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Variant};
use super::fusion::{Fusion, FusionCache};
use super::head::{Head, HeadCache, HeadOutput};
use super::layers::{Backbone, BackboneCache, Encoder, EncoderCache};
use super::pooling::{hpp, hpp_backward, temporal_pool, temporal_pool_backward, HppCache, TemporalCache};
use super::ModelError;
use crate::dataset::{Modality, FRAME_SIZE};
use crate::nn::{join_path, Module, Param};

/// One branch of a joint training batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stream {
    Single(Modality),
    /// Anchor first; the order is the channel-concatenation order.
    Pair(Modality, Modality),
}

impl Stream {
    pub fn modalities(&self) -> Vec<Modality> {
        match *self {
            Stream::Single(m) => vec![m],
            Stream::Pair(a, b) => vec![a, b],
        }
    }

    pub fn name(&self) -> String {
        match self {
            Stream::Single(m) => m.tag().to_string(),
            Stream::Pair(a, b) => format!("{}+{}", a.tag(), b.tag()),
        }
    }
}

/// Clips of every modality a training step needs, `[B, T, C, 64, 64]`
/// each, index-aligned by sample.
#[derive(Debug, Clone)]
pub struct TrainBatch<F> {
    pub inputs: BTreeMap<Modality, Array5<F>>,
    pub streams: Vec<Stream>,
}

impl<F> TrainBatch<F> {
    pub fn batch_size(&self) -> usize {
        self.inputs.values().next().map_or(0, |x| x.dim().0)
    }
}

/// Head outputs of all streams, stacked stream-major: rows
/// `s * B .. (s + 1) * B` belong to `streams[s]`.
#[derive(Debug, Clone)]
pub struct TrainOutput<F> {
    pub streams: Vec<Stream>,
    pub batch: usize,
    pub head: HeadOutput<F>,
}

impl<F: NdFloat> TrainOutput<F> {
    pub fn rows(&self, stream: usize) -> std::ops::Range<usize> {
        stream * self.batch..(stream + 1) * self.batch
    }
}

#[derive(Debug)]
pub struct TrainCache<F> {
    streams: Vec<Stream>,
    batch: usize,
    frames: usize,
    encoders: BTreeMap<Modality, EncoderCache<F>>,
    fusion: Option<FusionCache<F>>,
    backbone: BackboneCache<F>,
    temporal: TemporalCache,
    hpp: HppCache,
    head: HeadCache<F>,
}

impl<F> TrainCache<F> {
    pub fn backbone(&self) -> &BackboneCache<F> {
        &self.backbone
    }
}

/// Modality-specific encoders, one shared fusion module, a shared residual
/// backbone and a part-based head.
///
/// Evaluation-mode methods take `&self` and never touch normalization
/// statistics; training goes through [`forward_train`](Self::forward_train)
/// and [`backward`](Self::backward).
#[derive(Debug, Clone)]
pub struct OmniGait<F = f32> {
    config: ModelConfig,
    pub encoders: BTreeMap<Modality, Encoder<F>>,
    pub fusion: Option<Fusion<F>>,
    pub backbone: Backbone<F>,
    pub head: Head<F>,
}

fn shape5<F>(x: &ArrayView5<'_, F>) -> Vec<usize> {
    x.shape().to_vec()
}

fn flatten<F: NdFloat>(x: ArrayView5<'_, F>) -> Array4<F> {
    let (b, t, c, h, w) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * t, c, h, w))
        .expect("contiguous")
}

fn unflatten<F: NdFloat>(x: Array4<F>, frames: usize) -> Array5<F> {
    let (n, c, h, w) = x.dim();
    x.into_shape_with_order((n / frames, frames, c, h, w)).expect("contiguous")
}

impl<F: NdFloat> OmniGait<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c1 = config.encoder_channels;
        let mut mods = config.modalities.clone();
        mods.sort();
        let encoders = mods
            .iter()
            .map(|&m| {
                let cin = m.channels().expect("validated");
                (m, Encoder::new(&mut rng, cin, c1, config.encoder_stride))
            })
            .collect();
        let fusion = (config.variant == Variant::Omni).then(|| Fusion::new(&mut rng, c1, config.gate_hidden));
        let backbone = Backbone::new(
            &mut rng,
            c1,
            &config.stage_channels,
            &config.stage_strides,
            config.blocks_per_stage,
        );
        let head = Head::new(
            &mut rng,
            config.backbone_channels(),
            config.embed_dim,
            config.parts,
            config.num_classes,
        );
        Ok(OmniGait {
            config,
            encoders,
            fusion,
            backbone,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self, m: Modality) -> Result<&Encoder<F>, ModelError> {
        if !m.is_image() {
            return Err(ModelError::UnsupportedModality(m));
        }
        self.encoders.get(&m).ok_or(ModelError::UnknownModality(m))
    }

    /// The shared part of the network a stream of modality `m` runs through.
    pub fn stream_backbone(&self, m: Modality) -> Result<&Backbone<F>, ModelError> {
        self.encoder(m)?;
        Ok(&self.backbone)
    }

    pub fn fusion(&self) -> Result<&Fusion<F>, ModelError> {
        self.fusion.as_ref().ok_or(ModelError::WrongVariant { expected: Variant::Omni })
    }

    fn check_clip(&self, m: Modality, x: &ArrayView5<'_, F>) -> Result<(), ModelError> {
        self.encoder(m)?;
        let (b, t, c, h, w) = x.dim();
        if b == 0 || t == 0 {
            return Err(ModelError::EmptyInput);
        }
        let want = m.channels().expect("image modality");
        if c != want || h != FRAME_SIZE || w != FRAME_SIZE {
            return Err(ModelError::ShapeMismatch {
                what: format!("{m} clip"),
                expected: vec![b, t, want, FRAME_SIZE, FRAME_SIZE],
                got: shape5(x),
            });
        }
        Ok(())
    }

    fn check_feature(&self, x: &ArrayView5<'_, F>) -> Result<(), ModelError> {
        let (b, t, c, h, w) = x.dim();
        if b == 0 || t == 0 {
            return Err(ModelError::EmptyInput);
        }
        let hw = self.config.encoder_hw();
        let c1 = self.config.encoder_channels;
        if c != c1 || h != hw || w != hw {
            return Err(ModelError::ShapeMismatch {
                what: "encoder feature".into(),
                expected: vec![b, t, c1, hw, hw],
                got: shape5(x),
            });
        }
        Ok(())
    }

    /// `[B, T, C, 64, 64]` to `[B, T, C1, H1, W1]` through modality `m`'s
    /// own encoder.
    pub fn encode(&self, m: Modality, x: ArrayView5<'_, F>) -> Result<Array5<F>, ModelError> {
        self.check_clip(m, &x)?;
        let t = x.dim().1;
        let enc = self.encoder(m)?;
        Ok(unflatten(enc.forward(flatten(x).view()), t))
    }

    pub fn gate_weights(&self, mixed: ArrayView5<'_, F>) -> Result<ndarray::Array2<F>, ModelError> {
        self.check_feature(&mixed)?;
        let t = mixed.dim().1;
        Ok(self.fusion()?.gate_weights(flatten(mixed).view(), t))
    }

    pub fn fuse(&self, fi: ArrayView5<'_, F>, fj: ArrayView5<'_, F>) -> Result<Array5<F>, ModelError> {
        self.check_feature(&fi)?;
        self.check_feature(&fj)?;
        if fi.dim() != fj.dim() {
            return Err(ModelError::ShapeMismatch {
                what: "fusion partner".into(),
                expected: shape5(&fi),
                got: shape5(&fj),
            });
        }
        let t = fi.dim().1;
        let out = self.fusion()?.forward(flatten(fi).view(), flatten(fj).view(), t);
        Ok(unflatten(out, t))
    }

    /// Runs every feature through the backbone as one batch.
    pub fn shared_forward(&self, features: &[ArrayView5<'_, F>]) -> Result<Vec<Array5<F>>, ModelError> {
        if features.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        for f in features {
            self.check_feature(f)?;
        }
        let flat: Vec<Array4<F>> = features.iter().map(|f| flatten(f.view())).collect();
        let views: Vec<ArrayView4<'_, F>> = flat.iter().map(|f| f.view()).collect();
        let joint = concatenate(Axis(0), &views).expect("validated shapes");
        let y = self.backbone.forward(joint.view());
        let mut out = Vec::with_capacity(features.len());
        let mut start = 0;
        for f in features {
            let (b, t, ..) = f.dim();
            out.push(unflatten(y.slice(s![start..start + b * t, .., .., ..]).to_owned(), t));
            start += b * t;
        }
        Ok(out)
    }

    /// Temporal pooling, HPP and head on backbone output `[B, T, C2, H2, W2]`.
    pub fn pool_and_head(&self, x: ArrayView5<'_, F>) -> Result<HeadOutput<F>, ModelError> {
        let (b, t, ..) = x.dim();
        let (pooled, _) = temporal_pool(flatten(x).view(), &vec![t; b]);
        let (parts, _) = hpp(pooled.view(), self.config.parts)?;
        Ok(self.head.forward(parts.view()))
    }

    pub fn forward_single(&self, m: Modality, x: ArrayView5<'_, F>) -> Result<HeadOutput<F>, ModelError> {
        let f = self.encode(m, x)?;
        let y = self.shared_forward(&[f.view()])?.pop().expect("one output");
        self.pool_and_head(y.view())
    }

    pub fn forward_pair(
        &self,
        i: Modality,
        xi: ArrayView5<'_, F>,
        j: Modality,
        xj: ArrayView5<'_, F>,
    ) -> Result<HeadOutput<F>, ModelError> {
        if i == j {
            return Err(ModelError::SameModalityPair(i));
        }
        self.fusion()?;
        let fi = self.encode(i, xi)?;
        let fj = self.encode(j, xj)?;
        let fused = self.fuse(fi.view(), fj.view())?;
        let y = self.shared_forward(&[fused.view()])?.pop().expect("one output");
        self.pool_and_head(y.view())
    }

    pub fn two_stream_forward(
        &self,
        m1: Modality,
        x1: ArrayView5<'_, F>,
        m2: Modality,
        x2: ArrayView5<'_, F>,
    ) -> Result<(HeadOutput<F>, HeadOutput<F>), ModelError> {
        if self.config.variant != Variant::TwoStream {
            return Err(ModelError::WrongVariant {
                expected: Variant::TwoStream,
            });
        }
        let f1 = self.encode(m1, x1)?;
        let f2 = self.encode(m2, x2)?;
        let mut ys = self.shared_forward(&[f1.view(), f2.view()])?;
        let y2 = ys.pop().expect("two outputs");
        let y1 = ys.pop().expect("two outputs");
        Ok((self.pool_and_head(y1.view())?, self.pool_and_head(y2.view())?))
    }

    fn check_batch(&self, batch: &TrainBatch<F>) -> Result<(usize, usize), ModelError> {
        if batch.streams.is_empty() || batch.inputs.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let first = batch.inputs.values().next().expect("non-empty");
        let (b, t, ..) = first.dim();
        for (&m, x) in &batch.inputs {
            self.check_clip(m, &x.view())?;
            if x.dim().0 != b || x.dim().1 != t {
                return Err(ModelError::ShapeMismatch {
                    what: format!("{m} batch"),
                    expected: vec![b, t],
                    got: x.shape()[..2].to_vec(),
                });
            }
        }
        for s in &batch.streams {
            if let Stream::Pair(a, c) = *s {
                if a == c {
                    return Err(ModelError::SameModalityPair(a));
                }
                self.fusion()?;
            }
            for m in s.modalities() {
                if !batch.inputs.contains_key(&m) {
                    return Err(ModelError::UnknownModality(m));
                }
            }
        }
        Ok((b, t))
    }

    /// Training-mode forward of every stream through one joint backbone
    /// batch. Normalization layers use and update batch statistics.
    pub fn forward_train(&mut self, batch: &TrainBatch<F>) -> Result<(TrainOutput<F>, TrainCache<F>), ModelError> {
        let (b, t) = self.check_batch(batch)?;
        let mut needed: Vec<Modality> = batch.streams.iter().flat_map(|s| s.modalities()).collect();
        needed.sort();
        needed.dedup();

        let mut feats = BTreeMap::new();
        let mut enc_caches = BTreeMap::new();
        for m in needed {
            let enc = self.encoders.get_mut(&m).expect("checked");
            let (f, c) = enc.forward_train(flatten(batch.inputs[&m].view()));
            feats.insert(m, f);
            enc_caches.insert(m, c);
        }

        let pairs: Vec<(Modality, Modality)> = batch
            .streams
            .iter()
            .filter_map(|s| match *s {
                Stream::Pair(a, c) => Some((a, c)),
                Stream::Single(_) => None,
            })
            .collect();
        let (fused, fusion_cache) = if pairs.is_empty() {
            (None, None)
        } else {
            let fi: Vec<ArrayView4<'_, F>> = pairs.iter().map(|(a, _)| feats[a].view()).collect();
            let fj: Vec<ArrayView4<'_, F>> = pairs.iter().map(|(_, c)| feats[c].view()).collect();
            let fi = concatenate(Axis(0), &fi).expect("aligned");
            let fj = concatenate(Axis(0), &fj).expect("aligned");
            let (y, c) = self.fusion.as_ref().expect("checked").forward_cached(fi, fj, t);
            (Some(y), Some(c))
        };

        let mut parts_in: Vec<ArrayView4<'_, F>> = Vec::with_capacity(batch.streams.len());
        let mut k = 0;
        for s in &batch.streams {
            match s {
                Stream::Single(m) => parts_in.push(feats[m].view()),
                Stream::Pair(..) => {
                    let rows = k * b * t..(k + 1) * b * t;
                    parts_in.push(fused.as_ref().expect("pairs present").slice(s![rows, .., .., ..]));
                    k += 1;
                }
            }
        }
        let joint = concatenate(Axis(0), &parts_in).expect("aligned");
        drop(parts_in);
        drop(fused);
        drop(feats);

        let (y, bb_cache) = self.backbone.forward_train(joint);
        let n_seq = batch.streams.len() * b;
        let (pooled, tp_cache) = temporal_pool(y.view(), &vec![t; n_seq]);
        drop(y);
        let (parts, hpp_cache) = hpp(pooled.view(), self.config.parts)?;
        let (head, head_cache) = self.head.forward_train(parts);

        let out = TrainOutput {
            streams: batch.streams.clone(),
            batch: b,
            head,
        };
        let cache = TrainCache {
            streams: batch.streams.clone(),
            batch: b,
            frames: t,
            encoders: enc_caches,
            fusion: fusion_cache,
            backbone: bb_cache,
            temporal: tp_cache,
            hpp: hpp_cache,
            head: head_cache,
        };
        Ok((out, cache))
    }

    /// Accumulates gradients of a loss with the given partials w.r.t. the
    /// stacked pre-BNNeck features and logits.
    pub fn backward(&mut self, cache: TrainCache<F>, d_pre: &Array3<F>, d_logits: &Array3<F>) {
        let (b, t) = (cache.batch, cache.frames);
        let d_parts = self.head.backward(cache.head, d_pre, d_logits);
        let d_pooled = hpp_backward(&cache.hpp, &d_parts);
        let d_y = temporal_pool_backward(&cache.temporal, &d_pooled);
        let d_joint = self.backbone.backward(cache.backbone, d_y);

        let rows = b * t;
        let mut d_feat: BTreeMap<Modality, Array4<F>> = BTreeMap::new();
        let mut add = |m: Modality, g: ArrayView4<'_, F>| match d_feat.get_mut(&m) {
            Some(acc) => *acc += &g,
            None => {
                d_feat.insert(m, g.to_owned());
            }
        };
        let mut d_fused = Vec::new();
        for (si, s) in cache.streams.iter().enumerate() {
            let g = d_joint.slice(s![si * rows..(si + 1) * rows, .., .., ..]);
            match *s {
                Stream::Single(m) => add(m, g),
                Stream::Pair(..) => d_fused.push(g),
            }
        }
        if let Some(fc) = cache.fusion {
            let pairs: Vec<(Modality, Modality)> = cache
                .streams
                .iter()
                .filter_map(|s| match *s {
                    Stream::Pair(a, c) => Some((a, c)),
                    Stream::Single(_) => None,
                })
                .collect();
            let d_out = concatenate(Axis(0), &d_fused).expect("aligned");
            let (dfi, dfj) = self.fusion.as_mut().expect("pairs need fusion").backward(fc, &d_out);
            for (k, (a, c)) in pairs.into_iter().enumerate() {
                add(a, dfi.slice(s![k * rows..(k + 1) * rows, .., .., ..]));
                add(c, dfj.slice(s![k * rows..(k + 1) * rows, .., .., ..]));
            }
        }
        for (m, c) in cache.encoders {
            let g = d_feat.remove(&m).expect("every encoded modality feeds a stream");
            self.encoders.get_mut(&m).expect("cached").backward(c, g);
        }
    }

    pub fn reset_counters(&self) {
        self.backbone.reset_calls();
        for e in self.encoders.values() {
            e.reset_reads();
        }
    }
}

impl<F: NdFloat> Module<F> for OmniGait<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        for (m, e) in &self.encoders {
            e.visit(&join_path(prefix, &format!("encoders.{}", m.tag())), f);
        }
        if let Some(fu) = &self.fusion {
            fu.visit(&join_path(prefix, "fusion"), f);
        }
        self.backbone.visit(&join_path(prefix, "backbone"), f);
        self.head.visit(&join_path(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        for (m, e) in &mut self.encoders {
            e.visit_mut(&join_path(prefix, &format!("encoders.{}", m.tag())), f);
        }
        if let Some(fu) = &mut self.fusion {
            fu.visit_mut(&join_path(prefix, "fusion"), f);
        }
        self.backbone.visit_mut(&join_path(prefix, "backbone"), f);
        self.head.visit_mut(&join_path(prefix, "head"), f);
    }
}
