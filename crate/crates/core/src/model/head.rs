use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis, NdFloat};
use rand::Rng;

use crate::nn::init::{he_normal, normal};
use crate::nn::{join_path, BatchNorm, Module, NormCache, Param};

/// Per-part embedding, BNNeck and classifier.
///
/// Tensors are laid out `[B, C, P]`. The BNNeck normalizes each of the
/// `C3 * P` features separately. Every part has its own embedding and
/// classifier weights.
#[derive(Debug, Clone)]
pub struct Head<F> {
    /// `[P, C2, C3]`
    pub fc: Param<F>,
    pub bnneck: BatchNorm<F>,
    /// `[P, C3, K]`
    pub classifier: Param<F>,
    pub parts: usize,
}

/// Head outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput<F> {
    /// Pre-BNNeck features `[B, C3, P]` (triplet loss).
    pub pre: Array3<F>,
    /// Post-BNNeck features `[B, C3, P]` (classification and retrieval).
    pub post: Array3<F>,
    /// Per-part class scores `[B, K, P]`.
    pub logits: Array3<F>,
}

#[derive(Debug)]
pub struct HeadCache<F> {
    input: Array3<F>,
    post: Array3<F>,
    norm: NormCache<F>,
}

fn part<F: NdFloat>(x: &Array3<F>, p: usize) -> Array2<F> {
    x.slice(s![.., .., p]).to_owned()
}

impl<F: NdFloat> Head<F> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cin: usize, embed: usize, parts: usize, classes: usize) -> Self {
        Head {
            fc: Param::new(he_normal(rng, &[parts, cin, embed], cin)),
            bnneck: BatchNorm::new(embed * parts),
            classifier: Param::new(normal(rng, &[parts, embed, classes], 1e-3)),
            parts,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.fc.shape()[2]
    }

    fn fc_part(&self, p: usize) -> ArrayView2<'_, F> {
        self.fc.value.index_axis(Axis(0), p).into_dimensionality().expect("fc is 3-d")
    }

    fn classifier_part(&self, p: usize) -> ArrayView2<'_, F> {
        self.classifier.value.index_axis(Axis(0), p).into_dimensionality().expect("classifier is 3-d")
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.shape()[2]
    }

    fn embed(&self, x: ArrayView3<'_, F>) -> Array3<F> {
        let (b, c, p) = x.dim();
        assert_eq!(p, self.parts, "part count");
        assert_eq!(c, self.fc.shape()[1], "head input channels");
        let e = self.embed_dim();
        let mut pre = Array3::<F>::zeros((b, e, p));
        let mut y = Array2::<F>::zeros((b, e));
        for pi in 0..p {
            let xp = x.slice(s![.., .., pi]).to_owned();
            general_mat_mul(F::one(), &xp, &self.fc_part(pi), F::zero(), &mut y);
            pre.slice_mut(s![.., .., pi]).assign(&y);
        }
        pre
    }

    fn classify(&self, post: &Array3<F>) -> Array3<F> {
        let (b, _, p) = post.dim();
        let k = self.num_classes();
        let mut logits = Array3::<F>::zeros((b, k, p));
        let mut y = Array2::<F>::zeros((b, k));
        for pi in 0..p {
            general_mat_mul(F::one(), &part(post, pi), &self.classifier_part(pi), F::zero(), &mut y);
            logits.slice_mut(s![.., .., pi]).assign(&y);
        }
        logits
    }

    fn flat_dims(x: &Array3<F>) -> (usize, usize, usize) {
        let (b, e, p) = x.dim();
        (b, e * p, 1)
    }

    /// Evaluation mode: running statistics only.
    pub fn forward(&self, x: ArrayView3<'_, F>) -> HeadOutput<F> {
        let pre = self.embed(x);
        let post = self.bnneck.forward_eval(pre.as_slice().expect("fresh"), Self::flat_dims(&pre));
        let post = Array3::from_shape_vec(pre.dim(), post).expect("same shape");
        let logits = self.classify(&post);
        HeadOutput { pre, post, logits }
    }

    pub fn forward_train(&mut self, x: Array3<F>) -> (HeadOutput<F>, HeadCache<F>) {
        let pre = self.embed(x.view());
        let (post, norm) = self.bnneck.forward_train(pre.as_slice().expect("fresh"), Self::flat_dims(&pre));
        let post = Array3::from_shape_vec(pre.dim(), post).expect("same shape");
        let logits = self.classify(&post);
        let cache = HeadCache {
            input: x,
            post: post.clone(),
            norm,
        };
        (HeadOutput { pre, post, logits }, cache)
    }

    /// Gradients w.r.t. `pre` and `logits`; returns the input gradient.
    pub fn backward(&mut self, cache: HeadCache<F>, d_pre: &Array3<F>, d_logits: &Array3<F>) -> Array3<F> {
        let (b, e, p) = cache.post.dim();
        let k = self.num_classes();
        let mut d_post = Array3::<F>::zeros((b, e, p));
        let mut gcls = Array2::<F>::zeros((e, k));
        let mut tmp = Array2::<F>::zeros((b, e));
        for pi in 0..p {
            let dl = part(d_logits, pi);
            let post_p = part(&cache.post, pi);
            general_mat_mul(F::one(), &post_p.t(), &dl, F::zero(), &mut gcls);
            let mut g = self.classifier.grad.index_axis_mut(Axis(0), pi);
            g += &gcls;
            general_mat_mul(F::one(), &dl, &self.classifier_part(pi).t(), F::zero(), &mut tmp);
            d_post.slice_mut(s![.., .., pi]).assign(&tmp);
        }

        let d_bn = self.bnneck.backward(&cache.norm, d_post.as_slice().expect("fresh"));
        let mut d_emb = Array3::from_shape_vec((b, e, p), d_bn).expect("same shape");
        d_emb += d_pre;

        let c = cache.input.dim().1;
        let mut dx = Array3::<F>::zeros((b, c, p));
        let mut gfc = Array2::<F>::zeros((c, e));
        let mut dxp = Array2::<F>::zeros((b, c));
        for pi in 0..p {
            let de = part(&d_emb, pi);
            let xp = part(&cache.input, pi);
            general_mat_mul(F::one(), &xp.t(), &de, F::zero(), &mut gfc);
            let mut g = self.fc.grad.index_axis_mut(Axis(0), pi);
            g += &gfc;
            general_mat_mul(F::one(), &de, &self.fc_part(pi).t(), F::zero(), &mut dxp);
            dx.slice_mut(s![.., .., pi]).assign(&dxp);
        }
        dx
    }
}

impl<F: NdFloat> Module<F> for Head<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join_path(prefix, "fc.weight"), &self.fc);
        self.bnneck.visit(&join_path(prefix, "bnneck"), f);
        f(&join_path(prefix, "classifier.weight"), &self.classifier);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join_path(prefix, "fc.weight"), &mut self.fc);
        self.bnneck.visit_mut(&join_path(prefix, "bnneck"), f);
        f(&join_path(prefix, "classifier.weight"), &mut self.classifier);
    }
}

