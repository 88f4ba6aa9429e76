use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayView4, NdFloat};
use rand::Rng;

use super::init::he_normal;
use super::winograd;
use super::param::{join_path, Module, Param};

/// Target number of im2col columns per GEMM call; small feature maps are
/// batched across images until they reach roughly this width.
const COLUMN_BUDGET: usize = 4096;

/// 2-D convolution over `N x C x H x W` tensors, square kernel, zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl<F: NdFloat> Conv2d<F> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            weight: Param::new(he_normal(rng, &[out_channels, in_channels, kernel, kernel], fan_in)),
            bias: bias.then(|| Param::zeros(&[out_channels])),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        let p = self.padding;
        (
            (h + 2 * p - k) / self.stride + 1,
            (w + 2 * p - k) / self.stride + 1,
        )
    }

    fn weight_matrix(&self) -> ArrayView2<'_, F> {
        let k = self.in_channels * self.kernel * self.kernel;
        ArrayView2::from_shape((self.out_channels, k), self.weight.values()).expect("weight shape")
    }

    fn images_per_chunk(&self, ho: usize, wo: usize) -> usize {
        (COLUMN_BUDGET / (ho * wo)).max(1)
    }

    pub fn forward(&self, x: ArrayView4<'_, F>) -> Array4<F> {
        match &self.bias {
            Some(b) => {
                let b = b.values();
                self.forward_with(x, |_, co, src, dst| {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = *s + b[co];
                    }
                })
            }
            None => self.forward_with(x, |_, _, src, dst| dst.copy_from_slice(src)),
        }
    }

    /// Convolution whose result rows are written by `epilogue(image,
    /// channel, raw, out)`, so element-wise follow-up ops need no extra pass.
    /// The bias is not applied.
    pub fn forward_with<E>(&self, x: ArrayView4<'_, F>, epilogue: E) -> Array4<F>
    where
        E: Fn(usize, usize, &[F], &mut [F]),
    {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (ho, wo) = self.output_hw(h, w);
        let hw = ho * wo;
        let kdim = c * self.kernel * self.kernel;
        let mut y = Array4::<F>::zeros((n, self.out_channels, ho, wo));
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        if self.kernel == 3 && self.stride == 1 && self.padding == 1 {
            let co = self.out_channels;
            let ys = y.as_slice_mut().expect("fresh array");
            winograd::conv3x3(xs, n, c, h, w, self.weight.values(), co, |img, o, plane| {
                let base = (img * co + o) * hw;
                epilogue(img, o, plane, &mut ys[base..base + hw]);
            });
            return y;
        }
        let wmat = self.weight_matrix();
        let chunk = self.images_per_chunk(ho, wo);
        let mut col = Array2::<F>::zeros((kdim, chunk * hw));
        let mut out = Array2::<F>::zeros((self.out_channels, chunk * hw));
        let ys = y.as_slice_mut().expect("fresh array");
        for start in (0..n).step_by(chunk) {
            let nb = chunk.min(n - start);
            let cols = nb * hw;
            let mut colv = col.slice_mut(ndarray::s![.., ..cols]);
            for j in 0..nb {
                let img = &xs[(start + j) * c * h * w..(start + j + 1) * c * h * w];
                im2col(img, c, h, w, self, ho, wo, &mut colv, j * hw);
            }
            let mut outv = out.slice_mut(ndarray::s![.., ..cols]);
            general_mat_mul(F::one(), &wmat, &colv, F::zero(), &mut outv);
            for j in 0..nb {
                let base = (start + j) * self.out_channels * hw;
                for co in 0..self.out_channels {
                    let dst = &mut ys[base + co * hw..base + (co + 1) * hw];
                    let row = outv.row(co);
                    let src = &row.to_slice().expect("contiguous row")[j * hw..(j + 1) * hw];
                    epilogue(start + j, co, src, dst);
                }
            }
        }
        y
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, x: ArrayView4<'_, F>, dy: ArrayView4<'_, F>) -> Array4<F> {
        self.backward_impl(x, dy, true).expect("input gradient requested")
    }

    /// Accumulates weight/bias gradients only.
    pub fn backward_weights(&mut self, x: ArrayView4<'_, F>, dy: ArrayView4<'_, F>) {
        self.backward_impl(x, dy, false);
    }

    fn backward_impl(&mut self, x: ArrayView4<'_, F>, dy: ArrayView4<'_, F>, need_dx: bool) -> Option<Array4<F>> {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = self.output_hw(h, w);
        assert_eq!(dy.dim(), (n, self.out_channels, ho, wo), "conv grad shape");
        let hw = ho * wo;
        let kdim = c * self.kernel * self.kernel;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("standard layout");
        let mut dx = Array4::<F>::zeros(if need_dx { (n, c, h, w) } else { (0, 0, 0, 0) });
        let chunk = self.images_per_chunk(ho, wo);
        let mut col = Array2::<F>::zeros((kdim, chunk * hw));
        let mut dout = Array2::<F>::zeros((self.out_channels, chunk * hw));
        let mut dcol = Array2::<F>::zeros(if need_dx { (kdim, chunk * hw) } else { (0, 0) });
        let mut dw = Array2::<F>::zeros((self.out_channels, kdim));
        let wmat = self.weight_matrix().to_owned();
        let dxs = dx.as_slice_mut().expect("fresh array");
        for start in (0..n).step_by(chunk) {
            let nb = chunk.min(n - start);
            let cols = nb * hw;
            let mut colv = col.slice_mut(ndarray::s![.., ..cols]);
            let mut doutv = dout.slice_mut(ndarray::s![.., ..cols]);
            for j in 0..nb {
                let img = &xs[(start + j) * c * h * w..(start + j + 1) * c * h * w];
                im2col(img, c, h, w, self, ho, wo, &mut colv, j * hw);
                let base = (start + j) * self.out_channels * hw;
                for co in 0..self.out_channels {
                    let src = &dys[base + co * hw..base + (co + 1) * hw];
                    let mut row = doutv.row_mut(co);
                    row.as_slice_mut().expect("contiguous row")[j * hw..(j + 1) * hw]
                        .copy_from_slice(src);
                }
            }
            general_mat_mul(F::one(), &doutv, &colv.t(), F::one(), &mut dw);
            if let Some(b) = self.bias.as_mut() {
                for (g, row) in b.grads_mut().iter_mut().zip(doutv.rows()) {
                    *g += row.iter().fold(F::zero(), |a, &v| a + v);
                }
            }
            if !need_dx {
                continue;
            }
            let mut dcolv = dcol.slice_mut(ndarray::s![.., ..cols]);
            general_mat_mul(F::one(), &wmat.t(), &doutv, F::zero(), &mut dcolv);
            for j in 0..nb {
                let img = &mut dxs[(start + j) * c * h * w..(start + j + 1) * c * h * w];
                col2im(&mut dcolv, j * hw, c, h, w, self, ho, wo, img);
            }
        }
        for (g, d) in self.weight.grads_mut().iter_mut().zip(dw.iter()) {
            *g += *d;
        }
        need_dx.then_some(dx)
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<F: NdFloat>(
    img: &[F],
    c: usize,
    h: usize,
    w: usize,
    conv: &Conv2d<F>,
    ho: usize,
    wo: usize,
    col: &mut ndarray::ArrayViewMut2<'_, F>,
    offset: usize,
) {
    let k = conv.kernel;
    let s = conv.stride;
    let p = conv.padding as isize;
    let flat = s == 1 && ho == h && wo == w;
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let mut row = col.row_mut((ci * k + ky) * k + kx);
                let row = row.as_slice_mut().expect("rows of a standard array are contiguous");
                let row = &mut row[offset..offset + ho * wo];
                if flat {
                    shifted_copy(plane, row, h, w, ky as isize - p, kx as isize - p);
                    continue;
                }
                let (lo, hi) = valid_range(kx, p, s, w, wo);
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize || lo >= hi {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    dst[..lo].fill(F::zero());
                    dst[hi..].fill(F::zero());
                    let first = lo * s + kx - p as usize;
                    for (d, x) in dst[lo..hi].iter_mut().zip(src[first..].iter().step_by(s)) {
                        *d = *x;
                    }
                }
            }
        }
    }
}

/// `dst[y, x] = src[y + dy, x + dx]`, zero outside the plane. Done as one
/// flat copy; entries that wrapped across a row edge are zeroed afterwards.
fn shifted_copy<F: NdFloat>(src: &[F], dst: &mut [F], h: usize, w: usize, dy: isize, dx: isize) {
    let n = (h * w) as isize;
    let shift = dy * w as isize + dx;
    let lo = (-shift).clamp(0, n) as usize;
    let hi = (n - shift).clamp(0, n) as usize;
    dst[..lo].fill(F::zero());
    dst[hi.max(lo)..].fill(F::zero());
    if lo < hi {
        let start = (lo as isize + shift) as usize;
        dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
    }
    zero_wrapped_columns(dst, h, w, dx);
}

fn zero_wrapped_columns<F: NdFloat>(buf: &mut [F], h: usize, w: usize, dx: isize) {
    let bad = dx.unsigned_abs().min(w);
    if bad == 0 {
        return;
    }
    let cols = if dx < 0 { 0..bad } else { w - bad..w };
    for y in 0..h {
        buf[y * w + cols.start..y * w + cols.end].fill(F::zero());
    }
}

/// Output columns `lo..hi` whose input column `ox * s + kx - p` lies inside
/// `0..w`.
fn valid_range(kx: usize, p: isize, s: usize, w: usize, wo: usize) -> (usize, usize) {
    let off = kx as isize - p;
    let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(s) };
    // largest ox with ox * s + off <= w - 1
    let top = w as isize - 1 - off;
    let hi = if top < 0 { 0 } else { (top as usize / s + 1).min(wo) };
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn col2im<F: NdFloat>(
    col: &mut ndarray::ArrayViewMut2<'_, F>,
    offset: usize,
    c: usize,
    h: usize,
    w: usize,
    conv: &Conv2d<F>,
    ho: usize,
    wo: usize,
    img: &mut [F],
) {
    let k = conv.kernel;
    let s = conv.stride;
    let p = conv.padding as isize;
    let flat = s == 1 && ho == h && wo == w;
    for ci in 0..c {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let mut row = col.row_mut((ci * k + ky) * k + kx);
                let row = row.as_slice_mut().expect("rows of a standard array are contiguous");
                let row = &mut row[offset..offset + ho * wo];
                if flat {
                    // wrapped entries belong to the padding; drop them first
                    let dx = kx as isize - p;
                    zero_wrapped_columns(row, h, w, dx);
                    let n = (h * w) as isize;
                    let shift = (ky as isize - p) * w as isize + dx;
                    let lo = (-shift).clamp(0, n) as usize;
                    let hi = (n - shift).clamp(0, n) as usize;
                    if lo < hi {
                        let start = (lo as isize + shift) as usize;
                        for (d, v) in plane[start..start + hi - lo].iter_mut().zip(&row[lo..hi]) {
                            *d += *v;
                        }
                    }
                    continue;
                }
                let (lo, hi) = valid_range(kx, p, s, w, wo);
                if lo >= hi {
                    continue;
                }
                let first = lo * s + kx - p as usize;
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[oy * wo + lo..oy * wo + hi];
                    for (d, v) in dst[first..].iter_mut().step_by(s).zip(src) {
                        *d += *v;
                    }
                }
            }
        }
    }
}

impl<F: NdFloat> Module<F> for Conv2d<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join_path(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join_path(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join_path(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join_path(prefix, "bias"), b);
        }
    }
}
