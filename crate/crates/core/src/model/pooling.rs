use ndarray::{s, Array3, Array4, ArrayView4, NdFloat};

use super::ModelError;

/// Arg-max bookkeeping of [`temporal_pool`].
#[derive(Debug, Clone)]
pub struct TemporalCache {
    /// Frame row in the input for every output element.
    argmax: Vec<u32>,
    input_dim: (usize, usize, usize, usize),
}

/// Element-wise maximum over the frames of each sequence.
///
/// `x` stacks the frames of consecutive sequences, `[sum(lengths), C, H, W]`;
/// the result is `[lengths.len(), C, H, W]`. Ties go to the earliest frame.
pub fn temporal_pool<F: NdFloat>(x: ArrayView4<'_, F>, lengths: &[usize]) -> (Array4<F>, TemporalCache) {
    let (n, c, h, w) = x.dim();
    assert_eq!(lengths.iter().sum::<usize>(), n, "sequence lengths do not cover the batch");
    assert!(lengths.iter().all(|&t| t > 0), "empty sequence");
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let frame = c * h * w;
    let mut out = Array4::<F>::zeros((lengths.len(), c, h, w));
    let mut argmax = vec![0u32; lengths.len() * frame];
    let mut start = 0;
    {
        let os = out.as_slice_mut().expect("fresh");
        for (b, &t) in lengths.iter().enumerate() {
            let dst = &mut os[b * frame..(b + 1) * frame];
            let idx = &mut argmax[b * frame..(b + 1) * frame];
            dst.copy_from_slice(&xs[start * frame..(start + 1) * frame]);
            idx.fill(start as u32);
            for r in start + 1..start + t {
                for (&v, (d, ix)) in xs[r * frame..(r + 1) * frame].iter().zip(dst.iter_mut().zip(idx.iter_mut())) {
                    if v > *d {
                        *d = v;
                        *ix = r as u32;
                    }
                }
            }
            start += t;
        }
    }
    (
        out,
        TemporalCache {
            argmax,
            input_dim: (n, c, h, w),
        },
    )
}

pub fn temporal_pool_backward<F: NdFloat>(cache: &TemporalCache, dy: &Array4<F>) -> Array4<F> {
    let (n, c, h, w) = cache.input_dim;
    let frame = c * h * w;
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    let ds = dx.as_slice_mut().expect("fresh");
    let dy = dy.as_standard_layout();
    for (i, (&g, &r)) in dy.iter().zip(&cache.argmax).enumerate() {
        ds[r as usize * frame + i % frame] += g;
    }
    dx
}

#[derive(Debug, Clone)]
pub struct HppCache {
    /// Flat spatial index of the maximum of every (sample, channel, strip).
    argmax: Vec<u32>,
    input_dim: (usize, usize, usize, usize),
    parts: usize,
}

/// Horizontal strip pooling: `[B, C, H, W]` to `[B, C, P]`, each strip
/// reduced by mean plus max.
pub fn hpp<F: NdFloat>(x: ArrayView4<'_, F>, parts: usize) -> Result<(Array3<F>, HppCache), ModelError> {
    let (b, c, h, w) = x.dim();
    if parts == 0 || h % parts != 0 {
        return Err(ModelError::IndivisibleHeight { height: h, parts });
    }
    let rows = h / parts;
    let count = F::from(rows * w).unwrap();
    let mut out = Array3::<F>::zeros((b, c, parts));
    let mut argmax = Vec::with_capacity(b * c * parts);
    for bi in 0..b {
        for ci in 0..c {
            for p in 0..parts {
                let strip = x.slice(s![bi, ci, p * rows..(p + 1) * rows, ..]);
                let mut best = F::neg_infinity();
                let mut at = 0usize;
                let mut sum = F::zero();
                for ((r, col), &v) in strip.indexed_iter() {
                    sum += v;
                    if v > best {
                        best = v;
                        at = (p * rows + r) * w + col;
                    }
                }
                out[(bi, ci, p)] = sum / count + best;
                argmax.push(at as u32);
            }
        }
    }
    Ok((
        out,
        HppCache {
            argmax,
            input_dim: (b, c, h, w),
            parts,
        },
    ))
}

pub fn hpp_backward<F: NdFloat>(cache: &HppCache, dy: &Array3<F>) -> Array4<F> {
    let (b, c, h, w) = cache.input_dim;
    let parts = cache.parts;
    let rows = h / parts;
    let count = F::from(rows * w).unwrap();
    let mut dx = Array4::<F>::zeros((b, c, h, w));
    let mut k = 0;
    for bi in 0..b {
        for ci in 0..c {
            for p in 0..parts {
                let g = dy[(bi, ci, p)];
                dx.slice_mut(s![bi, ci, p * rows..(p + 1) * rows, ..])
                    .mapv_inplace(|v| v + g / count);
                let at = cache.argmax[k] as usize;
                dx[(bi, ci, at / w, at % w)] += g;
                k += 1;
            }
        }
    }
    dx
}
