//! F(2x2, 3x3) Winograd convolution for 3x3, stride 1, padding 1.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, NdFloat};

/// Transformed-tile values held per chunk, summed over both sides.
const TILE_BUDGET: usize = 1 << 23;

/// `G g G^T` for every `(co, ci)` kernel; laid out `[16][co][ci]`.
fn transform_weights<F: NdFloat>(w: &[F], co: usize, ci: usize) -> Vec<F> {
    let half = F::from(0.5).unwrap();
    let mut u = vec![F::zero(); 16 * co * ci];
    for o in 0..co {
        for i in 0..ci {
            let g = &w[(o * ci + i) * 9..(o * ci + i + 1) * 9];
            // rows: G g
            let mut t = [[F::zero(); 3]; 4];
            for c in 0..3 {
                let (a, b, d) = (g[c], g[3 + c], g[6 + c]);
                t[0][c] = a;
                t[1][c] = (a + b + d) * half;
                t[2][c] = (a - b + d) * half;
                t[3][c] = d;
            }
            for (r, row) in t.iter().enumerate() {
                let (a, b, d) = (row[0], row[1], row[2]);
                let vals = [a, (a + b + d) * half, (a - b + d) * half, d];
                for (c, v) in vals.into_iter().enumerate() {
                    u[((r * 4 + c) * co + o) * ci + i] = v;
                }
            }
        }
    }
    u
}

/// `A^T m A` of a transformed tile.
#[inline]
fn output_tile<F: NdFloat>(m: &[F; 16]) -> [[F; 2]; 2] {
    let mut t = [[F::zero(); 4]; 2];
    for c in 0..4 {
        t[0][c] = m[c] + m[4 + c] + m[8 + c];
        t[1][c] = m[4 + c] - m[8 + c] - m[12 + c];
    }
    let mut y = [[F::zero(); 2]; 2];
    for r in 0..2 {
        y[r][0] = t[r][0] + t[r][1] + t[r][2];
        y[r][1] = t[r][1] - t[r][2] - t[r][3];
    }
    y
}

/// Convolves `n` images of `c x h x w` with `[co, c, 3, 3]` weights. For
/// every image and output channel the finished `h x w` plane is passed to
/// `emit(image, channel, plane)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3<F: NdFloat>(
    x: &[F],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[F],
    co: usize,
    mut emit: impl FnMut(usize, usize, &[F]),
) {
    let th = h.div_ceil(2);
    let tw = w.div_ceil(2);
    let tiles = th * tw;
    let per_image = 16 * tiles * (c + co);
    let chunk = (TILE_BUDGET / per_image).clamp(1, n.max(1));
    let cols_max = chunk * tiles;
    let u = transform_weights(weight, co, c);
    let mut v = vec![F::zero(); 16 * c * cols_max];
    let mut m = vec![F::zero(); 16 * co * cols_max];
    let mut plane = vec![F::zero(); h * w];
    // one zero column on the left, at least one on the right
    let pw = 2 * tw + 2;
    let mut rows = vec![F::zero(); 4 * pw];
    let mut cmb = vec![F::zero(); 4 * pw];

    for start in (0..n).step_by(chunk) {
        let nb = chunk.min(n - start);
        let cols = nb * tiles;
        for j in 0..nb {
            for ci in 0..c {
                let img = &x[((start + j) * c + ci) * h * w..((start + j) * c + ci + 1) * h * w];
                for ty in 0..th {
                    // four padded input rows, already combined down the columns
                    for (r, row) in rows.chunks_exact_mut(pw).enumerate() {
                        let iy = (2 * ty + r) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            row.fill(F::zero());
                        } else {
                            row[1..=w].copy_from_slice(&img[iy as usize * w..(iy as usize + 1) * w]);
                        }
                    }
                    let (r0, rest) = rows.split_at(pw);
                    let (r1, rest) = rest.split_at(pw);
                    let (r2, r3) = rest.split_at(pw);
                    for q in 0..pw {
                        cmb[q] = r0[q] - r2[q];
                        cmb[pw + q] = r1[q] + r2[q];
                        cmb[2 * pw + q] = r2[q] - r1[q];
                        cmb[3 * pw + q] = r1[q] - r3[q];
                    }
                    let base = ci * cols_max + j * tiles + ty * tw;
                    for r in 0..4 {
                        let t = &cmb[r * pw..(r + 1) * pw];
                        let o0 = (r * 4 * c) * cols_max + base;
                        let step = c * cols_max;
                        for tx in 0..tw {
                            let d = &t[2 * tx..2 * tx + 4];
                            v[o0 + tx] = d[0] - d[2];
                            v[o0 + step + tx] = d[1] + d[2];
                            v[o0 + 2 * step + tx] = d[2] - d[1];
                            v[o0 + 3 * step + tx] = d[1] - d[3];
                        }
                    }
                }
            }
        }
        for xi in 0..16 {
            let uxi = ArrayView2::from_shape((co, c), &u[xi * co * c..(xi + 1) * co * c]).expect("shape");
            let vxi = ArrayView2::from_shape((c, cols_max), &v[xi * c * cols_max..(xi + 1) * c * cols_max])
                .expect("shape");
            let mut mxi = ArrayViewMut2::from_shape((co, cols_max), &mut m[xi * co * cols_max..(xi + 1) * co * cols_max])
                .expect("shape");
            general_mat_mul(
                F::one(),
                &uxi,
                &vxi.slice(ndarray::s![.., ..cols]),
                F::zero(),
                &mut mxi.slice_mut(ndarray::s![.., ..cols]),
            );
        }
        for j in 0..nb {
            for o in 0..co {
                for ty in 0..th {
                    for tx in 0..tw {
                        let col = j * tiles + ty * tw + tx;
                        let mut mt = [F::zero(); 16];
                        for (xi, val) in mt.iter_mut().enumerate() {
                            *val = m[(xi * co + o) * cols_max + col];
                        }
                        let y = output_tile(&mt);
                        for (r, yr) in y.iter().enumerate() {
                            let oy = 2 * ty + r;
                            if oy >= h {
                                continue;
                            }
                            for (q, &val) in yr.iter().enumerate() {
                                let ox = 2 * tx + q;
                                if ox < w {
                                    plane[oy * w + ox] = val;
                                }
                            }
                        }
                    }
                }
                emit(start + j, o, &plane);
            }
        }
    }
}
