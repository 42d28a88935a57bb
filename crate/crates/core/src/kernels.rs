//! Slice-level numeric kernels behind the graph operations.
//!
//! Convolutions are lowered to im2col + matrix products. A transposed
//! convolution is the data-gradient of the convolution whose geometry maps its
//! output back onto its input, so both directions share [`ConvGeom`].

use crate::tensor::Float;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Float>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn<T: Float>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_pi * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt<T: Float>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Dot product with eight independent accumulators (fixed summation order).
#[inline]
pub fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Geometry of a square-kernel, zero-padded 2-D convolution over NCHW data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_item(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    fn out_item(&self) -> usize {
        self.out_channels * self.out_h * self.out_w
    }
}

fn im2col<T: Float>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let ncols = g.col_cols();
    for c in 0..g.in_channels {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let ncols = g.col_cols();
    for c in 0..g.in_channels {
        let plane = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward: `y = W ⋆ x (+ b)`. `w` is `[out, in, k, k]`.
pub fn conv_forward<T: Float>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut y = vec![T::zero(); g.batch * g.out_item()];
    for n in 0..g.batch {
        im2col(&x[n * g.in_item()..(n + 1) * g.in_item()], g, &mut cols);
        let yn = &mut y[n * g.out_item()..(n + 1) * g.out_item()];
        if let Some(b) = bias {
            for (o, chunk) in yn.chunks_mut(ncols).enumerate() {
                chunk.fill(b[o]);
            }
        }
        gemm_nn(g.out_channels, ncols, rows, w, &cols, yn);
    }
    y
}

/// Adjoint of [`conv_forward`] w.r.t. its input: maps `[batch, out, oh, ow]`
/// data back to `[batch, in, h, w]`. This is also transposed convolution.
pub fn conv_backward_data<T: Float>(gy: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut gx = vec![T::zero(); g.batch * g.in_item()];
    for n in 0..g.batch {
        cols.fill(T::zero());
        let gyn = &gy[n * g.out_item()..(n + 1) * g.out_item()];
        gemm_tn(rows, ncols, g.out_channels, w, gyn, &mut cols);
        col2im(&cols, g, &mut gx[n * g.in_item()..(n + 1) * g.in_item()]);
    }
    gx
}

/// Kernel gradient `Σₙ gyₙ · im2col(xₙ)ᵀ`, shaped `[out, in, k, k]`.
pub fn conv_backward_kernel<T: Float>(x: &[T], gy: &[T], g: &ConvGeom) -> Vec<T> {
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut gw = vec![T::zero(); g.out_channels * rows];
    for n in 0..g.batch {
        im2col(&x[n * g.in_item()..(n + 1) * g.in_item()], g, &mut cols);
        let gyn = &gy[n * g.out_item()..(n + 1) * g.out_item()];
        gemm_nt(g.out_channels, rows, ncols, gyn, &cols, &mut gw);
    }
    gw
}

/// Per-channel sum over batch and space of `[batch, channels, plane]` data.
pub fn channel_sums<T: Float>(gy: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels];
    for n in 0..batch {
        for (c, o) in out.iter_mut().enumerate() {
            let start = (n * channels + c) * plane;
            *o += gy[start..start + plane].iter().copied().sum::<T>();
        }
    }
    out
}

pub fn upsample_nearest<T: Float>(x: &[T], planes: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h * f, w * f);
    let mut y = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut y[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let row = &src[(oy / f) * w..(oy / f + 1) * w];
            for (ox, v) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *v = row[ox / f];
            }
        }
    }
    y
}

/// Sums each `f×f` block; the adjoint of nearest upsampling.
pub fn block_sum<T: Float>(x: &[T], planes: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h / f, w / f);
    let mut y = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut y[p * oh * ow..(p + 1) * oh * ow];
        for iy in 0..h {
            let line = &src[iy * w..(iy + 1) * w];
            let out = &mut dst[(iy / f) * ow..(iy / f + 1) * ow];
            for (ix, &v) in line.iter().enumerate() {
                out[ix / f] += v;
            }
        }
    }
    y
}

/// Source taps for one axis of align-corners-false bilinear upsampling.
pub fn bilinear_taps(len: usize, f: usize) -> Vec<(usize, usize, f64)> {
    (0..len * f)
        .map(|o| {
            let src = ((o as f64 + 0.5) / f as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear<T: Float>(x: &[T], planes: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (ty, tx) = (bilinear_taps(h, f), bilinear_taps(w, f));
    let (oh, ow) = (h * f, w * f);
    let mut y = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::from_f64(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::from_f64(lx);
                let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                y[p * oh * ow + oy * ow + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    y
}

pub fn upsample_bilinear_backward<T: Float>(
    gy: &[T],
    planes: usize,
    h: usize,
    w: usize,
    f: usize,
) -> Vec<T> {
    let (ty, tx) = (bilinear_taps(h, f), bilinear_taps(w, f));
    let (oh, ow) = (h * f, w * f);
    let mut gx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::from_f64(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::from_f64(lx);
                let g = gy[p * oh * ow + oy * ow + ox];
                let (gt, gb) = (g * (T::one() - ly), g * ly);
                dst[y0 * w + x0] += gt * (T::one() - lx);
                dst[y0 * w + x1] += gt * lx;
                dst[y1 * w + x0] += gb * (T::one() - lx);
                dst[y1 * w + x1] += gb * lx;
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let (m, n, k) = (5, 7, 11);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive_matmul(m, n, k, &a, &b);

        let mut c = vec![0.0; m * n];
        gemm_nn(m, n, k, &a, &b, &mut c);
        let mut c_tn = vec![0.0; m * n];
        gemm_tn(m, n, k, &transpose(m, k, &a), &b, &mut c_tn);
        let mut c_nt = vec![0.0; m * n];
        gemm_nt(m, n, k, &a, &transpose(k, n, &b), &mut c_nt);
        for i in 0..m * n {
            assert!((c[i] - want[i]).abs() < 1e-12);
            assert!((c_tn[i] - want[i]).abs() < 1e-12);
            assert!((c_nt[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_taps_clamp_at_edges() {
        let taps = bilinear_taps(3, 2);
        assert_eq!(taps[0], (0, 1, 0.0));
        assert_eq!(taps[1], (0, 1, 0.25));
        assert_eq!(taps[5], (2, 2, 0.25));
    }
}
