//! im2col / col2im lowering of 3x3, stride 1, pad 1 convolutions onto sgemm.
//!
//! Work is split into fixed-size channel chunks, never by thread count, so
//! every output element sees the same accumulation order on any pool size.

use rayon::prelude::*;

pub(crate) const KERNEL: usize = 3;
pub(crate) const TAPS: usize = KERNEL * KERNEL;
const PAD: isize = 1;

/// Output channels per gemm call.
const ROW_CHUNK: usize = 64;
/// Input channels per col2im chunk.
const COL_CHUNK: usize = 32;

/// `cols[(ci*9 + ky*3 + kx), (i*w + j)] = x[ci, i+ky-1, j+kx-1]`, zero outside.
fn im2col(x: &[f32], channels: usize, h: usize, w: usize) -> Vec<f32> {
    let plane = h * w;
    let mut cols = vec![0.0f32; channels * TAPS * plane];
    cols.par_chunks_mut(TAPS * plane)
        .zip(x.par_chunks(plane))
        .for_each(|(dst, src)| {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = &mut dst[(ky * KERNEL + kx) * plane..][..plane];
                    let dy = ky as isize - PAD;
                    let dx = kx as isize - PAD;
                    for i in 0..h {
                        let si = i as isize + dy;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        let src_row = &src[si as usize * w..][..w];
                        let dst_row = &mut row[i * w..][..w];
                        let j0 = (-dx).max(0) as usize;
                        let j1 = (w as isize - dx).min(w as isize) as usize;
                        if j0 < j1 {
                            let s0 = (j0 as isize + dx) as usize;
                            dst_row[j0..j1].copy_from_slice(&src_row[s0..s0 + (j1 - j0)]);
                        }
                    }
                }
            }
        });
    cols
}

/// Scatter-adds one input channel's 9 tap rows back onto its image plane.
fn col2im_channel(cols: &[f32], dst: &mut [f32], h: usize, w: usize) {
    let plane = h * w;
    for ky in 0..KERNEL {
        for kx in 0..KERNEL {
            let row = &cols[(ky * KERNEL + kx) * plane..][..plane];
            let dy = ky as isize - PAD;
            let dx = kx as isize - PAD;
            for i in 0..h {
                let si = i as isize + dy;
                if si < 0 || si >= h as isize {
                    continue;
                }
                let src_row = &row[i * w..][..w];
                let dst_row = &mut dst[si as usize * w..][..w];
                let j0 = (-dx).max(0) as usize;
                let j1 = (w as isize - dx).min(w as isize) as usize;
                if j0 < j1 {
                    let s0 = (j0 as isize + dx) as usize;
                    for (d, s) in dst_row[s0..s0 + (j1 - j0)].iter_mut().zip(&src_row[j0..j1]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// Cross-correlation: `weights` is `(out, in, 3, 3)` row-major, `bias` has `out`
/// entries or is empty. Returns `(out, h, w)` data.
pub(crate) fn conv3x3(
    x: &[f32],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    bias: Option<&[f32]>,
    out_ch: usize,
) -> Vec<f32> {
    let plane = h * w;
    let k = in_ch * TAPS;
    debug_assert_eq!(x.len(), in_ch * plane);
    debug_assert_eq!(weights.len(), out_ch * k);
    let cols = im2col(x, in_ch, h, w);
    let mut out = vec![0.0f32; out_ch * plane];
    out.par_chunks_mut(ROW_CHUNK * plane)
        .enumerate()
        .for_each(|(chunk, dst)| {
            let o0 = chunk * ROW_CHUNK;
            let rows = dst.len() / plane;
            if let Some(b) = bias {
                for (r, plane_out) in dst.chunks_mut(plane).enumerate() {
                    plane_out.fill(b[o0 + r]);
                }
            }
            let a = &weights[o0 * k..(o0 + rows) * k];
            // SAFETY: all slices are sized for an (rows x k) * (k x plane) product
            // with the given row-major strides.
            unsafe {
                matrixmultiply::sgemm(
                    rows,
                    k,
                    plane,
                    1.0,
                    a.as_ptr(),
                    k as isize,
                    1,
                    cols.as_ptr(),
                    plane as isize,
                    1,
                    if bias.is_some() { 1.0 } else { 0.0 },
                    dst.as_mut_ptr(),
                    plane as isize,
                    1,
                );
            }
        });
    out
}

/// Adjoint of the bias-free part of [`conv3x3`]: maps `(out, h, w)` back to `(in, h, w)`.
pub(crate) fn conv3x3_adjoint(
    y: &[f32],
    out_ch: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    in_ch: usize,
) -> Vec<f32> {
    let plane = h * w;
    let k = in_ch * TAPS;
    debug_assert_eq!(y.len(), out_ch * plane);
    debug_assert_eq!(weights.len(), out_ch * k);
    let mut out = vec![0.0f32; in_ch * plane];
    out.par_chunks_mut(COL_CHUNK * plane)
        .enumerate()
        .for_each(|(chunk, dst)| {
            let c0 = chunk * COL_CHUNK;
            let chans = dst.len() / plane;
            let rows = chans * TAPS;
            let mut cols = vec![0.0f32; rows * plane];
            // Rows (c0*9 .. (c0+chans)*9) of W^T, i.e. columns of W.
            let a = weights[c0 * TAPS..].as_ptr();
            // SAFETY: W^T is addressed with row stride 1 and column stride k inside
            // the (out x k) weight buffer; all row/col indices stay in bounds.
            unsafe {
                matrixmultiply::sgemm(
                    rows,
                    out_ch,
                    plane,
                    1.0,
                    a,
                    1,
                    k as isize,
                    y.as_ptr(),
                    plane as isize,
                    1,
                    0.0,
                    cols.as_mut_ptr(),
                    plane as isize,
                    1,
                );
            }
            for (c, plane_out) in dst.chunks_mut(plane).enumerate() {
                col2im_channel(&cols[c * TAPS * plane..][..TAPS * plane], plane_out, h, w);
            }
        });
    out
}
