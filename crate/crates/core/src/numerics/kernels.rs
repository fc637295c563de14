// Slice-level kernels shared by the eager tensor ops and the tape.

use super::Scalar;

/// Geometry of a 3×3, padding-1 convolution over an `N×C×H×W` batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h - 1) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w - 1) / self.stride + 1
    }

    pub fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn col_rows(&self) -> usize {
        self.c_in * 9
    }

    pub fn col_cols(&self) -> usize {
        self.batch * self.out_plane()
    }
}

pub fn im2col<S: Scalar>(g: &ConvGeom, input: &[S]) -> Vec<S> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncols = g.col_cols();
    let mut cols = vec![S::zero(); g.col_rows() * ncols];
    for c in 0..g.c_in {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * ncols;
                for n in 0..g.batch {
                    let plane = &input[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                    let base = row + n * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - 1;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..][..g.w];
                        let dst = &mut cols[base + oy * ow..][..ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - 1;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

pub fn col2im<S: Scalar>(g: &ConvGeom, cols: &[S]) -> Vec<S> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncols = g.col_cols();
    let mut out = vec![S::zero(); g.batch * g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * ncols;
                for n in 0..g.batch {
                    let plane = &mut out[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                    let base = row + n * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - 1;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &cols[base + oy * ow..][..ow];
                        let dst = &mut plane[iy as usize * g.w..][..g.w];
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - 1;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Samples per im2col chunk, sized so one chunk's column buffer stays cache
/// resident.
fn chunk_len(g: &ConvGeom) -> usize {
    const TARGET: usize = 24 * 1024;
    (TARGET / (g.col_rows() * g.out_plane()).max(1)).clamp(1, g.batch.max(1))
}

fn sub_geom(g: &ConvGeom, batch: usize) -> ConvGeom {
    ConvGeom { batch, ..*g }
}

/// Forward convolution producing `N×C_out×H'×W'`.
pub fn conv2d_forward<S: Scalar>(g: &ConvGeom, input: &[S], kernel: &[S], bias: &[S]) -> Vec<S> {
    let plane = g.out_plane();
    let in_per = g.c_in * g.h * g.w;
    let out_per = g.c_out * plane;
    let mut out = vec![S::zero(); g.batch * out_per];
    let chunk = chunk_len(g);
    let mut start = 0;
    while start < g.batch {
        let nb = chunk.min(g.batch - start);
        let sg = sub_geom(g, nb);
        let cols = im2col(&sg, &input[start * in_per..(start + nb) * in_per]);
        let ncols = sg.col_cols();
        let mut prod = vec![S::zero(); g.c_out * ncols];
        S::gemm(g.c_out, g.col_rows(), ncols, kernel, false, &cols, false, S::zero(), &mut prod);
        let dst_all = &mut out[start * out_per..(start + nb) * out_per];
        for co in 0..g.c_out {
            let b = bias[co];
            for n in 0..nb {
                let src = &prod[co * ncols + n * plane..][..plane];
                let dst = &mut dst_all[(n * g.c_out + co) * plane..][..plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = *s + b;
                }
            }
        }
        start += nb;
    }
    out
}

/// Gradients of a convolution: (d_input, d_kernel, d_bias).
pub fn conv2d_backward<S: Scalar>(
    g: &ConvGeom,
    input: &[S],
    kernel: &[S],
    d_out: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let plane = g.out_plane();
    let in_per = g.c_in * g.h * g.w;
    let out_per = g.c_out * plane;
    let k = g.col_rows();
    let mut d_input = vec![S::zero(); g.batch * in_per];
    let mut d_kernel = vec![S::zero(); g.c_out * k];
    let mut d_bias = vec![S::zero(); g.c_out];
    let chunk = chunk_len(g);
    let mut start = 0;
    while start < g.batch {
        let nb = chunk.min(g.batch - start);
        let sg = sub_geom(g, nb);
        let ncols = sg.col_cols();
        let cols = im2col(&sg, &input[start * in_per..(start + nb) * in_per]);
        let d_src = &d_out[start * out_per..(start + nb) * out_per];
        let mut d_prod = vec![S::zero(); g.c_out * ncols];
        for co in 0..g.c_out {
            for n in 0..nb {
                let src = &d_src[(n * g.c_out + co) * plane..][..plane];
                d_prod[co * ncols + n * plane..][..plane].copy_from_slice(src);
                d_bias[co] += src.iter().copied().sum::<S>();
            }
        }
        S::gemm(g.c_out, ncols, k, &d_prod, false, &cols, true, S::one(), &mut d_kernel);
        let mut d_cols = cols;
        S::gemm(k, g.c_out, ncols, kernel, true, &d_prod, false, S::zero(), &mut d_cols);
        d_input[start * in_per..(start + nb) * in_per].copy_from_slice(&col2im(&sg, &d_cols));
        start += nb;
    }
    (d_input, d_kernel, d_bias)
}

/// Row-wise softmax of a `rows×cols` matrix, stabilized by row-max subtraction.
pub fn softmax_rows<S: Scalar>(rows: usize, cols: usize, logits: &[S]) -> Vec<S> {
    let mut out = vec![S::zero(); rows * cols];
    for r in 0..rows {
        let row = &logits[r * cols..][..cols];
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let dst = &mut out[r * cols..][..cols];
        let mut z = S::zero();
        for (d, &l) in dst.iter_mut().zip(row) {
            *d = (l - m).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    out
}

/// Σ_i Σ_k −t[i,k]·log softmax(l[i,·])[k], plus the softmax probabilities.
pub fn soft_xent<S: Scalar>(rows: usize, cols: usize, logits: &[S], targets: &[S]) -> (S, Vec<S>) {
    let probs = softmax_rows(rows, cols, logits);
    let mut total = S::zero();
    for r in 0..rows {
        let row = &logits[r * cols..][..cols];
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = m + row.iter().map(|&l| (l - m).exp()).sum::<S>().ln();
        for (k, &l) in row.iter().enumerate() {
            let t = targets[r * cols + k];
            if t != S::zero() {
                total -= t * (l - lse);
            }
        }
    }
    (total, probs)
}
