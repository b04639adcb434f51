use crate::num::{matmul, matmul_nt, matmul_tn_acc, Scalar};
use crate::rng::Stream;
use crate::tensor::{Param, Parameterized, Tensor};

use super::init::xavier_uniform;

/// Output spatial size of a cross-correlation: floor((n + 2p - k)/s) + 1.
pub fn conv_out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Gathers kernel windows into a matrix: one row per (batch, grid_y, grid_x),
/// columns laid out (ky, kx, channel). Out-of-range positions contribute
/// zeros. The same routine serves Conv2d forward (grid = output plane) and
/// ConvTranspose2d backward (grid = input plane, src = upstream gradient).
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    src: &[S],
    n: usize,
    src_h: usize,
    src_w: usize,
    src_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    grid_h: usize,
    grid_w: usize,
    col: &mut Vec<S>,
) {
    let row_len = k * k * src_c;
    col.clear();
    col.resize(n * grid_h * grid_w * row_len, S::ZERO);
    for ni in 0..n {
        let src_base = ni * src_h * src_w * src_c;
        for gy in 0..grid_h {
            let iy0 = (gy * stride) as isize - pad as isize;
            for gx in 0..grid_w {
                let ix0 = (gx * stride) as isize - pad as isize;
                let row = ((ni * grid_h + gy) * grid_w + gx) * row_len;
                for ky in 0..k {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= src_h as isize {
                        continue; // stays zero
                    }
                    let kx_lo = (-ix0).max(0) as usize;
                    let kx_hi = k.min((src_w as isize - ix0).max(0) as usize);
                    if kx_lo >= kx_hi {
                        continue;
                    }
                    let src_off =
                        src_base + ((iy as usize) * src_w + (ix0 + kx_lo as isize) as usize) * src_c;
                    let dst_off = row + (ky * k + kx_lo) * src_c;
                    let len = (kx_hi - kx_lo) * src_c;
                    col[dst_off..dst_off + len].copy_from_slice(&src[src_off..src_off + len]);
                }
            }
        }
    }
}

/// Scatter-add inverse of [`im2col`]: accumulates column rows back into the
/// (zeroed) destination image.
#[allow(clippy::too_many_arguments)]
fn col2im<S: Scalar>(
    col: &[S],
    n: usize,
    dst_h: usize,
    dst_w: usize,
    dst_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    grid_h: usize,
    grid_w: usize,
    dst: &mut [S],
) {
    let row_len = k * k * dst_c;
    debug_assert_eq!(dst.len(), n * dst_h * dst_w * dst_c);
    for ni in 0..n {
        let dst_base = ni * dst_h * dst_w * dst_c;
        for gy in 0..grid_h {
            let iy0 = (gy * stride) as isize - pad as isize;
            for gx in 0..grid_w {
                let ix0 = (gx * stride) as isize - pad as isize;
                let row = ((ni * grid_h + gy) * grid_w + gx) * row_len;
                for ky in 0..k {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= dst_h as isize {
                        continue;
                    }
                    let kx_lo = (-ix0).max(0) as usize;
                    let kx_hi = k.min((dst_w as isize - ix0).max(0) as usize);
                    if kx_lo >= kx_hi {
                        continue;
                    }
                    let dst_off =
                        dst_base + ((iy as usize) * dst_w + (ix0 + kx_lo as isize) as usize) * dst_c;
                    let src_off = row + (ky * k + kx_lo) * dst_c;
                    let len = (kx_hi - kx_lo) * dst_c;
                    for i in 0..len {
                        dst[dst_off + i] += col[src_off + i];
                    }
                }
            }
        }
    }
}

/// 2D cross-correlation with zero padding; weights stored [k*k*in_c, out_c].
#[derive(Debug, Clone)]
pub struct Conv2d<S: Scalar> {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub w: Param<S>,
    pub b: Param<S>,
    /// Skip the input-gradient pass (first layer of a network).
    pub grad_input: bool,
    col: Vec<S>,
    dcol: Vec<S>,
    cached_n: usize,
}

impl<S: Scalar> Conv2d<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_h: usize,
        in_w: usize,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Stream,
    ) -> Self {
        assert!(in_h + 2 * pad >= k && in_w + 2 * pad >= k, "kernel too large");
        let out_h = conv_out_size(in_h, k, stride, pad);
        let out_w = conv_out_size(in_w, k, stride, pad);
        let mut w = Tensor::zeros(&[k * k * in_c, out_c]);
        xavier_uniform(w.data_mut(), k * k * in_c, k * k * out_c, rng);
        Conv2d {
            in_h,
            in_w,
            in_c,
            out_c,
            k,
            stride,
            pad,
            out_h,
            out_w,
            w: Param::new(w),
            b: Param::new(Tensor::zeros(&[out_c])),
            grad_input: true,
            col: Vec::new(),
            dcol: Vec::new(),
            cached_n: 0,
        }
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w * self.out_c
    }

    pub fn in_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    /// Forward over a batch of `n` images (flattened NHWC). The im2col matrix
    /// is cached for backward.
    pub fn forward(&mut self, x: &[S], n: usize, out: &mut Vec<S>) {
        debug_assert_eq!(x.len(), n * self.in_len());
        im2col(
            x, n, self.in_h, self.in_w, self.in_c, self.k, self.stride, self.pad, self.out_h,
            self.out_w, &mut self.col,
        );
        self.cached_n = n;
        let rows = n * self.out_h * self.out_w;
        let kk = self.k * self.k * self.in_c;
        out.clear();
        out.resize(rows * self.out_c, S::ZERO);
        matmul(rows, kk, self.out_c, &self.col, self.w.value.data(), out);
        for row in out.chunks_exact_mut(self.out_c) {
            for (o, &bv) in row.iter_mut().zip(self.b.value.data()) {
                *o += bv;
            }
        }
    }

    /// Accumulates parameter gradients from the cached forward; writes the
    /// input gradient into `dx` unless `grad_input` is off.
    pub fn backward(&mut self, dout: &[S], dx: Option<&mut Vec<S>>) {
        let n = self.cached_n;
        let rows = n * self.out_h * self.out_w;
        let kk = self.k * self.k * self.in_c;
        debug_assert_eq!(dout.len(), rows * self.out_c);
        matmul_tn_acc(kk, rows, self.out_c, &self.col, dout, self.w.grad.data_mut());
        let bg = self.b.grad.data_mut();
        for row in dout.chunks_exact(self.out_c) {
            for (g, &d) in bg.iter_mut().zip(row) {
                *g += d;
            }
        }
        if !self.grad_input {
            return;
        }
        if let Some(dx) = dx {
            self.dcol.clear();
            self.dcol.resize(rows * kk, S::ZERO);
            matmul_nt(rows, self.out_c, kk, dout, self.w.value.data(), &mut self.dcol);
            dx.clear();
            dx.resize(n * self.in_len(), S::ZERO);
            col2im(
                &self.dcol, n, self.in_h, self.in_w, self.in_c, self.k, self.stride, self.pad,
                self.out_h, self.out_w, dx,
            );
        }
    }
}

impl<S: Scalar> Parameterized<S> for Conv2d<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}

/// Transposed convolution (the adjoint map of [`Conv2d`] with the same
/// geometry): output size (n-1)*stride - 2*pad + k. Weights stored
/// [in_c, k*k*out_c].
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<S: Scalar> {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub w: Param<S>,
    pub b: Param<S>,
    input_cache: Vec<S>,
    col: Vec<S>,
    cached_n: usize,
}

impl<S: Scalar> ConvTranspose2d<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_h: usize,
        in_w: usize,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Stream,
    ) -> Self {
        let out_h = (in_h - 1) * stride + k - 2 * pad;
        let out_w = (in_w - 1) * stride + k - 2 * pad;
        let mut w = Tensor::zeros(&[in_c, k * k * out_c]);
        xavier_uniform(w.data_mut(), k * k * in_c, k * k * out_c, rng);
        ConvTranspose2d {
            in_h,
            in_w,
            in_c,
            out_c,
            k,
            stride,
            pad,
            out_h,
            out_w,
            w: Param::new(w),
            b: Param::new(Tensor::zeros(&[out_c])),
            input_cache: Vec::new(),
            col: Vec::new(),
            cached_n: 0,
        }
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w * self.out_c
    }

    pub fn forward(&mut self, x: &[S], n: usize, out: &mut Vec<S>) {
        let rows = n * self.in_h * self.in_w;
        debug_assert_eq!(x.len(), rows * self.in_c);
        self.input_cache.clear();
        self.input_cache.extend_from_slice(x);
        self.cached_n = n;
        let kk = self.k * self.k * self.out_c;
        self.col.clear();
        self.col.resize(rows * kk, S::ZERO);
        matmul(rows, self.in_c, kk, x, self.w.value.data(), &mut self.col);
        out.clear();
        out.resize(n * self.out_len(), S::ZERO);
        col2im(
            &self.col, n, self.out_h, self.out_w, self.out_c, self.k, self.stride, self.pad,
            self.in_h, self.in_w, out,
        );
        for row in out.chunks_exact_mut(self.out_c) {
            for (o, &bv) in row.iter_mut().zip(self.b.value.data()) {
                *o += bv;
            }
        }
    }

    pub fn backward(&mut self, dout: &[S], dx: Option<&mut Vec<S>>) {
        let n = self.cached_n;
        let rows = n * self.in_h * self.in_w;
        let kk = self.k * self.k * self.out_c;
        debug_assert_eq!(dout.len(), n * self.out_len());
        // dcol[(iy,ix),(ky,kx,co)] = dout[iy*s+ky-p, ix*s+kx-p, co]
        im2col(
            dout, n, self.out_h, self.out_w, self.out_c, self.k, self.stride, self.pad, self.in_h,
            self.in_w, &mut self.col,
        );
        matmul_tn_acc(
            self.in_c,
            rows,
            kk,
            &self.input_cache,
            &self.col,
            self.w.grad.data_mut(),
        );
        let bg = self.b.grad.data_mut();
        for row in dout.chunks_exact(self.out_c) {
            for (g, &d) in bg.iter_mut().zip(row) {
                *g += d;
            }
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(rows * self.in_c, S::ZERO);
            matmul_nt(rows, kk, self.in_c, &self.col, self.w.value.data(), dx);
        }
    }
}

impl<S: Scalar> Parameterized<S> for ConvTranspose2d<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}
