//! 2D convolutions over channels-last batches `[N, H, W, C]`.
//!
//! Each image in the batch is processed independently; the per-image work is
//! an im2col followed by one GEMM, so results do not depend on thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(k-1)/2` on every side (odd kernels only).
    Same,
    Valid,
}

/// Convolution kernel bank, `weight: (out, in, kh, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Real> ConvWeights<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        if weight.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "conv weight must be (out, in, kh, kw), got {:?}",
                weight.shape()
            )));
        }
        if let Some(b) = &bias {
            if b.shape() != [weight.shape()[0]] {
                return Err(Error::Shape(format!(
                    "conv bias {:?} does not match {} output channels",
                    b.shape(),
                    weight.shape()[0]
                )));
            }
        }
        Ok(ConvWeights { weight, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }
    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new<T: Real>(x_shape: &[usize], w: &ConvWeights<T>, stride: usize, padding: Padding) -> Result<Self> {
        if stride < 1 {
            return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
        }
        let &[n, h, wd, cin] = x_shape else {
            return Err(Error::Shape(format!("conv input must be [N, H, W, C], got {x_shape:?}")));
        };
        if cin != w.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {cin}",
                w.in_channels()
            )));
        }
        let (kh, kw) = w.kernel();
        let (pad_h, pad_w) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::InvalidArgument("same padding needs an odd kernel".into()));
                }
                ((kh - 1) / 2, (kw - 1) / 2)
            }
            Padding::Valid => (0, 0),
        };
        if h + 2 * pad_h < kh || wd + 2 * pad_w < kw {
            return Err(Error::Shape(format!("kernel {kh}x{kw} larger than input {h}x{wd}")));
        }
        Ok(Geometry {
            n,
            h,
            w: wd,
            cin,
            cout: w.out_channels(),
            kh,
            kw,
            stride,
            pad_h,
            pad_w,
            oh: (h + 2 * pad_h - kh) / stride + 1,
            ow: (wd + 2 * pad_w - kw) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Input pixel feeding tap `(ky, kx)` of output `(oy, ox)`, if inside the image.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad_h as isize;
        let x = (ox * self.stride + kx) as isize - self.pad_w as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }

    fn im2col<T: Real>(&self, img: &[T], cols: &mut [T]) {
        let p = self.patch();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut cols[(oy * self.ow + ox) * p..][..p];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let dst = &mut row[(ky * self.kw + kx) * self.cin..][..self.cin];
                        match self.source(oy, ox, ky, kx) {
                            Some((y, x)) => dst.copy_from_slice(&img[(y * self.w + x) * self.cin..][..self.cin]),
                            None => dst.fill(T::zero()),
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], img: &mut [T]) {
        let p = self.patch();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &cols[(oy * self.ow + ox) * p..][..p];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        if let Some((y, x)) = self.source(oy, ox, ky, kx) {
                            let src = &row[(ky * self.kw + kx) * self.cin..][..self.cin];
                            let dst = &mut img[(y * self.w + x) * self.cin..][..self.cin];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Kernel as a `(kh·kw·cin) × cout` matrix matching the im2col column order.
fn weight_matrix<T: Real>(w: &ConvWeights<T>) -> Vec<T> {
    let (cout, cin) = (w.out_channels(), w.in_channels());
    let (kh, kw) = w.kernel();
    let src = w.weight.data();
    let mut m = vec![T::zero(); kh * kw * cin * cout];
    for co in 0..cout {
        for ci in 0..cin {
            for ky in 0..kh {
                for kx in 0..kw {
                    m[((ky * kw + kx) * cin + ci) * cout + co] = src[((co * cin + ci) * kh + ky) * kw + kx];
                }
            }
        }
    }
    m
}

/// Cross-correlation of every image in `x: [N, H, W, Cin]`, giving `[N, OH, OW, Cout]`.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &ConvWeights<T>, stride: usize, padding: Padding) -> Result<Tensor<T>> {
    let g = Geometry::new(x.shape(), w, stride, padding)?;
    let wm = weight_matrix(w);
    let in_len = g.h * g.w * g.cin;
    let out_len = g.oh * g.ow * g.cout;
    let mut out = vec![T::zero(); g.n * out_len];
    if out_len > 0 {
        out.par_chunks_mut(out_len)
            .zip(x.data().par_chunks(in_len.max(1)))
            .for_each(|(dst, img)| {
                let rows = g.oh * g.ow;
                if let Some(b) = &w.bias {
                    for r in 0..rows {
                        dst[r * g.cout..][..g.cout].copy_from_slice(b.data());
                    }
                }
                let beta = if w.bias.is_some() { T::one() } else { T::zero() };
                if g.kh == 1 && g.kw == 1 && g.stride == 1 {
                    T::gemm(rows, g.cin, g.cout, T::one(), img, g.cin as isize, 1, &wm, g.cout as isize, 1, beta, dst, g.cout as isize);
                } else {
                    let p = g.patch();
                    let mut cols = vec![T::zero(); rows * p];
                    g.im2col(img, &mut cols);
                    T::gemm(rows, p, g.cout, T::one(), &cols, p as isize, 1, &wm, g.cout as isize, 1, beta, dst, g.cout as isize);
                }
            });
    }
    Tensor::from_vec(&[g.n, g.oh, g.ow, g.cout], out)
}

pub struct ConvGrads<T> {
    pub x: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Vector-Jacobian product of [`conv2d`].
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &ConvWeights<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(x.shape(), w, stride, padding)?;
    grad_out.expect_shape(&[g.n, g.oh, g.ow, g.cout])?;
    let wm = weight_matrix(w);
    let p = g.patch();
    let rows = g.oh * g.ow;
    let in_len = g.h * g.w * g.cin;
    let out_len = rows * g.cout;

    let mut gx = vec![T::zero(); x.numel()];
    // per-image weight gradients, reduced afterwards in image order
    let per_image: Vec<Vec<T>> = gx
        .par_chunks_mut(in_len.max(1))
        .zip(x.data().par_chunks(in_len.max(1)))
        .zip(grad_out.data().par_chunks(out_len.max(1)))
        .map(|((gimg, img), gout)| {
            let mut cols = vec![T::zero(); rows * p];
            g.im2col(img, &mut cols);
            let mut gw = vec![T::zero(); p * g.cout];
            // gw = cols^T @ gout
            T::gemm(p, rows, g.cout, T::one(), &cols, 1, p as isize, gout, g.cout as isize, 1, T::zero(), &mut gw, g.cout as isize);
            // gcols = gout @ wm^T
            T::gemm(rows, g.cout, p, T::one(), gout, g.cout as isize, 1, &wm, 1, g.cout as isize, T::zero(), &mut cols, p as isize);
            g.col2im(&cols, gimg);
            gw
        })
        .collect();

    let mut gwm = vec![T::zero(); p * g.cout];
    for part in &per_image {
        for (a, &b) in gwm.iter_mut().zip(part) {
            *a += b;
        }
    }
    let mut gweight = vec![T::zero(); w.weight.numel()];
    for co in 0..g.cout {
        for ci in 0..g.cin {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    gweight[((co * g.cin + ci) * g.kh + ky) * g.kw + kx] = gwm[((ky * g.kw + kx) * g.cin + ci) * g.cout + co];
                }
            }
        }
    }
    let gbias = w.bias.as_ref().map(|_| {
        let mut gb = vec![T::zero(); g.cout];
        for row in grad_out.data().chunks_exact(g.cout) {
            for (a, &b) in gb.iter_mut().zip(row) {
                *a += b;
            }
        }
        Tensor::from_vec(&[g.cout], gb).unwrap()
    });
    Ok(ConvGrads {
        x: Tensor::from_vec(x.shape(), gx)?,
        weight: Tensor::from_vec(w.weight.shape(), gweight)?,
        bias: gbias,
    })
}

/// Depthwise 3×3 convolution, zero "same" padding, stride 1.
///
/// `weight: (C, 1, 3, 3)`, `bias: (C)`; channel `i` only sees kernel `i`.
pub fn dwconv3x3<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, h, w, c) = dw_check(x, weight, bias)?;
    let k = weight.data();
    let img_len = h * w * c;
    let mut out = vec![T::zero(); x.numel()];
    if img_len > 0 {
        out.par_chunks_mut(img_len)
            .zip(x.data().par_chunks(img_len))
            .for_each(|(dst, img)| {
                for y in 0..h {
                    for xx in 0..w {
                        let o = &mut dst[(y * w + xx) * c..][..c];
                        if let Some(b) = bias {
                            o.copy_from_slice(b.data());
                        }
                        for ky in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let src = &img[(sy as usize * w + sx as usize) * c..][..c];
                                for ch in 0..c {
                                    o[ch] += k[ch * 9 + ky * 3 + kx] * src[ch];
                                }
                            }
                        }
                    }
                }
            });
    }
    let _ = n;
    Tensor::from_vec(x.shape(), out)
}

fn dw_check<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<(usize, usize, usize, usize)> {
    let &[n, h, w, c] = x.shape() else {
        return Err(Error::Shape(format!("dwconv input must be [N, H, W, C], got {:?}", x.shape())));
    };
    if weight.shape() != [c, 1, 3, 3] {
        return Err(Error::Shape(format!(
            "dwconv needs one 3x3 kernel per channel ({c}), got weight {:?}",
            weight.shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [c] {
            return Err(Error::Shape(format!("dwconv bias {:?} != [{c}]", b.shape())));
        }
    }
    Ok((n, h, w, c))
}

/// Vector-Jacobian product of [`dwconv3x3`]: `(grad_x, grad_weight, grad_bias)`.
pub fn dwconv3x3_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let (_, h, w, c) = dw_check(x, weight, None)?;
    grad_out.expect_shape(x.shape())?;
    let k = weight.data();
    let img_len = h * w * c;
    let mut gx = vec![T::zero(); x.numel()];
    let parts: Vec<Vec<T>> = gx
        .par_chunks_mut(img_len.max(1))
        .zip(x.data().par_chunks(img_len.max(1)))
        .zip(grad_out.data().par_chunks(img_len.max(1)))
        .map(|((gimg, img), gout)| {
            let mut gk = vec![T::zero(); c * 9];
            for y in 0..h {
                for xx in 0..w {
                    let go = &gout[(y * w + xx) * c..][..c];
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let off = (sy as usize * w + sx as usize) * c;
                            for ch in 0..c {
                                gk[ch * 9 + ky * 3 + kx] += go[ch] * img[off + ch];
                                gimg[off + ch] += go[ch] * k[ch * 9 + ky * 3 + kx];
                            }
                        }
                    }
                }
            }
            gk
        })
        .collect();
    let mut gk = vec![T::zero(); c * 9];
    for part in &parts {
        for (a, &b) in gk.iter_mut().zip(part) {
            *a += b;
        }
    }
    let gb = has_bias.then(|| {
        let mut gb = vec![T::zero(); c];
        for row in grad_out.data().chunks_exact(c.max(1)) {
            for (a, &b) in gb.iter_mut().zip(row) {
                *a += b;
            }
        }
        Tensor::from_vec(&[c], gb).unwrap()
    });
    Ok((Tensor::from_vec(x.shape(), gx)?, Tensor::from_vec(weight.shape(), gk)?, gb))
}
