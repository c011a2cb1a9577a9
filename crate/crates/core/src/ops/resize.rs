//! Bicubic resampling in the MATLAB `imresize` convention.
//!
//! Cubic kernel with `a = -0.5`; when downscaling with antialiasing the kernel
//! is stretched by `1/scale`. Weights are normalized per output sample and
//! out-of-range taps replicate the edge pixel.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub fn cubic(x: f64) -> f64 {
    let a = -0.5;
    let ax = x.abs();
    if ax <= 1.0 {
        (a + 2.0) * ax.powi(3) - (a + 3.0) * ax.powi(2) + 1.0
    } else if ax < 2.0 {
        a * ax.powi(3) - 5.0 * a * ax.powi(2) + 8.0 * a * ax - 4.0 * a
    } else {
        0.0
    }
}

/// Sparse 1-D resampling matrix: per output sample, `(first tap, weights)`.
#[derive(Debug, Clone)]
pub struct Contributions {
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl Contributions {
    pub fn new(in_len: usize, out_len: usize, scale: f64, antialias: bool) -> Self {
        let (kernel_scale, width) = if scale < 1.0 && antialias {
            (scale, 4.0 / scale)
        } else {
            (1.0, 4.0)
        };
        let taps = (0..out_len)
            .map(|i| {
                // 0-based form of MATLAB's u = x/scale + 0.5*(1 - 1/scale)
                let center = (i as f64 + 0.5) / scale - 0.5;
                let left = (center - width / 2.0).floor() as isize;
                let count = width.ceil() as isize + 2;
                let mut raw: Vec<(usize, f64)> = (0..count)
                    .filter_map(|k| {
                        let j = left + k;
                        let wgt = kernel_scale * cubic(kernel_scale * (center - j as f64));
                        (wgt != 0.0).then(|| (j.clamp(0, in_len as isize - 1) as usize, wgt))
                    })
                    .collect();
                let total: f64 = raw.iter().map(|t| t.1).sum();
                for t in &mut raw {
                    t.1 /= total;
                }
                raw
            })
            .collect();
        Contributions { taps }
    }
}

/// Resize a stack of planes `[P, H, W]` to `[P, out_h, out_w]`; rows first, then columns.
pub fn bicubic_resize_to<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize, antialias: bool) -> Result<Tensor<T>> {
    let (p, h, w) = match *x.shape() {
        [h, w] => (1, h, w),
        [p, h, w] => (p, h, w),
        _ => return Err(Error::Shape(format!("bicubic_resize expects [H, W] or [P, H, W], got {:?}", x.shape()))),
    };
    if out_h < 1 || out_w < 1 || h < 1 || w < 1 {
        return Err(Error::InvalidArgument(format!("resize {h}x{w} -> {out_h}x{out_w} has an empty extent")));
    }
    let sy = out_h as f64 / h as f64;
    let sx = out_w as f64 / w as f64;
    let rows = Contributions::new(h, out_h, sy, antialias);
    let cols = Contributions::new(w, out_w, sx, antialias);
    let mut out = Vec::with_capacity(p * out_h * out_w);
    let mut tmp = vec![0.0f64; out_h * w];
    for plane in x.data().chunks_exact(h * w) {
        for (oy, taps) in rows.taps.iter().enumerate() {
            for xx in 0..w {
                tmp[oy * w + xx] = taps.iter().map(|&(j, wt)| wt * plane[j * w + xx].to_f64().unwrap()).sum();
            }
        }
        for oy in 0..out_h {
            for taps in &cols.taps {
                let v: f64 = taps.iter().map(|&(j, wt)| wt * tmp[oy * w + j]).sum();
                out.push(T::lit(v));
            }
        }
    }
    let shape = if x.shape().len() == 2 { vec![out_h, out_w] } else { vec![p, out_h, out_w] };
    Tensor::from_vec(&shape, out)
}

/// Resize by an integer-ratio or fractional `scale`; output extent is `ceil(scale · n)`.
pub fn bicubic_resize<T: Real>(x: &Tensor<T>, scale: f64, antialias: bool) -> Result<Tensor<T>> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("resize scale must be > 0, got {scale}")));
    }
    let nd = x.shape().len();
    if nd < 2 {
        return Err(Error::Shape("bicubic_resize needs at least 2 axes".into()));
    }
    let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    let out_h = (h as f64 * scale - 1e-9).ceil() as usize;
    let out_w = (w as f64 * scale - 1e-9).ceil() as usize;
    bicubic_resize_to(x, out_h, out_w, antialias)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_scale_is_identity() {
        let x = Tensor::from_fn(&[2, 5, 7], |i| (i as f64 * 0.3).sin());
        let y = bicubic_resize(&x, 1.0, true).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(&[6, 10], 0.37f64);
        for s in [0.25, 0.5, 2.0, 4.0, 1.5] {
            let y = bicubic_resize(&x, s, true).unwrap();
            assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-12), "scale {s}");
        }
    }

    /// Direct 2-D kernel evaluation, independent of the separable path.
    fn direct_downscale(x: &[f64], h: usize, w: usize, s: usize) -> Vec<f64> {
        let scale = 1.0 / s as f64;
        let (oh, ow) = (h / s, w / s);
        let mut out = vec![0.0; oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let cy = (oy as f64 + 0.5) * s as f64 - 0.5;
                let cx = (ox as f64 + 0.5) * s as f64 - 0.5;
                let (mut acc, mut norm_y, mut norm_x) = (0.0, 0.0, 0.0);
                for j in -20i64..(h as i64 + 20) {
                    norm_y += cubic(scale * (cy - j as f64));
                }
                for k in -20i64..(w as i64 + 20) {
                    norm_x += cubic(scale * (cx - k as f64));
                }
                for j in -20i64..(h as i64 + 20) {
                    for k in -20i64..(w as i64 + 20) {
                        let wt = cubic(scale * (cy - j as f64)) * cubic(scale * (cx - k as f64));
                        let jj = j.clamp(0, h as i64 - 1) as usize;
                        let kk = k.clamp(0, w as i64 - 1) as usize;
                        acc += wt * x[jj * w + kk];
                    }
                }
                out[oy * ow + ox] = acc / (norm_y * norm_x);
            }
        }
        out
    }

    #[test]
    fn ramp_downscale_matches_direct_oracle() {
        let x = Tensor::from_fn(&[8, 8], |i| (i / 8) as f64 * 0.1 + (i % 8) as f64 * 0.03);
        let y = bicubic_resize(&x.cast::<f32>(), 0.5, true).unwrap();
        let want = direct_downscale(x.data(), 8, 8, 2);
        for (a, b) in y.data().iter().zip(&want) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn rejects_empty_output() {
        assert!(bicubic_resize_to(&Tensor::<f32>::zeros(&[4, 4]), 0, 2, true).is_err());
        assert!(bicubic_resize(&Tensor::<f32>::zeros(&[4, 4]), 0.0, true).is_err());
    }
}
