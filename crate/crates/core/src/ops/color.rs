//! BT.601 studio-range color conversion on planar `[3, H, W]` images in `[0, 1]`.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const FORWARD: [[f64; 3]; 3] = [
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
];
const OFFSET: [f64; 3] = [16.0, 128.0, 128.0];

fn inverse3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

fn planes<T: Real>(img: &Tensor<T>) -> Result<usize> {
    match img.shape() {
        [3, h, w] => Ok(h * w),
        s => Err(Error::Shape(format!("color conversion needs [3, H, W], got {s:?}"))),
    }
}

/// Luma of a single RGB pixel.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    (OFFSET[0] + FORWARD[0][0] * r + FORWARD[0][1] * g + FORWARD[0][2] * b) / 255.0
}

pub fn rgb_to_ycbcr<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let n = planes(img)?;
    let d = img.data();
    let mut out = vec![T::zero(); 3 * n];
    for p in 0..n {
        let rgb = [0, 1, 2].map(|c| d[c * n + p].to_f64().unwrap());
        for k in 0..3 {
            let v = OFFSET[k] + FORWARD[k].iter().zip(&rgb).map(|(a, b)| a * b).sum::<f64>();
            out[k * n + p] = T::lit(v / 255.0);
        }
    }
    Tensor::from_vec(img.shape(), out)
}

pub fn ycbcr_to_rgb<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let n = planes(img)?;
    let inv = inverse3(FORWARD);
    let d = img.data();
    let mut out = vec![T::zero(); 3 * n];
    for p in 0..n {
        let ycc = [0, 1, 2].map(|c| d[c * n + p].to_f64().unwrap() * 255.0 - OFFSET[c]);
        for k in 0..3 {
            out[k * n + p] = T::lit(inv[k].iter().zip(&ycc).map(|(a, b)| a * b).sum());
        }
    }
    Tensor::from_vec(img.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_and_white_luma() {
        let black = rgb_to_ycbcr(&Tensor::<f64>::zeros(&[3, 1, 1])).unwrap();
        assert!((black.data()[0] - 16.0 / 255.0).abs() < 1e-12);
        let white = rgb_to_ycbcr(&Tensor::<f64>::full(&[3, 1, 1], 1.0)).unwrap();
        assert!((white.data()[0] - 235.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn round_trip() {
        let img = Tensor::from_fn(&[3, 4, 5], |i| ((i * 7919) % 97) as f32 / 96.0);
        let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img).unwrap()).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-4);
    }

    #[test]
    fn wrong_channel_count() {
        assert!(rgb_to_ycbcr(&Tensor::<f32>::zeros(&[2, 2, 2])).is_err());
    }
}
