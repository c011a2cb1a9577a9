use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Source index of every output element of a pixel shuffle on `[N, H, W, C·α²]`.
///
/// Output `(n, α·h+i, α·w+j, c)` reads input channel `c·α² + i·α + j`.
pub fn pixel_shuffle_index(shape: &[usize], alpha: usize) -> Result<(Vec<usize>, Vec<u32>)> {
    let &[n, h, w, cin] = shape else {
        return Err(Error::Shape(format!("pixel_shuffle input must be [N, H, W, C], got {shape:?}")));
    };
    if alpha == 0 || cin % (alpha * alpha) != 0 {
        return Err(Error::Shape(format!("{cin} channels not divisible by {alpha}^2")));
    }
    let c = cin / (alpha * alpha);
    let (oh, ow) = (h * alpha, w * alpha);
    let mut idx = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let (sh, i, sw, j) = (y / alpha, y % alpha, x / alpha, x % alpha);
                for ch in 0..c {
                    let src = ((b * h + sh) * w + sw) * cin + ch * alpha * alpha + i * alpha + j;
                    idx.push(src as u32);
                }
            }
        }
    }
    Ok((vec![n, oh, ow, c], idx))
}

pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, alpha: usize) -> Result<Tensor<T>> {
    let (shape, idx) = pixel_shuffle_index(x.shape(), alpha)?;
    let src = x.data();
    Tensor::from_vec(&shape, idx.iter().map(|&i| src[i as usize]).collect())
}

/// Inverse of [`pixel_shuffle`]: `[N, α·H, α·W, C]` back to `[N, H, W, C·α²]`.
pub fn pixel_unshuffle<T: Real>(y: &Tensor<T>, alpha: usize) -> Result<Tensor<T>> {
    let &[n, oh, ow, c] = y.shape() else {
        return Err(Error::Shape("pixel_unshuffle input must be [N, H, W, C]".into()));
    };
    if alpha == 0 || oh % alpha != 0 || ow % alpha != 0 {
        return Err(Error::Shape(format!("spatial extent not divisible by {alpha}")));
    }
    let in_shape = [n, oh / alpha, ow / alpha, c * alpha * alpha];
    let (_, idx) = pixel_shuffle_index(&in_shape, alpha)?;
    let mut out = vec![T::zero(); y.numel()];
    for (o, &i) in idx.iter().enumerate() {
        out[i as usize] = y.data()[o];
    }
    Tensor::from_vec(&in_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_factor_is_identity() {
        let x = Tensor::from_fn(&[2, 3, 4, 5], |i| i as f32);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn four_channels_to_two_by_two() {
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn preserves_values_and_inverts() {
        let x = Tensor::from_fn(&[2, 3, 2, 8], |i| ((i * 37) % 17) as f64 - 3.5);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[2, 6, 4, 2]);
        assert_eq!(x.sum(), y.sum());
        let mut a = x.data().to_vec();
        let mut b = y.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        assert_eq!(pixel_unshuffle(&y, 2).unwrap(), x);
    }

    #[test]
    fn rejects_indivisible_channels() {
        assert!(pixel_shuffle(&Tensor::<f32>::zeros(&[1, 2, 2, 6]), 2).is_err());
    }
}
