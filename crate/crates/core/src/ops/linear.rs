use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Rows per GEMM task. Fixed so the partition never depends on thread count.
const ROW_CHUNK: usize = 512;

fn rows_of<T: Real>(x: &Tensor<T>, cin: usize) -> Result<usize> {
    if x.shape().is_empty() || x.last_dim() != cin {
        return Err(Error::Shape(format!(
            "linear expects trailing dimension {cin}, got {:?}",
            x.shape()
        )));
    }
    Ok(x.numel() / cin.max(1))
}

/// Affine map of every token: `y = x @ w + b` with `w: (C_in, C_out)`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let &[cin, cout] = w.shape() else {
        return Err(Error::Shape(format!("linear weight must be 2-D, got {:?}", w.shape())));
    };
    let rows = rows_of(x, cin)?;
    if let Some(b) = b {
        b.expect_shape(&[cout])?;
    }
    let mut out = vec![T::zero(); rows * cout];
    if cout > 0 {
        out.par_chunks_mut(ROW_CHUNK * cout)
            .zip(x.data().par_chunks((ROW_CHUNK * cin).max(1)))
            .for_each(|(dst, src)| {
                let m = dst.len() / cout;
                let beta = match b {
                    Some(b) => {
                        for row in dst.chunks_exact_mut(cout) {
                            row.copy_from_slice(b.data());
                        }
                        T::one()
                    }
                    None => T::zero(),
                };
                T::gemm(m, cin, cout, T::one(), src, cin as isize, 1, w.data(), cout as isize, 1, beta, dst, cout as isize);
            });
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = cout;
    Tensor::from_vec(&shape, out)
}

/// `(grad_x, grad_w, grad_b)` for [`linear`].
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let &[cin, cout] = w.shape() else {
        return Err(Error::Shape("linear weight must be 2-D".into()));
    };
    let rows = rows_of(x, cin)?;
    if grad_out.numel() != rows * cout {
        return Err(Error::Shape("linear grad_out size mismatch".into()));
    }
    let mut gx = vec![T::zero(); rows * cin];
    if cin > 0 {
        gx.par_chunks_mut(ROW_CHUNK * cin)
            .zip(grad_out.data().par_chunks((ROW_CHUNK * cout).max(1)))
            .for_each(|(dst, g)| {
                let m = dst.len() / cin;
                T::gemm(m, cout, cin, T::one(), g, cout as isize, 1, w.data(), 1, cout as isize, T::zero(), dst, cin as isize);
            });
    }
    let mut gw = vec![T::zero(); cin * cout];
    T::gemm(cin, rows, cout, T::one(), x.data(), 1, cin as isize, grad_out.data(), cout as isize, 1, T::zero(), &mut gw, cout as isize);
    let gb = has_bias.then(|| {
        let mut gb = vec![T::zero(); cout];
        for row in grad_out.data().chunks_exact(cout.max(1)) {
            for (a, &v) in gb.iter_mut().zip(row) {
                *a += v;
            }
        }
        Tensor::from_vec(&[cout], gb).unwrap()
    });
    Ok((Tensor::from_vec(x.shape(), gx)?, Tensor::from_vec(w.shape(), gw)?, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_bias_only() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(linear(&x, &eye, Some(&Tensor::zeros(&[3]))).unwrap(), x);
        let b = Tensor::from_vec(&[2], vec![0.5, -1.5]).unwrap();
        let y = linear(&x, &Tensor::zeros(&[3, 2]), Some(&b)).unwrap();
        assert_eq!(y.data(), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn matches_dot_products() {
        let x = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin());
        let w = Tensor::from_fn(&[4, 5], |i| (i as f64 * 0.11).cos());
        let b = Tensor::from_fn(&[5], |i| i as f64);
        let y = linear(&x, &w, Some(&b)).unwrap();
        for r in 0..3 {
            for c in 0..5 {
                let dot: f64 = (0..4).map(|k| x.data()[r * 4 + k] * w.data()[k * 5 + c]).sum::<f64>() + c as f64;
                assert!((y.data()[r * 5 + c] - dot).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn many_rows_cross_chunk_boundary() {
        let x = Tensor::from_fn(&[2 * ROW_CHUNK + 7, 3], |i| (i % 13) as f64);
        let w = Tensor::from_fn(&[3, 2], |i| i as f64 - 2.0);
        let y = linear(&x, &w, None).unwrap();
        let last = 2 * ROW_CHUNK + 6;
        let expect: f64 = (0..3).map(|k| x.data()[last * 3 + k] * w.data()[k * 2 + 1]).sum();
        assert_eq!(y.data()[last * 2 + 1], expect);
    }

    #[test]
    fn shape_mismatch() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        assert!(linear(&x, &Tensor::zeros(&[4, 2]), None).is_err());
        assert!(linear(&x, &Tensor::zeros(&[3, 2]), Some(&Tensor::zeros(&[3]))).is_err());
    }
}
