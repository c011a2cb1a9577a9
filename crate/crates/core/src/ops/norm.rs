use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn check<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    let c = x.last_dim();
    if x.shape().is_empty() || c == 0 {
        return Err(Error::Shape("layer_norm needs a nonempty trailing axis".into()));
    }
    gamma.expect_shape(&[c])?;
    beta.expect_shape(&[c])?;
    Ok(c)
}

fn moments<T: Real>(row: &[T], eps: T) -> (T, T) {
    let n = T::from_usize(row.len()).unwrap();
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

/// Per-token standardization over the trailing axis followed by `gamma`, `beta`.
pub fn layer_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let c = check(x, gamma, beta)?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let (mean, rstd) = moments(row, eps);
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * rstd * gamma.data()[i] + beta.data()[i];
        }
    }
    Ok(out)
}

/// `(grad_x, grad_gamma, grad_beta)` for [`layer_norm`].
pub fn layer_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    eps: T,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let c = check(x, gamma, gamma)?;
    grad_out.expect_shape(x.shape())?;
    let n = T::from_usize(c).unwrap();
    let mut gx = vec![T::zero(); x.numel()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    let mut xhat = vec![T::zero(); c];
    let mut gxhat = vec![T::zero(); c];
    for ((row, g), dst) in x
        .data()
        .chunks_exact(c)
        .zip(grad_out.data().chunks_exact(c))
        .zip(gx.chunks_exact_mut(c))
    {
        let (mean, rstd) = moments(row, eps);
        for i in 0..c {
            xhat[i] = (row[i] - mean) * rstd;
            gxhat[i] = g[i] * gamma.data()[i];
            gg[i] += g[i] * xhat[i];
            gb[i] += g[i];
        }
        let s1 = gxhat.iter().copied().sum::<T>() / n;
        let s2 = gxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
        for i in 0..c {
            dst[i] = rstd * (gxhat[i] - s1 - xhat[i] * s2);
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), gx)?,
        Tensor::from_vec(&[c], gg)?,
        Tensor::from_vec(&[c], gb)?,
    ))
}
