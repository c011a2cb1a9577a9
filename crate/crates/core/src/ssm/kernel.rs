//! Selective state-space recurrence.
//!
//! Per channel `d` and state index `n`:
//!
//! ```text
//! h[t] = exp(Δ[t,d]·A[d,n]) · h[t-1] + Δ[t,d]·B[t,n]·x[t,d]
//! y[t,d] = Σ_n C[t,n]·h[t,n] + D[d]·x[t,d]
//! ```
//!
//! with `h[-1] = 0`. Inputs are batched: `x, delta: [batch, L, D]`,
//! `b, c: [batch, L, N]`, `a: [D, N]`, `d_skip: [D]`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Channels per scan task. Fixed so task boundaries never depend on thread count.
const CHANNEL_GROUP: usize = 8;

#[derive(Debug, Clone, Copy)]
pub struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub d: usize,
    pub n: usize,
}

pub struct ScanInputs<'a, T> {
    pub x: &'a Tensor<T>,
    pub delta: &'a Tensor<T>,
    pub a: &'a Tensor<T>,
    pub b: &'a Tensor<T>,
    pub c: &'a Tensor<T>,
    pub d_skip: &'a Tensor<T>,
}

impl<T: Real> ScanInputs<'_, T> {
    pub fn dims(&self) -> Result<ScanDims> {
        let &[batch, len, d] = self.x.shape() else {
            return Err(Error::Shape(format!("scan x must be [batch, L, D], got {:?}", self.x.shape())));
        };
        let &[ad, n] = self.a.shape() else {
            return Err(Error::Shape(format!("scan A must be [D, N], got {:?}", self.a.shape())));
        };
        let dims = ScanDims { batch, len, d, n };
        let checks: [(&str, &Tensor<T>, Vec<usize>); 4] = [
            ("delta", self.delta, vec![batch, len, d]),
            ("B", self.b, vec![batch, len, n]),
            ("C", self.c, vec![batch, len, n]),
            ("D", self.d_skip, vec![d]),
        ];
        if ad != d {
            return Err(Error::Shape(format!("scan A has {ad} channels, x has {d}")));
        }
        for (name, t, want) in checks {
            if t.shape() != want.as_slice() {
                return Err(Error::Shape(format!("scan {name} must be {want:?}, got {:?}", t.shape())));
            }
        }
        Ok(dims)
    }
}

fn tasks(dims: ScanDims) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for b in 0..dims.batch {
        let mut d0 = 0;
        while d0 < dims.d {
            let d1 = (d0 + CHANNEL_GROUP).min(dims.d);
            out.push((b, d0, d1));
            d0 = d1;
        }
    }
    out
}

/// Zero-order-hold discretization: `Ā = exp(Δ·A)`, `B̄ = Δ·B`, both `[L, D, N]`.
pub fn discretize<T: Real>(delta: &Tensor<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let &[l, d] = delta.shape() else {
        return Err(Error::Shape("delta must be [L, D]".into()));
    };
    let &[ad, n] = a.shape() else {
        return Err(Error::Shape("A must be [D, N]".into()));
    };
    if ad != d || b.shape() != [l, n] {
        return Err(Error::Shape("discretize: inconsistent dimensions".into()));
    }
    if let Some(bad) = delta.data().iter().find(|&&x| !(x > T::zero())) {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive (missing softplus?), found {bad}"
        )));
    }
    let mut abar = Vec::with_capacity(l * d * n);
    let mut bbar = Vec::with_capacity(l * d * n);
    for t in 0..l {
        for ch in 0..d {
            let dt = delta.data()[t * d + ch];
            for k in 0..n {
                abar.push((dt * a.data()[ch * n + k]).exp());
                bbar.push(dt * b.data()[t * n + k]);
            }
        }
    }
    Ok((Tensor::from_vec(&[l, d, n], abar)?, Tensor::from_vec(&[l, d, n], bbar)?))
}

/// Sequential selective scan; linear in `L`.
pub fn selective_scan<T: Real>(inp: &ScanInputs<'_, T>) -> Result<Tensor<T>> {
    let dims = inp.dims()?;
    let ScanDims { batch, len, d, n } = dims;
    let (x, dl, a, bm, cm, ds) = (
        inp.x.data(),
        inp.delta.data(),
        inp.a.data(),
        inp.b.data(),
        inp.c.data(),
        inp.d_skip.data(),
    );
    let parts: Vec<Vec<T>> = tasks(dims)
        .into_par_iter()
        .map(|(b, d0, d1)| {
            let g = d1 - d0;
            let mut h = vec![T::zero(); g * n];
            let mut y = vec![T::zero(); len * g];
            for t in 0..len {
                let row = (b * len + t) * d;
                let brow = &bm[(b * len + t) * n..][..n];
                let crow = &cm[(b * len + t) * n..][..n];
                for j in 0..g {
                    let ch = d0 + j;
                    let dt = dl[row + ch];
                    let xv = x[row + ch];
                    let hs = &mut h[j * n..][..n];
                    let ar = &a[ch * n..][..n];
                    let mut acc = T::zero();
                    for k in 0..n {
                        hs[k] = (dt * ar[k]).exp() * hs[k] + dt * brow[k] * xv;
                        acc += crow[k] * hs[k];
                    }
                    y[t * g + j] = acc + ds[ch] * xv;
                }
            }
            y
        })
        .collect();
    let mut out = vec![T::zero(); batch * len * d];
    for ((b, d0, d1), part) in tasks(dims).into_iter().zip(parts) {
        let g = d1 - d0;
        for t in 0..len {
            out[(b * len + t) * d + d0..][..g].copy_from_slice(&part[t * g..][..g]);
        }
    }
    Tensor::from_vec(&[batch, len, d], out)
}

pub struct ScanGrads<T> {
    pub x: Tensor<T>,
    pub delta: Tensor<T>,
    pub a: Tensor<T>,
    pub b: Tensor<T>,
    pub c: Tensor<T>,
    pub d_skip: Tensor<T>,
}

struct TaskGrads<T> {
    dx: Vec<T>,
    ddelta: Vec<T>,
    da: Vec<T>,
    db: Vec<T>,
    dc: Vec<T>,
    dd: Vec<T>,
}

/// Adjoint of [`selective_scan`]: states are recomputed forward, then the
/// recurrence is run backwards in time.
pub fn selective_scan_backward<T: Real>(inp: &ScanInputs<'_, T>, grad_y: &Tensor<T>) -> Result<ScanGrads<T>> {
    let dims = inp.dims()?;
    let ScanDims { batch, len, d, n } = dims;
    grad_y.expect_shape(&[batch, len, d])?;
    let (x, dl, a, bm, cm, ds, gy) = (
        inp.x.data(),
        inp.delta.data(),
        inp.a.data(),
        inp.b.data(),
        inp.c.data(),
        inp.d_skip.data(),
        grad_y.data(),
    );
    let task_list = tasks(dims);
    let parts: Vec<TaskGrads<T>> = task_list
        .par_iter()
        .map(|&(b, d0, d1)| {
            let g = d1 - d0;
            // states[t] holds h[t]; states[0] is h[-1] = 0
            let mut states = vec![T::zero(); (len + 1) * g * n];
            for t in 0..len {
                let row = (b * len + t) * d;
                let brow = &bm[(b * len + t) * n..][..n];
                let (prev, cur) = states.split_at_mut((t + 1) * g * n);
                let prev = &prev[t * g * n..];
                for j in 0..g {
                    let ch = d0 + j;
                    let dt = dl[row + ch];
                    let xv = x[row + ch];
                    for k in 0..n {
                        cur[j * n + k] = (dt * a[ch * n + k]).exp() * prev[j * n + k] + dt * brow[k] * xv;
                    }
                }
            }
            let mut out = TaskGrads {
                dx: vec![T::zero(); len * g],
                ddelta: vec![T::zero(); len * g],
                da: vec![T::zero(); g * n],
                db: vec![T::zero(); len * n],
                dc: vec![T::zero(); len * n],
                dd: vec![T::zero(); g],
            };
            let mut gh = vec![T::zero(); g * n];
            for t in (0..len).rev() {
                let row = (b * len + t) * d;
                let brow = &bm[(b * len + t) * n..][..n];
                let crow = &cm[(b * len + t) * n..][..n];
                let h_t = &states[(t + 1) * g * n..][..g * n];
                let h_prev = &states[t * g * n..][..g * n];
                for j in 0..g {
                    let ch = d0 + j;
                    let dt = dl[row + ch];
                    let xv = x[row + ch];
                    let gyv = gy[row + ch];
                    let mut dx = gyv * ds[ch];
                    let mut ddt = T::zero();
                    out.dd[j] += gyv * xv;
                    for k in 0..n {
                        let s = j * n + k;
                        out.dc[t * n + k] += gyv * h_t[s];
                        gh[s] += gyv * crow[k];
                        let ak = a[ch * n + k];
                        let abar = (dt * ak).exp();
                        ddt += gh[s] * (ak * abar * h_prev[s] + brow[k] * xv);
                        out.da[s] += gh[s] * dt * abar * h_prev[s];
                        out.db[t * n + k] += gh[s] * dt * xv;
                        dx += gh[s] * dt * brow[k];
                        gh[s] *= abar;
                    }
                    out.dx[t * g + j] = dx;
                    out.ddelta[t * g + j] = ddt;
                }
            }
            out
        })
        .collect();

    let mut dx = vec![T::zero(); batch * len * d];
    let mut ddelta = vec![T::zero(); batch * len * d];
    let mut da = vec![T::zero(); d * n];
    let mut db = vec![T::zero(); batch * len * n];
    let mut dc = vec![T::zero(); batch * len * n];
    let mut dd = vec![T::zero(); d];
    for (&(b, d0, d1), part) in task_list.iter().zip(&parts) {
        let g = d1 - d0;
        for t in 0..len {
            let row = (b * len + t) * d + d0;
            dx[row..][..g].copy_from_slice(&part.dx[t * g..][..g]);
            ddelta[row..][..g].copy_from_slice(&part.ddelta[t * g..][..g]);
        }
        for (acc, &v) in da[d0 * n..d1 * n].iter_mut().zip(&part.da) {
            *acc += v;
        }
        for (acc, &v) in dd[d0..d1].iter_mut().zip(&part.dd) {
            *acc += v;
        }
        let off = b * len * n;
        for (acc, &v) in db[off..off + len * n].iter_mut().zip(&part.db) {
            *acc += v;
        }
        for (acc, &v) in dc[off..off + len * n].iter_mut().zip(&part.dc) {
            *acc += v;
        }
    }
    Ok(ScanGrads {
        x: Tensor::from_vec(&[batch, len, d], dx)?,
        delta: Tensor::from_vec(&[batch, len, d], ddelta)?,
        a: Tensor::from_vec(&[d, n], da)?,
        b: Tensor::from_vec(&[batch, len, n], db)?,
        c: Tensor::from_vec(&[batch, len, n], dc)?,
        d_skip: Tensor::from_vec(&[d], dd)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn discretize_analytic() {
        let (abar, bbar) = discretize(&t(&[1, 1], &[std::f64::consts::LN_2]), &t(&[1, 1], &[-1.0]), &t(&[1, 1], &[3.0])).unwrap();
        assert!((abar.data()[0] - 0.5).abs() < 1e-15);
        assert!((bbar.data()[0] - 3.0 * std::f64::consts::LN_2).abs() < 1e-15);
        // tiny step: state nearly frozen, injection nearly zero
        let (abar, bbar) = discretize(&t(&[1, 1], &[1e-12]), &t(&[1, 1], &[-4.0]), &t(&[1, 1], &[2.0])).unwrap();
        assert!((abar.data()[0] - 1.0).abs() < 1e-10 && bbar.data()[0].abs() < 1e-10);
    }

    #[test]
    fn discretize_rejects_nonpositive_delta() {
        assert!(matches!(
            discretize(&t(&[1, 1], &[0.0]), &t(&[1, 1], &[-1.0]), &t(&[1, 1], &[1.0])),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn single_step_closed_form() {
        let (x, dt, a, b, c, dsk) = (0.7, 0.3, [-1.0, -2.0], [0.5, -1.5], [2.0, 0.25], 1.1);
        let y = selective_scan(&ScanInputs {
            x: &t(&[1, 1, 1], &[x]),
            delta: &t(&[1, 1, 1], &[dt]),
            a: &t(&[1, 2], &a),
            b: &t(&[1, 1, 2], &b),
            c: &t(&[1, 1, 2], &c),
            d_skip: &t(&[1], &[dsk]),
        })
        .unwrap();
        let want = (c[0] * dt * b[0] + c[1] * dt * b[1]) * x + dsk * x;
        assert!((y.data()[0] - want).abs() < 1e-14);
    }

    #[test]
    fn vanishing_step_is_pure_skip() {
        let l = 5;
        let x = Tensor::from_fn(&[1, l, 2], |i| i as f64 - 3.0);
        let y = selective_scan(&ScanInputs {
            x: &x,
            delta: &Tensor::full(&[1, l, 2], 1e-300),
            a: &Tensor::full(&[2, 3], -1.0),
            b: &Tensor::full(&[1, l, 3], 1.0),
            c: &Tensor::full(&[1, l, 3], 1.0),
            d_skip: &t(&[2], &[0.5, 2.0]),
        })
        .unwrap();
        for (i, v) in y.data().iter().enumerate() {
            let want = x.data()[i] * if i % 2 == 0 { 0.5 } else { 2.0 };
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_dims() {
        let z = |s: &[usize]| Tensor::<f32>::zeros(s);
        let r = selective_scan(&ScanInputs {
            x: &z(&[1, 4, 3]),
            delta: &z(&[1, 4, 3]),
            a: &z(&[3, 2]),
            b: &z(&[1, 4, 3]),
            c: &z(&[1, 4, 2]),
            d_skip: &z(&[3]),
        });
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
