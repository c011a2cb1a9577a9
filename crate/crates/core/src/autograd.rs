//! Tape-based reverse-mode differentiation over the network's op set.
//!
//! A [`Tape`] records one node per op applied to a tracked [`Var`]. With
//! recording disabled the same calls just evaluate, so the model has a
//! single forward definition for both inference and training. Nodes are
//! appended in evaluation order, so reverse id order is a valid reverse
//! topological order and gradient accumulation order is fixed.

use std::cell::RefCell;
use std::rc::Rc;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::ops::{act, conv, linear as lin, norm, shuffle};
use crate::ops::conv::{ConvWeights, Padding};
use crate::ssm::kernel::{self as scan, ScanInputs};
use crate::tensor::{Real, Tensor};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T> {
    op: &'static str,
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
    leaf: Option<String>,
}

/// A value on the tape. Cloning is cheap (shared storage).
#[derive(Clone)]
pub struct Var<T> {
    id: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    pub fn into_value(self) -> Tensor<T> {
        Rc::try_unwrap(self.value).unwrap_or_else(|rc| (*rc).clone())
    }
}

/// Gradients of one backward pass, addressable by variable or by leaf name.
pub struct Gradients<T> {
    by_id: Vec<Option<Tensor<T>>>,
    names: Vec<Option<String>>,
}

/// Gradient per named parameter, in first-use order.
pub type GradientTable<T> = IndexMap<String, Tensor<T>>;

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        v.id.and_then(|id| self.by_id[id].as_ref())
    }

    /// Gradient of `v`, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: &Var<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape()))
    }

    pub fn into_table(self) -> GradientTable<T> {
        let mut out = IndexMap::new();
        for (g, name) in self.by_id.into_iter().zip(self.names) {
            if let (Some(g), Some(name)) = (g, name) {
                out.insert(name, g);
            }
        }
        out
    }
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that evaluates without recording anything.
    pub fn inference() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A named trainable leaf.
    pub fn param(&self, name: impl Into<String>, value: Tensor<T>) -> Var<T> {
        if !self.recording {
            return self.constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "param",
            inputs: vec![],
            backward: None,
            leaf: Some(name.into()),
        });
        Var {
            id: Some(nodes.len() - 1),
            value: Rc::new(value),
        }
    }

    /// An untracked value; no gradient flows into it.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var {
            id: None,
            value: Rc::new(value),
        }
    }

    /// Records an op with a caller-supplied backward rule.
    ///
    /// `backward` maps the output gradient to one optional gradient per input.
    pub fn custom(
        &self,
        op: &'static str,
        inputs: &[&Var<T>],
        value: Tensor<T>,
        backward: impl Fn(&Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> + 'static,
    ) -> Var<T> {
        let ids: Vec<Option<usize>> = inputs.iter().map(|v| v.id).collect();
        if !self.recording || ids.iter().all(Option::is_none) {
            return self.constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            inputs: ids,
            backward: Some(Box::new(backward)),
            leaf: None,
        });
        Var {
            id: Some(nodes.len() - 1),
            value: Rc::new(value),
        }
    }

    fn tracked(&self, inputs: &[&Var<T>]) -> bool {
        self.recording && inputs.iter().any(|v| v.id.is_some())
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar loss, got {:?}", loss.shape())));
        }
        let Some(root) = loss.id else {
            return Err(Error::InvalidArgument("loss is detached from every parameter".into()));
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::full(loss.shape(), T::one()));
        for id in (0..=root).rev() {
            let node = &nodes[id];
            let Some(bw) = &node.backward else { continue };
            let Some(g) = grads[id].take() else { continue };
            let input_grads = bw(&g).map_err(|e| Error::InvalidArgument(format!("backward of {}: {e}", node.op)))?;
            for (inp, ig) in node.inputs.iter().zip(input_grads) {
                if let (Some(inp), Some(ig)) = (inp, ig) {
                    match &mut grads[*inp] {
                        Some(acc) => acc.add_assign(&ig),
                        slot => *slot = Some(ig),
                    }
                }
            }
        }
        Ok(Gradients {
            by_id: grads,
            names: nodes.iter().map(|n| n.leaf.clone()).collect(),
        })
    }

    // ---------------------------------------------------------------- ops

    pub fn linear(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
        let y = lin::linear(&x.value, &w.value, b.map(|b| &*b.value))?;
        let mut ins = vec![x, w];
        ins.extend(b);
        if !self.tracked(&ins) {
            return Ok(self.constant(y));
        }
        let (xv, wv, has_b) = (x.value.clone(), w.value.clone(), b.is_some());
        Ok(self.custom("linear", &ins, y, move |g| {
            let (gx, gw, gb) = lin::linear_backward(&xv, &wv, has_b, g)?;
            let mut out = vec![Some(gx), Some(gw)];
            if has_b {
                out.push(gb);
            }
            Ok(out)
        }))
    }

    pub fn conv2d(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, stride: usize, padding: Padding) -> Result<Var<T>> {
        let cw = ConvWeights::new((*w.value).clone(), b.map(|b| (*b.value).clone()))?;
        let y = conv::conv2d(&x.value, &cw, stride, padding)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        if !self.tracked(&ins) {
            return Ok(self.constant(y));
        }
        let xv = x.value.clone();
        Ok(self.custom("conv2d", &ins, y, move |g| {
            let gr = conv::conv2d_backward(&xv, &cw, stride, padding, g)?;
            let mut out = vec![Some(gr.x), Some(gr.weight)];
            if cw.bias.is_some() {
                out.push(gr.bias);
            }
            Ok(out)
        }))
    }

    pub fn dwconv3x3(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
        let y = conv::dwconv3x3(&x.value, &w.value, b.map(|b| &*b.value))?;
        let mut ins = vec![x, w];
        ins.extend(b);
        if !self.tracked(&ins) {
            return Ok(self.constant(y));
        }
        let (xv, wv, has_b) = (x.value.clone(), w.value.clone(), b.is_some());
        Ok(self.custom("dwconv3x3", &ins, y, move |g| {
            let (gx, gw, gb) = conv::dwconv3x3_backward(&xv, &wv, has_b, g)?;
            let mut out = vec![Some(gx), Some(gw)];
            if has_b {
                out.push(gb);
            }
            Ok(out)
        }))
    }

    pub fn layer_norm(&self, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>) -> Result<Var<T>> {
        let eps = T::lit(norm::LAYER_NORM_EPS);
        let y = norm::layer_norm(&x.value, &gamma.value, &beta.value, eps)?;
        if !self.tracked(&[x, gamma, beta]) {
            return Ok(self.constant(y));
        }
        let (xv, gv) = (x.value.clone(), gamma.value.clone());
        Ok(self.custom("layer_norm", &[x, gamma, beta], y, move |g| {
            let (gx, gg, gb) = norm::layer_norm_backward(&xv, &gv, eps, g)?;
            Ok(vec![Some(gx), Some(gg), Some(gb)])
        }))
    }

    fn unary(&self, op: &'static str, x: &Var<T>, f: fn(T) -> T, df: fn(T) -> T) -> Var<T> {
        let y = x.value.map(f);
        if !self.tracked(&[x]) {
            return self.constant(y);
        }
        let xv = x.value.clone();
        self.custom(op, &[x], y, move |g| {
            Ok(vec![Some(g.zip_map(&xv, |gi, xi| gi * df(xi))?)])
        })
    }

    pub fn silu(&self, x: &Var<T>) -> Var<T> {
        self.unary("silu", x, act::silu, act::silu_grad)
    }

    pub fn gelu(&self, x: &Var<T>) -> Var<T> {
        self.unary("gelu", x, act::gelu, act::gelu_grad)
    }

    pub fn softplus(&self, x: &Var<T>) -> Var<T> {
        self.unary("softplus", x, act::softplus, act::softplus_grad)
    }

    pub fn leaky_relu(&self, x: &Var<T>, slope: f64) -> Var<T> {
        let s = T::lit(slope);
        let y = x.value.map(|v| if v >= T::zero() { v } else { v * s });
        if !self.tracked(&[x]) {
            return self.constant(y);
        }
        let xv = x.value.clone();
        self.custom("leaky_relu", &[x], y, move |g| {
            Ok(vec![Some(g.zip_map(&xv, |gi, xi| if xi >= T::zero() { gi } else { gi * s })?)])
        })
    }

    /// `-exp(x)`: maps a log-parameterization to a strictly negative state matrix.
    pub fn neg_exp(&self, x: &Var<T>) -> Var<T> {
        self.unary("neg_exp", x, |v| -v.exp(), |v| -v.exp())
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = a.value.zip_map(&b.value, |x, y| x + y)?;
        if !self.tracked(&[a, b]) {
            return Ok(self.constant(y));
        }
        Ok(self.custom("add", &[a, b], y, |g| Ok(vec![Some(g.clone()), Some(g.clone())])))
    }

    /// Sum of several same-shape values, accumulated left to right.
    pub fn sum_n(&self, xs: &[Var<T>]) -> Result<Var<T>> {
        let (first, rest) = xs.split_first().ok_or_else(|| Error::InvalidArgument("sum of nothing".into()))?;
        let mut y = (*first.value).clone();
        for x in rest {
            x.value.expect_shape(y.shape())?;
            y.add_assign(&x.value);
        }
        let refs: Vec<&Var<T>> = xs.iter().collect();
        if !self.tracked(&refs) {
            return Ok(self.constant(y));
        }
        let n = xs.len();
        Ok(self.custom("sum_n", &refs, y, move |g| Ok(vec![Some(g.clone()); n])))
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = a.value.zip_map(&b.value, |x, y| x * y)?;
        if !self.tracked(&[a, b]) {
            return Ok(self.constant(y));
        }
        let (av, bv) = (a.value.clone(), b.value.clone());
        Ok(self.custom("mul", &[a, b], y, move |g| {
            Ok(vec![Some(g.zip_map(&bv, |gi, bi| gi * bi)?), Some(g.zip_map(&av, |gi, ai| gi * ai)?)])
        }))
    }

    /// `s · x` for a one-element `s`.
    pub fn scale(&self, x: &Var<T>, s: &Var<T>) -> Result<Var<T>> {
        if s.value.numel() != 1 {
            return Err(Error::Shape(format!("scale factor must have one element, got {:?}", s.shape())));
        }
        let sv = s.value.data()[0];
        let y = x.value.map(|v| v * sv);
        if !self.tracked(&[x, s]) {
            return Ok(self.constant(y));
        }
        let xv = x.value.clone();
        let s_shape = s.shape().to_vec();
        Ok(self.custom("scale", &[x, s], y, move |g| {
            let gs: T = g.data().iter().zip(xv.data()).map(|(&a, &b)| a * b).sum();
            Ok(vec![Some(g.map(|v| v * sv)), Some(Tensor::from_vec(&s_shape, vec![gs])?)])
        }))
    }

    /// Adds `p: [B, C]` to every position of `x: [B, ..., C]` in batch entry `b`.
    pub fn add_per_batch(&self, x: &Var<T>, p: &Var<T>) -> Result<Var<T>> {
        let &[b, c] = p.shape() else {
            return Err(Error::Shape(format!("per-batch addend must be [B, C], got {:?}", p.shape())));
        };
        if x.shape().first() != Some(&b) || x.value.last_dim() != c {
            return Err(Error::Shape(format!("cannot add {:?} to {:?}", p.shape(), x.shape())));
        }
        let per = x.value.numel() / b.max(1);
        let mut y = (*x.value).clone();
        for (chunk, prow) in y.data_mut().chunks_exact_mut(per.max(1)).zip(p.value.data().chunks_exact(c.max(1))) {
            for row in chunk.chunks_exact_mut(c) {
                for (v, &q) in row.iter_mut().zip(prow) {
                    *v += q;
                }
            }
        }
        if !self.tracked(&[x, p]) {
            return Ok(self.constant(y));
        }
        let p_shape = p.shape().to_vec();
        Ok(self.custom("add_per_batch", &[x, p], y, move |g| {
            let mut gp = vec![T::zero(); b * c];
            for (chunk, prow) in g.data().chunks_exact(per.max(1)).zip(gp.chunks_exact_mut(c.max(1))) {
                for row in chunk.chunks_exact(c) {
                    for (q, &v) in prow.iter_mut().zip(row) {
                        *q += v;
                    }
                }
            }
            Ok(vec![Some(g.clone()), Some(Tensor::from_vec(&p_shape, gp)?)])
        }))
    }

    /// Row gather: output row `r` is input row `index[r]`, rows being runs of
    /// `row_len` elements. Backward scatters (adds) into the source rows.
    pub fn gather_rows(&self, x: &Var<T>, index: Rc<Vec<u32>>, row_len: usize, out_shape: &[usize]) -> Result<Var<T>> {
        let rows = x.value.numel() / row_len.max(1);
        if out_shape.iter().product::<usize>() != index.len() * row_len {
            return Err(Error::Shape(format!("gather into {out_shape:?} from {} rows of {row_len}", index.len())));
        }
        let src = x.value.data();
        let mut out = Vec::with_capacity(index.len() * row_len);
        for &r in index.iter() {
            let r = r as usize;
            if r >= rows {
                return Err(Error::Shape(format!("gather index {r} out of {rows} rows")));
            }
            out.extend_from_slice(&src[r * row_len..][..row_len]);
        }
        let y = Tensor::from_vec(out_shape, out)?;
        if !self.tracked(&[x]) {
            return Ok(self.constant(y));
        }
        let in_shape = x.shape().to_vec();
        Ok(self.custom("gather_rows", &[x], y, move |g| {
            let mut gx = vec![T::zero(); in_shape.iter().product()];
            for (row, &r) in g.data().chunks_exact(row_len.max(1)).zip(index.iter()) {
                for (d, &v) in gx[r as usize * row_len..][..row_len].iter_mut().zip(row) {
                    *d += v;
                }
            }
            Ok(vec![Some(Tensor::from_vec(&in_shape, gx)?)])
        }))
    }

    pub fn pixel_shuffle(&self, x: &Var<T>, alpha: usize) -> Result<Var<T>> {
        let (shape, idx) = shuffle::pixel_shuffle_index(x.shape(), alpha)?;
        self.gather_rows(x, Rc::new(idx), 1, &shape)
    }

    pub fn reshape(&self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let y = (*x.value).clone().reshape(shape)?;
        if !self.tracked(&[x]) {
            return Ok(self.constant(y));
        }
        let in_shape = x.shape().to_vec();
        Ok(self.custom("reshape", &[x], y, move |g| Ok(vec![Some(g.clone().reshape(&in_shape)?)])))
    }

    /// Splits the trailing axis into consecutive pieces of the given widths.
    pub fn split_last(&self, x: &Var<T>, widths: &[usize]) -> Result<Vec<Var<T>>> {
        let c = x.value.last_dim();
        if widths.iter().sum::<usize>() != c {
            return Err(Error::Shape(format!("split widths {widths:?} do not sum to {c}")));
        }
        let rows = x.value.numel() / c.max(1);
        let mut offset = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &wd in widths {
            let mut data = Vec::with_capacity(rows * wd);
            for row in x.value.data().chunks_exact(c.max(1)) {
                data.extend_from_slice(&row[offset..offset + wd]);
            }
            let mut shape = x.shape().to_vec();
            *shape.last_mut().unwrap() = wd;
            let y = Tensor::from_vec(&shape, data)?;
            let var = if self.tracked(&[x]) {
                let full = x.shape().to_vec();
                let off = offset;
                self.custom("split_last", &[x], y, move |g| {
                    let mut gx = vec![T::zero(); full.iter().product()];
                    for (dst, src) in gx.chunks_exact_mut(c).zip(g.data().chunks_exact(wd.max(1))) {
                        dst[off..off + wd].copy_from_slice(src);
                    }
                    Ok(vec![Some(Tensor::from_vec(&full, gx)?)])
                })
            } else {
                self.constant(y)
            };
            out.push(var);
            offset += wd;
        }
        Ok(out)
    }

    /// Concatenates along the trailing axis; leading shapes must agree.
    pub fn concat_last(&self, xs: &[Var<T>]) -> Result<Var<T>> {
        let first = xs.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let lead = &first.shape()[..first.shape().len() - 1];
        let widths: Vec<usize> = xs.iter().map(|x| x.value.last_dim()).collect();
        for x in xs {
            if &x.shape()[..x.shape().len() - 1] != lead {
                return Err(Error::Shape("concat: leading shapes differ".into()));
            }
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (x, &wd) in xs.iter().zip(&widths) {
                data.extend_from_slice(&x.value.data()[r * wd..][..wd]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let y = Tensor::from_vec(&shape, data)?;
        let refs: Vec<&Var<T>> = xs.iter().collect();
        if !self.tracked(&refs) {
            return Ok(self.constant(y));
        }
        let shapes: Vec<Vec<usize>> = xs.iter().map(|x| x.shape().to_vec()).collect();
        Ok(self.custom("concat_last", &refs, y, move |g| {
            let mut offset = 0;
            let mut out = Vec::with_capacity(widths.len());
            for (&wd, shape) in widths.iter().zip(&shapes) {
                let mut data = Vec::with_capacity(rows * wd);
                for row in g.data().chunks_exact(total) {
                    data.extend_from_slice(&row[offset..offset + wd]);
                }
                out.push(Some(Tensor::from_vec(shape, data)?));
                offset += wd;
            }
            Ok(out)
        }))
    }

    /// Batched selective scan, see [`crate::ssm::kernel`].
    pub fn selective_scan(
        &self,
        x: &Var<T>,
        delta: &Var<T>,
        a: &Var<T>,
        b: &Var<T>,
        c: &Var<T>,
        d_skip: &Var<T>,
    ) -> Result<Var<T>> {
        let y = scan::selective_scan(&ScanInputs {
            x: &x.value,
            delta: &delta.value,
            a: &a.value,
            b: &b.value,
            c: &c.value,
            d_skip: &d_skip.value,
        })?;
        let ins = [x, delta, a, b, c, d_skip];
        if !self.tracked(&ins) {
            return Ok(self.constant(y));
        }
        let saved: [Rc<Tensor<T>>; 6] = ins.map(|v| v.value.clone());
        Ok(self.custom("selective_scan", &ins, y, move |g| {
            let gr = scan::selective_scan_backward(
                &ScanInputs {
                    x: &saved[0],
                    delta: &saved[1],
                    a: &saved[2],
                    b: &saved[3],
                    c: &saved[4],
                    d_skip: &saved[5],
                },
                g,
            )?;
            Ok(vec![Some(gr.x), Some(gr.delta), Some(gr.a), Some(gr.b), Some(gr.c), Some(gr.d_skip)])
        }))
    }

    /// Mean absolute error; the subgradient at zero residual is taken as 0.
    pub fn l1_loss(&self, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
        pred.value.expect_shape(target.shape())?;
        let n = T::from_usize(pred.value.numel().max(1)).unwrap();
        let loss = pred
            .value
            .data()
            .iter()
            .zip(target.value.data())
            .map(|(&p, &t)| (p - t).abs())
            .sum::<T>()
            / n;
        let y = Tensor::scalar(loss);
        if !self.tracked(&[pred, target]) {
            return Ok(self.constant(y));
        }
        let (pv, tv) = (pred.value.clone(), target.value.clone());
        Ok(self.custom("l1_loss", &[pred, target], y, move |g| {
            let s = g.data()[0] / n;
            let gp = pv.zip_map(&tv, |p, t| {
                if p > t {
                    s
                } else if p < t {
                    -s
                } else {
                    T::zero()
                }
            })?;
            let gt = gp.map(|v| -v);
            Ok(vec![Some(gp), Some(gt)])
        }))
    }

    pub fn sum_all(&self, x: &Var<T>) -> Var<T> {
        let y = Tensor::scalar(x.value.sum());
        if !self.tracked(&[x]) {
            return self.constant(y);
        }
        let shape = x.shape().to_vec();
        self.custom("sum_all", &[x], y, move |g| Ok(vec![Some(Tensor::full(&shape, g.data()[0]))]))
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_gradient_is_input() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap());
        let w = tape.param("w", Tensor::from_fn(&[3, 2], |i| i as f64));
        let y = tape.linear(&x, &w, None).unwrap();
        let loss = tape.sum_all(&y);
        let g = tape.backward(&loss).unwrap();
        let gw = g.get(&w).unwrap();
        assert_eq!(gw.data(), &[1.0, 1.0, -2.0, -2.0, 0.5, 0.5]);
    }

    #[test]
    fn pixel_shuffle_gradient_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.param("x", Tensor::from_fn(&[1, 2, 2, 4], |i| i as f64));
        let y = tape.pixel_shuffle(&x, 2).unwrap();
        let g = tape.backward(&tape.sum_all(&y)).unwrap();
        assert!(g.get(&x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.param("x", Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let y = tape.mul(&x, &x).unwrap();
        let z = tape.add(&y, &x).unwrap();
        let g = tape.backward(&tape.sum_all(&z)).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[7.0, 9.0]);
        assert_eq!(g.into_table().keys().collect::<Vec<_>>(), vec!["x"]);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.param("x", Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(&x), Err(Error::Shape(_))));
        let c = tape.constant(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(&c), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn inference_tape_records_nothing() {
        let tape = Tape::<f32>::inference();
        let w = tape.param("w", Tensor::full(&[2, 2], 1.0));
        let x = tape.constant(Tensor::full(&[3, 2], 1.0));
        let y = tape.linear(&x, &w, None).unwrap();
        assert!(!y.is_tracked());
        assert!(tape.is_empty());
        assert_eq!(y.value().data(), &[2.0; 6]);
    }
}
