//! Selective state-space scans and the four-direction SS2D unit.

pub mod kernel;

use std::rc::Rc;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binder, Init, ParamSpec, ParamTable, Scope};
use crate::scan::ScanPath;
use crate::tensor::{Real, Tensor};

pub use kernel::{discretize, selective_scan, selective_scan_backward, ScanGrads, ScanInputs};

/// Width parameters of one SS2D unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ss2dDims {
    /// Model width `C`.
    pub c: usize,
    /// Inner SSM width `D`.
    pub d: usize,
    /// State size `N`.
    pub n: usize,
    /// Bottleneck of the Δ projection.
    pub dt_rank: usize,
    /// Depthwise 3×3 on the inner features before the scans.
    pub dwconv: bool,
}

/// Parameter layout of an SS2D unit under `prefix`.
///
/// Projections follow the cross-scan convention: bias-free in/out
/// projections, independent SSM parameters for each of the four directions.
pub fn ss2d_param_specs(prefix: &str, dims: Ss2dDims) -> Vec<ParamSpec> {
    let Ss2dDims { c, d, n, dt_rank, dwconv } = dims;
    let p = |s: &str| format!("{prefix}.{s}");
    let mut specs = vec![ParamSpec::new(p("in_proj.weight"), &[c, 2 * d], Init::Uniform(1.0 / (c as f64).sqrt()))];
    if dwconv {
        specs.push(ParamSpec::new(p("dwconv.weight"), &[d, 1, 3, 3], Init::Uniform(1.0 / 3.0)));
        specs.push(ParamSpec::new(p("dwconv.bias"), &[d], Init::Uniform(1.0 / 3.0)));
    }
    for i in 0..4 {
        let q = |s: &str| p(&format!("dir{i}.{s}"));
        specs.push(ParamSpec::new(q("x_proj.weight"), &[d, dt_rank + 2 * n], Init::Uniform(1.0 / (d as f64).sqrt())));
        specs.push(ParamSpec::new(q("dt_proj.weight"), &[dt_rank, d], Init::Uniform(1.0 / (dt_rank as f64).sqrt())));
        specs.push(ParamSpec::new(q("dt_proj.bias"), &[d], Init::DtBias { min: 1e-3, max: 1e-1 }));
        specs.push(ParamSpec::new(q("a_log"), &[d, n], Init::S4dRealLog));
        specs.push(ParamSpec::new(q("d_skip"), &[d], Init::Const(1.0)));
    }
    specs.push(ParamSpec::new(p("out_norm.weight"), &[d], Init::Const(1.0)));
    specs.push(ParamSpec::new(p("out_norm.bias"), &[d], Init::Const(0.0)));
    specs.push(ParamSpec::new(p("out_proj.weight"), &[d, c], Init::Uniform(1.0 / (d as f64).sqrt())));
    specs
}

/// How the tokens handed to [`ss2d_graph`] are arranged.
#[derive(Debug, Clone)]
pub struct TokenGrid {
    /// Independent scan sequences (views for intra scans, 1 otherwise).
    pub scan_batch: usize,
    /// 2D arrangement `(images, rows, cols)` used by the depthwise conv.
    pub images: (usize, usize, usize),
}

/// Evaluation knobs. The merge always sums directions in index order;
/// `eval_order` only changes the order the branches are computed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ss2dOptions {
    pub eval_order: [usize; 4],
    /// Fault injection for self-checks: sum branches in evaluation order.
    pub merge_in_eval_order: bool,
}

impl Default for Ss2dOptions {
    fn default() -> Self {
        Ss2dOptions {
            eval_order: [0, 1, 2, 3],
            merge_in_eval_order: false,
        }
    }
}

/// SS2D on `x: [tokens, C]`.
///
/// `paths[i]` lists, for every position of every scan sequence, the token it
/// reads (already batched over `grid.scan_batch` sequences).
pub fn ss2d_graph<T: Real>(
    p: &Scope<'_, '_, T>,
    x: &Var<T>,
    paths: &[Rc<Vec<u32>>; 4],
    grid: &TokenGrid,
    opts: Ss2dOptions,
) -> Result<Var<T>> {
    let tape = p.tape();
    let &[tokens, _c] = x.shape() else {
        return Err(Error::Shape(format!("ss2d input must be [tokens, C], got {:?}", x.shape())));
    };
    for path in paths {
        if path.len() != tokens {
            return Err(Error::Shape(format!("scan path covers {} tokens, input has {tokens}", path.len())));
        }
    }
    if tokens % grid.scan_batch.max(1) != 0 {
        return Err(Error::Shape("token count not divisible by scan batch".into()));
    }
    let in_w = p.get("in_proj.weight")?;
    let d = in_w.shape()[1] / 2;
    let xz = tape.linear(x, &in_w, None)?;
    let parts = tape.split_last(&xz, &[d, d])?;
    let (mut xs, z) = (parts[0].clone(), parts[1].clone());
    if let Some(dw) = p.try_get("dwconv.weight")? {
        let (ni, hi, wi) = grid.images;
        if ni * hi * wi != tokens {
            return Err(Error::Shape("dwconv grid does not cover the tokens".into()));
        }
        let img = tape.reshape(&xs, &[ni, hi, wi, d])?;
        let conv = tape.dwconv3x3(&img, &dw, p.try_get("dwconv.bias")?.as_ref())?;
        xs = tape.reshape(&conv, &[tokens, d])?;
    }
    let xs = tape.silu(&xs);

    let batch = grid.scan_batch;
    let len = tokens / batch;
    let mut branch: [Option<Var<T>>; 4] = Default::default();
    let mut finished = Vec::with_capacity(4);
    for &i in &opts.eval_order {
        let dir = p.scope(&format!("dir{i}"));
        let path = &paths[i];
        let seq = tape.gather_rows(&xs, path.clone(), d, &[tokens, d])?;
        let wx = dir.get("x_proj.weight")?;
        let n = (wx.shape()[1] - dir.get("dt_proj.weight")?.shape()[0]) / 2;
        let r = wx.shape()[1] - 2 * n;
        let x_dbl = tape.linear(&seq, &wx, None)?;
        let pieces = tape.split_last(&x_dbl, &[r, n, n])?;
        let dt = tape.linear(&pieces[0], &dir.get("dt_proj.weight")?, Some(&dir.get("dt_proj.bias")?))?;
        let delta = tape.softplus(&dt);
        let a = tape.neg_exp(&dir.get("a_log")?);
        let y = tape.selective_scan(
            &tape.reshape(&seq, &[batch, len, d])?,
            &tape.reshape(&delta, &[batch, len, d])?,
            &a,
            &tape.reshape(&pieces[1], &[batch, len, n])?,
            &tape.reshape(&pieces[2], &[batch, len, n])?,
            &dir.get("d_skip")?,
        )?;
        let y = tape.reshape(&y, &[tokens, d])?;
        let inverse = Rc::new(crate::scan::invert(path)?);
        let back = tape.gather_rows(&y, inverse, d, &[tokens, d])?;
        branch[i] = Some(back.clone());
        finished.push(back);
    }
    let merged = if opts.merge_in_eval_order {
        tape.sum_n(&finished)?
    } else {
        let ordered: Vec<Var<T>> = branch
            .into_iter()
            .map(|b| b.ok_or_else(|| Error::InvalidArgument("eval_order must name every direction".into())))
            .collect::<Result<_>>()?;
        tape.sum_n(&ordered)?
    };
    let normed = tape.layer_norm(&merged, &p.get("out_norm.weight")?, &p.get("out_norm.bias")?)?;
    let gated = tape.mul(&normed, &tape.silu(&z))?;
    tape.linear(&gated, &p.get("out_proj.weight")?, None)
}

/// Parameters of one scan direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmDirectionParams<T> {
    /// `A = -exp(a_log)`, `[D, N]`.
    pub a_log: Tensor<T>,
    pub d_skip: Tensor<T>,
    /// `[D, dt_rank + 2N]`, producing `(Δ-latent, B, C)`.
    pub w_x: Tensor<T>,
    pub w_dt: Tensor<T>,
    pub b_dt: Tensor<T>,
}

/// Owned SS2D parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Ss2dBlock<T> {
    pub in_proj: Tensor<T>,
    pub dwconv: Option<(Tensor<T>, Tensor<T>)>,
    pub dirs: [SsmDirectionParams<T>; 4],
    pub out_norm: (Tensor<T>, Tensor<T>),
    pub out_proj: Tensor<T>,
}

impl<T: Real> Ss2dBlock<T> {
    pub fn init(dims: Ss2dDims, rng: &mut impl rand::Rng) -> Self {
        let table = crate::params::materialize(&ss2d_param_specs("b", dims), rng);
        Self::from_table("b", &table).expect("freshly built table")
    }

    pub fn from_table(prefix: &str, t: &ParamTable<T>) -> Result<Self> {
        let get = |s: &str| {
            let k = format!("{prefix}.{s}");
            t.get(&k).cloned().ok_or(Error::MissingParameter(k))
        };
        let dwconv = match (get("dwconv.weight"), get("dwconv.bias")) {
            (Ok(w), Ok(b)) => Some((w, b)),
            _ => None,
        };
        let dir = |i: usize| -> Result<SsmDirectionParams<T>> {
            Ok(SsmDirectionParams {
                a_log: get(&format!("dir{i}.a_log"))?,
                d_skip: get(&format!("dir{i}.d_skip"))?,
                w_x: get(&format!("dir{i}.x_proj.weight"))?,
                w_dt: get(&format!("dir{i}.dt_proj.weight"))?,
                b_dt: get(&format!("dir{i}.dt_proj.bias"))?,
            })
        };
        Ok(Ss2dBlock {
            in_proj: get("in_proj.weight")?,
            dwconv,
            dirs: [dir(0)?, dir(1)?, dir(2)?, dir(3)?],
            out_norm: (get("out_norm.weight")?, get("out_norm.bias")?),
            out_proj: get("out_proj.weight")?,
        })
    }

    pub fn to_table(&self, prefix: &str) -> ParamTable<T> {
        let mut t = ParamTable::new();
        let mut put = |s: &str, v: &Tensor<T>| {
            t.insert(format!("{prefix}.{s}"), v.clone());
        };
        put("in_proj.weight", &self.in_proj);
        if let Some((w, b)) = &self.dwconv {
            put("dwconv.weight", w);
            put("dwconv.bias", b);
        }
        for (i, d) in self.dirs.iter().enumerate() {
            put(&format!("dir{i}.x_proj.weight"), &d.w_x);
            put(&format!("dir{i}.dt_proj.weight"), &d.w_dt);
            put(&format!("dir{i}.dt_proj.bias"), &d.b_dt);
            put(&format!("dir{i}.a_log"), &d.a_log);
            put(&format!("dir{i}.d_skip"), &d.d_skip);
        }
        put("out_norm.weight", &self.out_norm.0);
        put("out_norm.bias", &self.out_norm.1);
        put("out_proj.weight", &self.out_proj);
        t
    }
}

/// Runs SS2D on `x: [tokens, C]` with the given single-sequence or per-view paths.
///
/// Per-view paths (shorter than `tokens`) are repeated over consecutive views,
/// and the depthwise conv (if present) sees each view as an `h×w` image.
pub fn ss2d_forward<T: Real>(
    x: &Tensor<T>,
    paths: &[ScanPath; 4],
    image_hw: (usize, usize),
    blk: &Ss2dBlock<T>,
    opts: Ss2dOptions,
) -> Result<Tensor<T>> {
    let tokens = x.shape().first().copied().unwrap_or(0);
    let plen = paths[0].len();
    if plen == 0 || tokens % plen != 0 {
        return Err(Error::Shape(format!("path length {plen} does not tile {tokens} tokens")));
    }
    let batch = tokens / plen;
    let (h, w) = image_hw;
    if h * w == 0 || tokens % (h * w) != 0 {
        return Err(Error::Shape("image extent does not tile the tokens".into()));
    }
    let table = blk.to_table("ss2d");
    let tape = Tape::inference();
    let binder = Binder::new(&tape, &table);
    let idx: [Rc<Vec<u32>>; 4] = std::array::from_fn(|i| Rc::new(crate::scan::batched(&paths[i].forward, batch)));
    let grid = TokenGrid {
        scan_batch: batch,
        images: (tokens / (h * w), h, w),
    };
    let y = ss2d_graph(&binder.scope("ss2d"), &tape.constant(x.clone()), &idx, &grid, opts)?;
    Ok(y.into_value())
}
