//! The full network: initial convolutions, angular embedding, stacked
//! Intra/Inter/MacPI blocks, aggregation and pixel-shuffle upsampling.

pub mod audit;
pub mod checkpoint;
pub mod config;

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::lf::{token_order, LfExtents, Layout, LightFieldTensor};
use crate::ops::conv::Padding;
use crate::ops::resize::bicubic_resize_to;
use crate::params::{materialize, Binder, Init, ParamSpec, ParamTable, Scope};
use crate::scan::{self, Family};
use crate::ssm::{ss2d_graph, ss2d_param_specs, Ss2dDims, Ss2dOptions, TokenGrid};
use crate::tensor::{Real, Tensor};

pub use audit::{count_config_params, count_flops, count_params, FlopConvention, FlopReport, ParamReport};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ModelConfig;

/// Number of 3×3 convolutions in the initial feature extractor.
pub const SPA_CONV_LAYERS: usize = 4;
const SPA_CONV_SLOPE: f64 = 0.2;

/// The three sub-blocks of every block, in order.
pub const SUB_BLOCKS: [Family; 3] = [Family::Intra, Family::Inter, Family::MacPi];

fn fan_in(n: usize) -> Init {
    Init::Uniform(1.0 / (n as f64).sqrt())
}

/// Parameter layout for the sub-block `kind` under `prefix`.
pub fn sub_block_specs(prefix: &str, cfg: &ModelConfig, kind: Family) -> Vec<ParamSpec> {
    let c = cfg.c;
    let e = cfg.ffn_expand * c;
    let p = |s: &str| format!("{prefix}.{s}");
    let mut specs = vec![
        ParamSpec::new(p("ln1.weight"), &[c], Init::Const(1.0)),
        ParamSpec::new(p("ln1.bias"), &[c], Init::Const(0.0)),
    ];
    specs.extend(ss2d_param_specs(
        &p("ss2d"),
        Ss2dDims {
            c,
            d: cfg.d_inner(),
            n: cfg.d_state,
            dt_rank: cfg.dt_rank,
            dwconv: kind == Family::Intra,
        },
    ));
    specs.extend([
        ParamSpec::new(p("ln2.weight"), &[c], Init::Const(1.0)),
        ParamSpec::new(p("ln2.bias"), &[c], Init::Const(0.0)),
        ParamSpec::new(p("ffn.fc1.weight"), &[c, e], fan_in(c)),
        ParamSpec::new(p("ffn.fc1.bias"), &[e], fan_in(c)),
        ParamSpec::new(p("ffn.dw.weight"), &[e, 1, 3, 3], fan_in(9)),
        ParamSpec::new(p("ffn.dw.bias"), &[e], fan_in(9)),
        ParamSpec::new(p("ffn.fc2.weight"), &[e, c], fan_in(e)),
        ParamSpec::new(p("ffn.fc2.bias"), &[c], fan_in(e)),
        ParamSpec::new(p("lambda"), &[1], Init::Const(1.0)),
    ]);
    specs
}

/// Every parameter of the network in canonical order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let c = cfg.c;
    let mut specs = vec![ParamSpec::new("spa_conv.0.weight", &[c, 1, 3, 3], fan_in(9))];
    for i in 1..SPA_CONV_LAYERS {
        specs.push(ParamSpec::new(format!("spa_conv.{i}.weight"), &[c, c, 3, 3], fan_in(9 * c)));
    }
    if cfg.p_ang {
        specs.push(ParamSpec::new("p_ang", &[cfg.u * cfg.v, c], Init::Normal(0.02)));
    }
    for b in 0..cfg.k {
        for kind in SUB_BLOCKS {
            specs.extend(sub_block_specs(&format!("blocks.{b}.{}", kind.name()), cfg, kind));
        }
    }
    let a2 = cfg.scale * cfg.scale;
    specs.push(ParamSpec::new("agg_conv.weight", &[c, cfg.k * c, 3, 3], fan_in(9 * cfg.k * c)));
    specs.push(ParamSpec::new("upsampler.expand.weight", &[c * a2, c, 1, 1], fan_in(c)));
    specs.push(ParamSpec::new("upsampler.out.weight", &[1, c, 3, 3], fan_in(9 * c)));
    specs.push(ParamSpec::new("upsampler.out.bias", &[1], fan_in(9 * c)));
    specs
}

/// Parameters plus the configuration that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct L2FMambaModel<T> {
    pub config: ModelConfig,
    pub params: ParamTable<T>,
}

/// Deterministic initialization from `seed`.
pub fn init_model<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<L2FMambaModel<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(L2FMambaModel {
        config: cfg.clone(),
        params: materialize(&param_specs(cfg), &mut rng),
    })
}

impl<T: Real> L2FMambaModel<T> {
    pub fn cast<U: Real>(&self) -> L2FMambaModel<U> {
        L2FMambaModel {
            config: self.config.clone(),
            params: crate::params::cast_table(&self.params),
        }
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params.get_mut(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    /// Checks that the table holds exactly the parameters `config` calls for.
    pub fn validate(&self) -> Result<()> {
        let specs = param_specs(&self.config);
        for s in &specs {
            let t = self.params.get(&s.name).ok_or_else(|| Error::MissingParameter(s.name.clone()))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Shape(format!("parameter `{}` is {:?}, expected {:?}", s.name, t.shape(), s.shape)));
            }
        }
        if self.params.len() != specs.len() {
            let known: std::collections::HashSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
            if let Some(extra) = self.params.keys().find(|k| !known.contains(k.as_str())) {
                return Err(Error::UnexpectedParameter(extra.clone()));
            }
        }
        Ok(())
    }
}

/// Knobs threaded through the forward graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    pub ss2d: Ss2dOptions,
}

fn native_layout(kind: Family) -> Layout {
    match kind {
        Family::Intra => Layout::SaiStack,
        Family::Inter => Layout::SaisMosaic,
        Family::MacPi => Layout::MacPi,
    }
}

/// Outputs of one sub-block.
pub struct SubBlockOut<T: Real> {
    pub out: Var<T>,
    /// Residual-added scan output converted back to SAI-stack order.
    pub z: Var<T>,
}

/// One Intra/Inter/MacPI sub-block on `x: [U·V, H, W, C]` (SAI-stack, channels last).
///
/// The scan unit runs in the kind's native mosaic order; its depthwise conv
/// is used only if the parameter table provides one.
pub fn sub_block_graph<T: Real>(
    p: &Scope<'_, '_, T>,
    kind: Family,
    x: &Var<T>,
    angular: (usize, usize),
    opts: ForwardOptions,
) -> Result<SubBlockOut<T>> {
    let tape = p.tape();
    let &[views, h, w, c] = x.shape() else {
        return Err(Error::Shape(format!("sub-block input must be [views, H, W, C], got {:?}", x.shape())));
    };
    let (u, v) = angular;
    if u * v != views {
        return Err(Error::Shape(format!("{views} views do not form a {u}x{v} grid")));
    }
    let gamma1 = p.get("ln1.weight")?;
    if gamma1.shape() != [c] {
        return Err(Error::Shape(format!("sub-block expects {} channels, input has {c}", gamma1.shape()[0])));
    }
    let tokens = views * h * w;
    let flat = tape.reshape(x, &[tokens, c])?;
    let layout = native_layout(kind);
    let paths = scan::cached_paths(kind, u, v, h, w)?;

    let (native, to_native, grid) = if kind == Family::Intra {
        let idx: [Rc<Vec<u32>>; 4] = std::array::from_fn(|i| Rc::new(scan::batched(&paths[i].forward, views)));
        let grid = TokenGrid {
            scan_batch: views,
            images: (views, h, w),
        };
        (flat.clone(), idx, grid)
    } else {
        let order = token_order(layout, u, v, h, w);
        let pos = scan::invert(&order)?;
        let native = tape.gather_rows(&flat, Rc::new(order), c, &[tokens, c])?;
        let idx: [Rc<Vec<u32>>; 4] =
            std::array::from_fn(|i| Rc::new(paths[i].forward.iter().map(|&t| pos[t as usize]).collect()));
        let (rows, cols) = match layout {
            Layout::SaisMosaic => (u * h, v * w),
            _ => (h * u, w * v),
        };
        let grid = TokenGrid {
            scan_batch: 1,
            images: (1, rows, cols),
        };
        (native, idx, grid)
    };

    let normed = tape.layer_norm(&native, &gamma1, &p.get("ln1.bias")?)?;
    let scanned = ss2d_graph(&p.scope("ss2d"), &normed, &to_native, &grid, opts.ss2d)?;
    let z_native = tape.add(&scanned, &native)?;
    let z = if kind == Family::Intra {
        z_native
    } else {
        let order = token_order(layout, u, v, h, w);
        let pos = scan::invert(&order)?;
        tape.gather_rows(&z_native, Rc::new(pos), c, &[tokens, c])?
    };
    let z = tape.reshape(&z, &[views, h, w, c])?;

    let f = tape.layer_norm(&z, &p.get("ln2.weight")?, &p.get("ln2.bias")?)?;
    let f = tape.linear(&f, &p.get("ffn.fc1.weight")?, Some(&p.get("ffn.fc1.bias")?))?;
    let f = tape.dwconv3x3(&f, &p.get("ffn.dw.weight")?, Some(&p.get("ffn.dw.bias")?))?;
    let f = tape.gelu(&f);
    let f = tape.linear(&f, &p.get("ffn.fc2.weight")?, Some(&p.get("ffn.fc2.bias")?))?;
    let skip = tape.scale(&z, &p.get("lambda")?)?;
    Ok(SubBlockOut {
        out: tape.add(&f, &skip)?,
        z,
    })
}

/// Low-resolution Y views as `[U·V, H, W]`, validated against `cfg`.
pub fn input_views<T: Real>(cfg: &ModelConfig, lf: &LightFieldTensor<T>) -> Result<Tensor<T>> {
    let e = lf.extents();
    if e.u != cfg.u || e.v != cfg.v {
        return Err(Error::Shape(format!(
            "input has {}x{} views, model expects {}x{}",
            e.u, e.v, cfg.u, cfg.v
        )));
    }
    if e.c != 1 {
        return Err(Error::Shape(format!("input must be a single (Y) channel, got {}", e.c)));
    }
    if !lf.tensor().is_finite() {
        return Err(Error::NonFinite("input light field".into()));
    }
    lf.to_layout(Layout::SaiStack).into_tensor().reshape(&[e.views(), e.h, e.w])
}

/// Network graph from `[U·V, H, W]` LR views to `[U·V, αH, αW, 1]`.
pub fn forward_graph<T: Real>(binder: &Binder<'_, T>, cfg: &ModelConfig, lr: &Tensor<T>, opts: ForwardOptions) -> Result<Var<T>> {
    let tape = binder.tape();
    let &[views, h, w] = lr.shape() else {
        return Err(Error::Shape(format!("forward expects [views, H, W], got {:?}", lr.shape())));
    };
    if views != cfg.u * cfg.v {
        return Err(Error::Shape(format!("{views} views, model expects {}", cfg.u * cfg.v)));
    }
    let root = binder.scope("");
    let x = tape.constant(lr.clone().reshape(&[views, h, w, 1])?);

    let mut f = tape.conv2d(&x, &root.get("spa_conv.0.weight")?, None, 1, Padding::Same)?;
    for i in 1..SPA_CONV_LAYERS {
        f = tape.conv2d(&f, &root.get(&format!("spa_conv.{i}.weight"))?, None, 1, Padding::Same)?;
        f = tape.leaky_relu(&f, SPA_CONV_SLOPE);
    }
    if let Some(p_ang) = root.try_get("p_ang")? {
        f = tape.add_per_batch(&f, &p_ang)?;
    }

    let mut outs = Vec::with_capacity(cfg.k);
    for b in 0..cfg.k {
        for kind in SUB_BLOCKS {
            let scope = root.scope(&format!("blocks.{b}.{}", kind.name()));
            f = sub_block_graph(&scope, kind, &f, (cfg.u, cfg.v), opts)?.out;
        }
        outs.push(f.clone());
    }
    let agg = tape.conv2d(&tape.concat_last(&outs)?, &root.get("agg_conv.weight")?, None, 1, Padding::Same)?;
    let up = tape.conv2d(&agg, &root.get("upsampler.expand.weight")?, None, 1, Padding::Same)?;
    let up = tape.pixel_shuffle(&up, cfg.scale)?;
    let residual = tape.conv2d(
        &up,
        &root.get("upsampler.out.weight")?,
        Some(&root.get("upsampler.out.bias")?),
        1,
        Padding::Same,
    )?;

    let base = bicubic_resize_to(lr, h * cfg.scale, w * cfg.scale, true)?;
    let base = tape.constant(base.reshape(&[views, h * cfg.scale, w * cfg.scale, 1])?);
    tape.add(&base, &residual)
}

pub fn forward_with<T: Real>(m: &L2FMambaModel<T>, lf_lr: &LightFieldTensor<T>, opts: ForwardOptions) -> Result<LightFieldTensor<T>> {
    let lr = input_views(&m.config, lf_lr)?;
    let tape = Tape::inference();
    let binder = Binder::new(&tape, &m.params);
    let y = forward_graph(&binder, &m.config, &lr, opts)?;
    let e = lf_lr.extents();
    let out = LfExtents::new(e.u, e.v, 1, e.h * m.config.scale, e.w * m.config.scale);
    LightFieldTensor::new(out, Layout::SaiStack, y.into_value())
}

/// Super-resolves the Y views of `lf_lr` by the model's scale factor.
pub fn forward<T: Real>(m: &L2FMambaModel<T>, lf_lr: &LightFieldTensor<T>) -> Result<LightFieldTensor<T>> {
    forward_with(m, lf_lr, ForwardOptions::default())
}

/// Per-view bicubic upsampling by `scale`, the network's residual base.
pub fn bicubic_upsample<T: Real>(lf_lr: &LightFieldTensor<T>, scale: usize) -> Result<LightFieldTensor<T>> {
    let e = lf_lr.extents();
    let planes = lf_lr.to_layout(Layout::SaiStack).into_tensor().reshape(&[e.views() * e.c, e.h, e.w])?;
    let up = bicubic_resize_to(&planes, e.h * scale, e.w * scale, true)?;
    LightFieldTensor::new(LfExtents::new(e.u, e.v, e.c, e.h * scale, e.w * scale), Layout::SaiStack, up)
}
