//! L1 training with Adam and a step schedule, light-field-consistent
//! augmentation and aligned patch sampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{GradientTable, Tape};
use crate::data::SceneRecord;
use crate::error::{Error, Result};
use crate::kv;
use crate::lf::{LfExtents, Layout, LightFieldTensor};
use crate::model::{forward_graph, input_views, ForwardOptions, L2FMambaModel, ModelConfig};
use crate::params::{Binder, ParamTable};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub epochs: usize,
    pub step_epochs: usize,
    pub gamma: f64,
    pub batch: usize,
    /// HR patch side.
    pub patch: usize,
    /// HR stride between patch origins; a multiple of the scale.
    pub stride: usize,
    pub seed: u64,
    /// Optimizer steps per epoch; defaults to one pass over the patches.
    pub steps_per_epoch: Option<usize>,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2.5e-4,
            epochs: 5,
            step_epochs: 30,
            gamma: 0.5,
            batch: 1,
            patch: 32,
            stride: 16,
            seed: 0,
            steps_per_epoch: None,
            max_steps: None,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return Err(Error::Config(format!("`lr0` must be a finite non-negative number, got {}", self.lr0)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("`gamma` must be in (0, 1], got {}", self.gamma)));
        }
        for (name, v) in [("epochs", self.epochs), ("step_epochs", self.step_epochs), ("batch", self.batch), ("patch", self.patch), ("stride", self.stride)] {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        Ok(())
    }

    fn set(&mut self, k: &str, raw: &str) -> Result<bool> {
        match k {
            "lr0" => self.lr0 = kv::value(k, raw)?,
            "epochs" => self.epochs = kv::value(k, raw)?,
            "step_epochs" => self.step_epochs = kv::value(k, raw)?,
            "gamma" => self.gamma = kv::value(k, raw)?,
            "batch" => self.batch = kv::value(k, raw)?,
            "patch" => self.patch = kv::value(k, raw)?,
            "stride" => self.stride = kv::value(k, raw)?,
            "seed" => self.seed = kv::value(k, raw)?,
            "steps_per_epoch" => self.steps_per_epoch = Some(kv::value(k, raw)?),
            "max_steps" => self.max_steps = Some(kv::value(k, raw)?),
            "augment" => self.augment = kv::value(k, raw)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let (_, t) = parse_run_config(text)?;
        Ok(t)
    }

    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "lr0 = {}\nepochs = {}\nstep_epochs = {}\ngamma = {}\nbatch = {}\npatch = {}\nstride = {}\nseed = {}\naugment = {}\n",
            self.lr0, self.epochs, self.step_epochs, self.gamma, self.batch, self.patch, self.stride, self.seed, self.augment
        );
        if let Some(n) = self.steps_per_epoch {
            s.push_str(&format!("steps_per_epoch = {n}\n"));
        }
        if let Some(n) = self.max_steps {
            s.push_str(&format!("max_steps = {n}\n"));
        }
        s
    }
}

/// Splits a run file into model keys (`model.` prefix) and training keys.
pub fn parse_run_config(text: &str) -> Result<(ModelConfig, TrainConfig)> {
    let map = kv::parse(text)?;
    let mut model_text = String::new();
    let mut t = TrainConfig::default();
    for (k, raw) in &map {
        if let Some(mk) = k.strip_prefix("model.") {
            model_text.push_str(&format!("{mk} = {raw}\n"));
        } else if !t.set(k, raw)? {
            return Err(Error::Config(format!("unknown training key `{k}`")));
        }
    }
    t.validate()?;
    Ok((ModelConfig::from_kv(&model_text)?, t))
}

/// `lr0 · gamma^⌊epoch / step_epochs⌋`.
pub fn steplr(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.gamma.powi((epoch / cfg.step_epochs) as i32)
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: ParamTable<T>,
    pub v: ParamTable<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamTable<T>) -> Self {
        let zeros = |p: &ParamTable<T>| p.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect();
        AdamState {
            m: zeros(params),
            v: zeros(params),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Parameters absent from `grads` see a zero
/// gradient.
pub fn adam_step<T: Real>(params: &mut ParamTable<T>, grads: &GradientTable<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| Error::MissingParameter(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!("gradient of `{name}` is {:?}, parameter is {:?}", g.shape(), p.shape())));
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{name}` at flat index {i} on step {}", state.step + 1)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, p) in params.iter_mut() {
        let m = state.m.get_mut(name).ok_or_else(|| Error::MissingParameter(name.clone()))?;
        let v = state.v.get_mut(name).ok_or_else(|| Error::MissingParameter(name.clone()))?;
        let g = grads.get(name);
        for i in 0..p.numel() {
            let gi = g.map_or(0.0, |g| g.data()[i].to_f64().unwrap());
            let mi = b1 * m.data()[i].to_f64().unwrap() + (1.0 - b1) * gi;
            let vi = b2 * v.data()[i].to_f64().unwrap() + (1.0 - b2) * gi * gi;
            m.data_mut()[i] = T::lit(mi);
            v.data_mut()[i] = T::lit(vi);
            if lr != 0.0 {
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + state.eps);
                let pi = p.data()[i].to_f64().unwrap() - update;
                p.data_mut()[i] = T::lit(pi);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment {
    Hflip,
    Vflip,
    Rot90,
}

/// Joint spatial/angular transform of an SAI-stack light field.
///
/// `Hflip` mirrors `w` and `v`, `Vflip` mirrors `h` and `u`, `Rot90` rotates
/// every view and the view grid counter-clockwise.
pub fn augment<T: Real>(lf: &LightFieldTensor<T>, op: Augment) -> LightFieldTensor<T> {
    let src = lf.to_layout(Layout::SaiStack);
    let e = src.extents();
    match op {
        Augment::Hflip => LightFieldTensor::from_fn(e, |u, v, c, h, w| src.get(u, e.v - 1 - v, c, h, e.w - 1 - w)),
        Augment::Vflip => LightFieldTensor::from_fn(e, |u, v, c, h, w| src.get(e.u - 1 - u, v, c, e.h - 1 - h, w)),
        Augment::Rot90 => {
            let out = LfExtents::new(e.v, e.u, e.c, e.w, e.h);
            LightFieldTensor::from_fn(out, |u, v, c, h, w| src.get(v, e.v - 1 - u, c, w, e.w - 1 - h))
        }
    }
}

/// Co-registered LR/HR crops (HR side `hr_side`, origins every `stride` HR
/// pixels), LR Y views against HR Y views.
pub fn extract_patches(
    scene: &SceneRecord,
    hr_side: usize,
    stride: usize,
) -> Result<Vec<(LightFieldTensor<f32>, LightFieldTensor<f32>)>> {
    let a = scene.scale;
    let lr = scene.lr()?.to_layout(Layout::SaiStack);
    let hr = scene.hr_y()?;
    let (he, le) = (hr.extents(), lr.extents());
    if hr_side % a != 0 || stride % a != 0 {
        return Err(Error::InvalidArgument(format!("patch side {hr_side} and stride {stride} must be multiples of the scale {a}")));
    }
    if hr_side > he.h || hr_side > he.w {
        return Err(Error::InvalidArgument(format!("patch side {hr_side} exceeds the {}x{} views", he.h, he.w)));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let ls = hr_side / a;
    let origins = |n: usize| (0..=n - hr_side).step_by(stride).collect::<Vec<_>>();
    let mut out = Vec::new();
    for &y in &origins(he.h) {
        for &x in &origins(he.w) {
            let hp = LightFieldTensor::from_fn(LfExtents { h: hr_side, w: hr_side, ..he }, |u, v, c, i, j| {
                hr.get(u, v, c, y + i, x + j)
            });
            let lp = LightFieldTensor::from_fn(LfExtents { h: ls, w: ls, ..le }, |u, v, c, i, j| {
                lr.get(u, v, c, y / a + i, x / a + j)
            });
            out.push((lp, hp));
        }
    }
    Ok(out)
}

/// L1 loss and parameter gradients of one LR/HR pair.
pub fn loss_and_grads<T: Real>(
    model: &L2FMambaModel<T>,
    lr: &LightFieldTensor<T>,
    hr: &LightFieldTensor<T>,
) -> Result<(f64, GradientTable<T>)> {
    let x = input_views(&model.config, lr)?;
    let tape = Tape::new();
    let binder = Binder::new(&tape, &model.params);
    let pred = forward_graph(&binder, &model.config, &x, ForwardOptions::default())?;
    let target = hr.to_layout(Layout::SaiStack).into_tensor().reshape(pred.shape())?;
    let loss = tape.l1_loss(&pred, &tape.constant(target))?;
    let value = loss.value().data()[0].to_f64().unwrap();
    Ok((value, tape.backward(&loss)?.into_table()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("step,epoch,lr,loss\n");
    for r in rows {
        s.push_str(&format!("{},{},{:e},{:.9e}\n", r.step, r.epoch, r.lr, r.loss));
    }
    s
}

pub struct TrainOutcome<T> {
    pub model: L2FMambaModel<T>,
    /// Parameters that produced the lowest batch loss.
    pub best: L2FMambaModel<T>,
    pub best_loss: f64,
    pub trace: Vec<TraceRow>,
}

const AUGMENTS: [Augment; 3] = [Augment::Hflip, Augment::Vflip, Augment::Rot90];

/// Deterministic training given `cfg.seed`. Each batch's per-sample
/// gradients are summed in sample order.
pub fn train_loop(
    mut model: L2FMambaModel<f32>,
    scenes: &[SceneRecord],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&TraceRow),
) -> Result<TrainOutcome<f32>> {
    cfg.validate()?;
    let mut patches = Vec::new();
    for s in scenes {
        if s.scale != model.config.scale {
            return Err(Error::ConfigMismatch {
                field: "scale".into(),
                found: s.scale.to_string(),
                expected: model.config.scale.to_string(),
            });
        }
        patches.extend(extract_patches(s, cfg.patch, cfg.stride)?);
    }
    if patches.is_empty() {
        return Err(Error::InvalidArgument("no training patches".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_epoch = cfg.steps_per_epoch.unwrap_or_else(|| patches.len().div_ceil(cfg.batch)).max(1);
    let total = (steps_per_epoch * cfg.epochs).min(cfg.max_steps.unwrap_or(usize::MAX));
    let mut state = AdamState::new(&model.params);
    let mut order: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(total);
    let mut best = (f64::INFINITY, model.params.clone());

    for step in 0..total {
        let epoch = step / steps_per_epoch;
        let lr = steplr(epoch, cfg);
        let mut grads: Option<GradientTable<f32>> = None;
        let mut loss_sum = 0.0;
        for _ in 0..cfg.batch {
            if order.is_empty() {
                order = (0..patches.len()).collect();
                order.shuffle(&mut rng);
            }
            let (mut lp, mut hp) = patches[order.pop().unwrap()].clone();
            if cfg.augment {
                let square = lp.extents().u == lp.extents().v;
                for op in AUGMENTS {
                    // Draw for every op so the stream does not depend on the grid shape.
                    if rng.gen_bool(0.5) && (square || op != Augment::Rot90) {
                        lp = augment(&lp, op);
                        hp = augment(&hp, op);
                    }
                }
            }
            let (loss, g) = loss_and_grads(&model, &lp, &hp)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at step {step}")));
            }
            loss_sum += loss;
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => {
                    for (k, v) in g {
                        match acc.get_mut(&k) {
                            Some(a) => a.add_assign(&v),
                            None => {
                                acc.insert(k, v);
                            }
                        }
                    }
                }
            }
        }
        let inv = 1.0 / cfg.batch as f32;
        let grads: GradientTable<f32> = grads.unwrap().into_iter().map(|(k, v)| (k, v.map(|x| x * inv))).collect();
        let loss = loss_sum / cfg.batch as f64;
        if loss < best.0 {
            best = (loss, model.params.clone());
        }
        let row = TraceRow { step, epoch, lr, loss };
        on_step(&row);
        trace.push(row);
        adam_step(&mut model.params, &grads, &mut state, lr)?;
    }
    let best_model = L2FMambaModel {
        config: model.config.clone(),
        params: best.1,
    };
    Ok(TrainOutcome {
        model,
        best: best_model,
        best_loss: best.0,
        trace,
    })
}
