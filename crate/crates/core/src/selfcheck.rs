//! Built-in invariant battery run by the `selfcheck` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{decode_container, encode_container, make_lr, SceneRecord};
use crate::error::Result;
use crate::gradcheck::run_op_suite;
use crate::lf::{LfExtents, Layout, LightFieldTensor};
use crate::metrics::{psnr, ssim, PSNR_CAP_DB};
use crate::model::checkpoint::{decode_checkpoint, encode_checkpoint};
use crate::model::{bicubic_upsample, forward, init_model, L2FMambaModel, ModelConfig};
use crate::scan::{invert, paths_for, Family};
use crate::ssm::{selective_scan, ss2d_forward, Ss2dBlock, Ss2dDims, Ss2dOptions, ScanInputs};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelfcheckOptions {
    /// Merge SS2D branches in evaluation order (negative control).
    pub inject_fault: bool,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Direct per-step recurrence in f64.
fn naive_scan(x: &Tensor<f64>, delta: &Tensor<f64>, a: &Tensor<f64>, b: &Tensor<f64>, c: &Tensor<f64>, dsk: &Tensor<f64>) -> Vec<f64> {
    let (bs, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = a.shape()[1];
    let mut y = vec![0.0; bs * l * d];
    for bi in 0..bs {
        for di in 0..d {
            let mut h = vec![0.0; n];
            for t in 0..l {
                let xi = x.data()[(bi * l + t) * d + di];
                let dt = delta.data()[(bi * l + t) * d + di];
                let mut acc = dsk.data()[di] * xi;
                for (ni, hn) in h.iter_mut().enumerate() {
                    *hn = (dt * a.data()[di * n + ni]).exp() * *hn + dt * b.data()[(bi * l + t) * n + ni] * xi;
                    acc += c.data()[(bi * l + t) * n + ni] * *hn;
                }
                y[(bi * l + t) * d + di] = acc;
            }
        }
    }
    y
}

fn small_config() -> ModelConfig {
    ModelConfig {
        c: 8,
        k: 1,
        d_state: 2,
        u: 2,
        v: 2,
        scale: 2,
        dt_rank: 1,
        ..ModelConfig::default()
    }
}

pub fn run_selfcheck(opts: SelfcheckOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();

    out.push(check("scan_paths_bijective", || {
        let mut n = 0;
        for (u, v, h, w) in [(1, 1, 1, 1), (2, 3, 4, 5), (5, 5, 8, 8), (3, 2, 1, 7)] {
            for fam in Family::ALL {
                for p in paths_for(fam, u, v, h, w)? {
                    p.validate()?;
                    if invert(&p.inverse)? != p.forward {
                        return Ok((false, format!("{fam:?} {:?} at {u}x{v}x{h}x{w}", p.direction)));
                    }
                    n += 1;
                }
            }
        }
        Ok((true, format!("{n} paths")))
    }));

    out.push(check("selective_scan_oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let (l, d, n) = (rng.gen_range(1..=64), rng.gen_range(1..=8), rng.gen_range(1..=16));
            let x = rand_tensor(&mut rng, &[1, l, d], -1.0, 1.0);
            let dt = rand_tensor(&mut rng, &[1, l, d], 0.01, 1.0);
            let a = rand_tensor(&mut rng, &[d, n], -2.0, -0.1);
            let b = rand_tensor(&mut rng, &[1, l, n], -1.0, 1.0);
            let c = rand_tensor(&mut rng, &[1, l, n], -1.0, 1.0);
            let ds = rand_tensor(&mut rng, &[d], -1.0, 1.0);
            let want = naive_scan(&x, &dt, &a, &b, &c, &ds);
            let got = selective_scan(&ScanInputs {
                x: &x.cast::<f32>(),
                delta: &dt.cast(),
                a: &a.cast(),
                b: &b.cast(),
                c: &c.cast(),
                d_skip: &ds.cast(),
            })?;
            for (g, w) in got.data().iter().zip(&want) {
                worst = worst.max((*g as f64 - w).abs() / w.abs().max(1.0));
            }
        }
        Ok((worst < 1e-5, format!("max rel err {worst:.2e}")))
    }));

    out.push(check("ss2d_direction_merge_order", || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = Ss2dDims {
            c: 8,
            d: 8,
            n: 4,
            dt_rank: 1,
            dwconv: true,
        };
        let blk = Ss2dBlock::<f32>::init(dims, &mut rng);
        let (h, w) = (5, 6);
        let x = rand_tensor(&mut rng, &[2 * h * w, 8], -1.0, 1.0).cast::<f32>();
        let paths = paths_for(Family::Intra, 1, 1, h, w)?;
        let reference = ss2d_forward(&x, &paths, (h, w), &blk, Ss2dOptions::default())?;
        let mut worst_equal = true;
        for order in [[3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]] {
            let o = Ss2dOptions {
                eval_order: order,
                merge_in_eval_order: opts.inject_fault,
            };
            let y = ss2d_forward(&x, &paths, (h, w), &blk, o)?;
            worst_equal &= y.bit_eq(&reference);
        }
        Ok((worst_equal, "output independent of branch evaluation order".into()))
    }));

    out.push(check("gradients_finite_difference", || {
        let reports = run_op_suite(3)?;
        let bad: Vec<String> = reports
            .iter()
            .filter(|(_, r)| !r.passes(1e-6))
            .map(|(n, r)| format!("{n} ({:.1e})", r.max_rel_error))
            .collect();
        let worst = reports.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
        if bad.is_empty() {
            Ok((true, format!("{} ops, worst {worst:.1e}", reports.len())))
        } else {
            Ok((false, bad.join(", ")))
        }
    }));

    out.push(check("layout_round_trip", || {
        let lf = LightFieldTensor::from_fn(LfExtents::new(3, 2, 2, 4, 5), |u, v, c, h, w| {
            (u * 1000 + v * 100 + c * 10 + h) as f32 + w as f32 * 0.1
        });
        for a in Layout::ALL {
            for b in Layout::ALL {
                if lf.to_layout(a).to_layout(b).to_layout(Layout::SaiStack) != lf {
                    return Ok((false, format!("{a:?} -> {b:?}")));
                }
            }
        }
        Ok((true, "3 layouts".into()))
    }));

    out.push(check("checkpoint_round_trip", || {
        let m = init_model::<f32>(&small_config(), 0)?;
        let back: L2FMambaModel<f32> = decode_checkpoint(&encode_checkpoint(&m)?, Some(&m.config))?;
        let ok = m.params.iter().all(|(k, v)| back.params.get(k).is_some_and(|b| b.bit_eq(v)));
        Ok((ok, format!("{} tensors", m.params.len())))
    }));

    out.push(check("container_round_trip", || {
        let e = LfExtents::new(2, 2, 3, 8, 8);
        let hr = LightFieldTensor::from_fn(e, |u, v, c, h, w| ((u + 2 * v + 3 * c + 5 * h + 7 * w) % 11) as f32 / 11.0);
        let s = make_lr(&SceneRecord::new("check", hr), 2)?;
        Ok((decode_container(&encode_container(&s)?)? == s, "scene with LR views".into()))
    }));

    out.push(check("residual_identity", || {
        let cfg = small_config();
        let mut m = init_model::<f32>(&cfg, 1)?;
        for name in ["upsampler.out.weight", "upsampler.out.bias"] {
            let t = m.param_mut(name)?;
            *t = Tensor::zeros(t.shape());
        }
        let x = LightFieldTensor::from_fn(LfExtents::new(2, 2, 1, 4, 4), |u, v, _, h, w| {
            ((u * 3 + v * 5 + h * 7 + w) % 9) as f32 / 9.0
        });
        let y = forward(&m, &x)?;
        Ok((y.tensor().bit_eq(bicubic_upsample(&x, cfg.scale)?.tensor()), "zeroed head equals bicubic".into()))
    }));

    out.push(check("metric_identities", || {
        let img = Tensor::from_fn(&[16, 16], |i| ((i * 7) % 13) as f64 / 13.0);
        let p = psnr(&img, &img)?;
        let s = ssim(&img, &img)?;
        Ok((p == PSNR_CAP_DB && s == 1.0, format!("psnr {p}, ssim {s}")))
    }));

    out
}
