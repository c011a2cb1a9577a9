use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use l2fm::data::{
    central_crop_views, load_scene_from_view_grid, make_lr, read_container, save_gray_png, save_rgb_png,
    write_container, DatasetManifest, Role, SceneRecord,
};
use l2fm::framed::write_atomic;
use l2fm::lf::{LfExtents, Layout, LightFieldTensor};
use l2fm::metrics::{aggregate, score_scene};
use l2fm::model::{
    count_config_params, count_flops, forward, init_model, load_checkpoint, save_checkpoint,
    FlopConvention, L2FMambaModel, ModelConfig,
};
use l2fm::ops::color::{rgb_to_ycbcr, ycbcr_to_rgb};
use l2fm::ops::resize::bicubic_resize_to;
use l2fm::selfcheck::{run_selfcheck, SelfcheckOptions};
use l2fm::tensor::Tensor;
use l2fm::train::{parse_run_config, trace_csv, train_loop};
use serde::Serialize;
use serde_json::json;

use crate::{BenchArgs, Cli, ColorMode, Command, CountArgs, EvalArgs, Failure, PrepArgs, SelfcheckArgs, SrArgs, TrainArgs};

/// Version of every report and output layout written by this tool.
pub const FORMAT_VERSION: u32 = 1;

type Outcome = Result<(), Failure>;

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Prep(a) => prep(cli, a),
        Command::Sr(a) => sr(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Count(a) => count(cli, a),
        Command::Bench(a) => bench(cli, a),
        Command::Selfcheck(a) => selfcheck(cli, a),
        Command::Train(a) => train(cli, a),
    }
}

fn emit(cli: &Cli, value: &serde_json::Value, text: impl FnOnce() -> String) {
    if cli.json {
        println!("{}", serde_json::to_string_pretty(value).unwrap());
    } else {
        print!("{}", text());
    }
}

fn read_model_config(path: Option<&Path>) -> Result<ModelConfig, Failure> {
    match path {
        None => Ok(ModelConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::User(format!("{}: {e}", p.display())))?;
            Ok(ModelConfig::from_kv(&text)?)
        }
    }
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::User(format!("{}: {e}", dir.display())))
}

fn prep(cli: &Cli, a: &PrepArgs) -> Outcome {
    let scene = load_scene_from_view_grid(&a.input, &a.pattern)?;
    let e = scene.hr.extents();
    if a.angular > e.u || a.angular > e.v {
        return Err(Failure::User(format!(
            "--angular {} exceeds the {}x{} view grid",
            a.angular, e.u, e.v
        )));
    }
    if a.scale != 2 && a.scale != 4 {
        return Err(Failure::User(format!("--scale must be 2 or 4, got {}", a.scale)));
    }
    let mut scene = make_lr(&central_crop_views(&scene, a.angular)?, a.scale)?;
    if let Some(n) = &a.name {
        scene.name = n.clone();
    }
    // The container should not depend on where the grid happened to live.
    scene.source = a.input.file_name().map(PathBuf::from);
    write_container(&scene, &a.out)?;
    let lr = scene.lr()?.extents();
    let report = json!({
        "format_version": FORMAT_VERSION,
        "scene": scene.name,
        "views": [lr.u, lr.v],
        "hr": [scene.hr.extents().h, scene.hr.extents().w],
        "lr": [lr.h, lr.w],
        "scale": scene.scale,
        "out": a.out,
    });
    emit(cli, &report, || {
        format!(
            "{}: {}x{} views, HR {}x{}, LR {}x{} (x{}) -> {}\n",
            scene.name,
            lr.u,
            lr.v,
            scene.hr.extents().h,
            scene.hr.extents().w,
            lr.h,
            lr.w,
            scene.scale,
            a.out.display()
        )
    });
    Ok(())
}

fn check_scale(model: &ModelConfig, scene: &SceneRecord) -> Outcome {
    if model.scale != scene.scale {
        return Err(Failure::User(format!(
            "scale mismatch: checkpoint is x{}, scene `{}` is x{}",
            model.scale, scene.name, scene.scale
        )));
    }
    let lr = scene.lr()?.extents();
    if (lr.u, lr.v) != (model.u, model.v) {
        return Err(Failure::User(format!(
            "angular mismatch: checkpoint expects {}x{} views, scene `{}` has {}x{}",
            model.u, model.v, scene.name, lr.u, lr.v
        )));
    }
    Ok(())
}

/// Bicubic Cb/Cr at the output size, from the degraded HR chroma.
fn upscaled_chroma(scene: &SceneRecord, out_h: usize, out_w: usize) -> Result<Vec<Tensor<f32>>, Failure> {
    let e = scene.hr.extents();
    if e.c != 3 {
        return Err(Failure::User(format!("scene `{}` has no color views for --color", scene.name)));
    }
    let lr = scene.lr()?.extents();
    let hr = scene.hr.to_layout(Layout::SaiStack);
    let mut out = Vec::with_capacity(e.views());
    for u in 0..e.u {
        for v in 0..e.v {
            let ycc = rgb_to_ycbcr(&Tensor::from_vec(&[3, e.h, e.w], hr.view(u, v).to_vec())?)?;
            let cbcr = Tensor::from_vec(&[2, e.h, e.w], ycc.data()[e.h * e.w..].to_vec())?;
            let small = bicubic_resize_to(&cbcr, lr.h, lr.w, true)?;
            out.push(bicubic_resize_to(&small, out_h, out_w, true)?);
        }
    }
    Ok(out)
}

fn sr(cli: &Cli, a: &SrArgs) -> Outcome {
    let model: L2FMambaModel<f32> = load_checkpoint(&a.checkpoint, None)?;
    let scene = read_container(&a.input)?;
    check_scale(&model.config, &scene)?;
    let pred = forward(&model, scene.lr()?)?.to_layout(Layout::SaiStack);
    let e = pred.extents();
    create_dir(&a.out)?;
    let chroma = match a.color {
        Some(ColorMode::BicubicChroma) => Some(upscaled_chroma(&scene, e.h, e.w)?),
        None => None,
    };
    for u in 0..e.u {
        for v in 0..e.v {
            let path = a.out.join(format!("view_{u:02}_{v:02}.png"));
            let y = pred.view(u, v);
            match &chroma {
                None => save_gray_png(&path, y, e.h, e.w)?,
                Some(c) => {
                    let mut ycc = y.to_vec();
                    ycc.extend_from_slice(c[u * e.v + v].data());
                    let rgb = ycbcr_to_rgb(&Tensor::from_vec(&[3, e.h, e.w], ycc)?)?;
                    save_rgb_png(&path, rgb.data(), e.h, e.w)?;
                }
            }
        }
    }
    let mut out_scene = SceneRecord::new(scene.name.clone(), pred);
    out_scene.scale = scene.scale;
    out_scene.source = a.input.file_name().map(PathBuf::from);
    let container = a.out.join("sr.lfsc");
    write_container(&out_scene, &container)?;
    let report = json!({
        "format_version": FORMAT_VERSION,
        "config_digest": model.config.digest(),
        "scene": scene.name,
        "views": [e.u, e.v],
        "size": [e.h, e.w],
        "container": container,
    });
    emit(cli, &report, || {
        format!(
            "{}: {} views at {}x{} -> {} (config {})\n",
            scene.name,
            e.views(),
            e.h,
            e.w,
            a.out.display(),
            model.config.digest()
        )
    });
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    format_version: u32,
    config_digest: Option<String>,
    dataset: String,
    shave: usize,
    psnr: f64,
    ssim: f64,
    scenes: Vec<l2fm::metrics::SceneScore>,
}

fn eval(cli: &Cli, a: &EvalArgs) -> Outcome {
    let manifest = DatasetManifest::load(&a.dataset)?;
    let entries: Vec<_> = manifest.with_role(Role::Test).collect();
    if entries.is_empty() {
        return Err(Failure::User(format!("{} lists no test scenes", a.dataset.display())));
    }
    let model: Option<L2FMambaModel<f32>> = match &a.checkpoint {
        Some(p) => Some(load_checkpoint(p, None)?),
        None => None,
    };
    let mut scores = Vec::with_capacity(entries.len());
    for entry in entries {
        let scene = read_container(&entry.path)?;
        let reference = scene.hr_y()?;
        let pred: LightFieldTensor<f32> = match (&entry.prediction, &model) {
            (Some(p), _) => read_container(p)?.hr_y()?,
            (None, Some(m)) => {
                check_scale(&m.config, &scene)?;
                forward(m, scene.lr()?)?
            }
            (None, None) => {
                return Err(Failure::User(format!(
                    "scene `{}` has no prediction; pass --checkpoint",
                    entry.name
                )))
            }
        };
        scores.push(score_scene(&entry.name, &reference, &pred, a.shave)?);
    }
    let d = aggregate(scores)?;
    let digest = model.as_ref().map(|m| m.config.digest());
    let mut csv = format!(
        "# format_version={FORMAT_VERSION} config_digest={} dataset={}\n",
        digest.as_deref().unwrap_or("none"),
        manifest.name
    );
    csv.push_str(&d.to_csv());
    let report = EvalReport {
        format_version: FORMAT_VERSION,
        config_digest: digest,
        dataset: manifest.name.clone(),
        shave: a.shave,
        psnr: d.psnr,
        ssim: d.ssim,
        scenes: d.scenes.clone(),
    };
    let json_text = serde_json::to_string_pretty(&report).unwrap() + "\n";
    write_atomic(&a.report, csv.as_bytes())?;
    let json_path = json_sibling(&a.report);
    write_atomic(&json_path, json_text.as_bytes())?;
    emit(cli, &serde_json::to_value(&report).unwrap(), || {
        let mut s = String::new();
        for sc in &d.scenes {
            s.push_str(&format!("{:<24} PSNR {:>8.4} dB  SSIM {:.6}\n", sc.name, sc.psnr, sc.ssim));
        }
        s.push_str(&format!("{:<24} PSNR {:>8.4} dB  SSIM {:.6}\n", manifest.name, d.psnr, d.ssim));
        s
    });
    Ok(())
}

fn json_sibling(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.with_extension("report.json")
    } else {
        path.with_extension("json")
    }
}

fn count(cli: &Cli, a: &CountArgs) -> Outcome {
    let cfg = read_model_config(a.config.as_deref())?;
    let p = count_config_params(&cfg);
    let flops = if a.flops {
        Some(count_flops(&cfg, (a.angular, a.angular, a.patch, a.patch), FlopConvention::MacIsOne)?)
    } else {
        None
    };
    let report = json!({
        "format_version": FORMAT_VERSION,
        "config_digest": cfg.digest(),
        "params": p.total,
        "params_by_path": p.by_path,
        "flops": flops.as_ref().map(|f| json!({
            "total": f.total,
            "gflops": f.gflops(),
            "convention": f.convention,
            "input": [a.angular, a.angular, a.patch, a.patch],
            "by_path": f.by_path,
        })),
    });
    emit(cli, &report, || {
        let mut s = format!("config {}\nparameters {} ({:.3}M)\n", cfg.digest(), p.total, p.total as f64 / 1e6);
        for (k, v) in &p.by_path {
            s.push_str(&format!("  {k:<24} {v}\n"));
        }
        if let Some(f) = &flops {
            s.push_str(&format!(
                "FLOPs {} ({:.3} G) on {}x{}x{}x{}, 1 MAC = 1 FLOP\n",
                f.total,
                f.gflops(),
                a.angular,
                a.angular,
                a.patch,
                a.patch
            ));
            for (k, v) in &f.by_path {
                s.push_str(&format!("  {k:<24} {v}\n"));
            }
        }
        s
    });
    Ok(())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn bench(cli: &Cli, a: &BenchArgs) -> Outcome {
    let mut cfg = read_model_config(a.config.as_deref())?;
    cfg.u = a.angular;
    cfg.v = a.angular;
    if a.repeats == 0 || a.patch == 0 || a.angular == 0 {
        return Err(Failure::User("--repeats, --patch and --angular must be positive".into()));
    }
    let seed = cli.seed.unwrap_or(0);
    let model = init_model::<f32>(&cfg, seed)?;
    let e = LfExtents::new(a.angular, a.angular, 1, a.patch, a.patch);
    let x = LightFieldTensor::from_fn(e, |u, v, _, h, w| {
        (((u * 31 + v * 17 + h * 7 + w * 3) as u64 ^ seed) % 97) as f32 / 97.0
    });
    for _ in 0..a.warmup {
        forward(&model, &x)?;
    }
    let mut times = Vec::with_capacity(a.repeats);
    for _ in 0..a.repeats {
        let t = Instant::now();
        forward(&model, &x)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let (median, p90) = (percentile(&sorted, 0.5), percentile(&sorted, 0.9));
    let threads = rayon::current_num_threads();
    let report = json!({
        "format_version": FORMAT_VERSION,
        "config_digest": cfg.digest(),
        "threads": threads,
        "dtype": "f32",
        "input": [a.angular, a.angular, a.patch, a.patch],
        "warmup": a.warmup,
        "repeats": a.repeats,
        "median_ms": median,
        "p90_ms": p90,
        "times_ms": times,
    });
    emit(cli, &report, || {
        format!(
            "config {} on {}x{}x{}x{}, {threads} threads, f32: median {median:.2} ms, p90 {p90:.2} ms over {} runs\n",
            cfg.digest(),
            a.angular,
            a.angular,
            a.patch,
            a.patch,
            a.repeats
        )
    });
    Ok(())
}

fn selfcheck(cli: &Cli, a: &SelfcheckArgs) -> Outcome {
    let t = Instant::now();
    let results = run_selfcheck(SelfcheckOptions {
        inject_fault: a.inject_fault,
    });
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    let report = json!({
        "format_version": FORMAT_VERSION,
        "checks": results,
        "passed": failed.is_empty(),
        "seconds": t.elapsed().as_secs_f64(),
    });
    emit(cli, &report, || {
        let mut s = String::new();
        for r in &results {
            s.push_str(&format!("{} {:<30} {}\n", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail));
        }
        s
    });
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(format!("failed: {}", failed.join(", "))))
    }
}

fn load_training_scenes(path: &Path) -> Result<Vec<SceneRecord>, Failure> {
    if path.extension().is_some_and(|e| e == "json") {
        let m = DatasetManifest::load(path)?;
        let mut train: Vec<_> = m.with_role(Role::Train).collect();
        if train.is_empty() {
            train = m.scenes.iter().collect();
        }
        train.iter().map(|e| read_container(&e.path).map_err(Failure::from)).collect()
    } else {
        Ok(vec![read_container(path)?])
    }
}

fn train(cli: &Cli, a: &TrainArgs) -> Outcome {
    let text = fs::read_to_string(&a.config).map_err(|e| Failure::User(format!("{}: {e}", a.config.display())))?;
    let (mcfg, mut tcfg) = parse_run_config(&text)?;
    if let Some(s) = cli.seed {
        tcfg.seed = s;
    }
    let scenes = load_training_scenes(&a.data)?;
    for s in &scenes {
        check_scale(&mcfg, s)?;
    }
    let model = init_model::<f32>(&mcfg, tcfg.seed)?;
    create_dir(&a.out)?;
    let quiet = cli.json;
    let outcome = train_loop(model, &scenes, &tcfg, |r| {
        if !quiet && (r.step % 50 == 0) {
            eprintln!("step {:>6} epoch {:>4} lr {:.3e} loss {:.6}", r.step, r.epoch, r.lr, r.loss);
        }
    })
    .map_err(|e| match e {
        l2fm::Error::NonFinite(m) => Failure::Invariant(format!("training diverged: {m}")),
        other => Failure::from(other),
    })?;
    write_atomic(&a.out.join("loss.csv"), trace_csv(&outcome.trace).as_bytes())?;
    save_checkpoint(&outcome.model, &a.out.join("final.ckpt"))?;
    save_checkpoint(&outcome.best, &a.out.join("best.ckpt"))?;
    let first = outcome.trace.first().map_or(f64::NAN, |r| r.loss);
    let last = outcome.trace.last().map_or(f64::NAN, |r| r.loss);
    let report = json!({
        "format_version": FORMAT_VERSION,
        "config_digest": mcfg.digest(),
        "seed": tcfg.seed,
        "steps": outcome.trace.len(),
        "initial_loss": first,
        "final_loss": last,
        "best_loss": outcome.best_loss,
        "out": a.out,
    });
    emit(cli, &report, || {
        format!(
            "{} steps, loss {first:.6} -> {last:.6} (best {:.6}); wrote {}\n",
            outcome.trace.len(),
            outcome.best_loss,
            a.out.display()
        )
    });
    Ok(())
}
