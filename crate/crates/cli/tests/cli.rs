use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use l2fm::data::{
    encode_container, make_lr, read_container, save_rgb_png, write_container, DatasetManifest, ManifestEntry, Role,
    SceneRecord,
};
use l2fm::model::checkpoint::encode_checkpoint;
use l2fm::model::{init_model, load_checkpoint, save_checkpoint, L2FMambaModel, ModelConfig};
use l2fm::{LfExtents, LightFieldTensor};
use serde_json::Value;
use tempfile::TempDir;

fn l2fm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l2fm")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let out = l2fm(args);
    assert_eq!(code(&out), 0, "l2fm {args:?}: {}", stderr(&out));
    out
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn toy() -> ModelConfig {
    ModelConfig {
        c: 8,
        k: 1,
        d_state: 2,
        u: 3,
        v: 3,
        scale: 2,
        dt_rank: 1,
        ..ModelConfig::default()
    }
}

fn hr(a: usize, c: usize, side: usize) -> LightFieldTensor<f32> {
    LightFieldTensor::from_fn(LfExtents::new(a, a, c, side, side), |u, v, ch, y, x| {
        0.5 + 0.3 * ((x as f32 + 0.5 * v as f32) * 0.7 + ch as f32).sin() * ((y as f32 + 0.5 * u as f32) * 0.4).cos()
    })
}

fn scene_file(dir: &Path, name: &str, a: usize, c: usize, side: usize, scale: usize) -> PathBuf {
    let p = dir.join(format!("{name}.lfsc"));
    write_container(&make_lr(&SceneRecord::new(name, hr(a, c, side)), scale).unwrap(), &p).unwrap();
    p
}

fn checkpoint(dir: &Path, cfg: &ModelConfig, seed: u64) -> PathBuf {
    let p = dir.join(format!("model{seed}.ckpt"));
    save_checkpoint(&init_model::<f32>(cfg, seed).unwrap(), &p).unwrap();
    p
}

fn write_grid(dir: &Path, a: usize, side: usize) {
    fs::create_dir_all(dir).unwrap();
    let lf = hr(a, 3, side);
    for u in 0..a {
        for v in 0..a {
            save_rgb_png(&dir.join(format!("view_{u:02}_{v:02}.png")), lf.view(u, v), side, side).unwrap();
        }
    }
}

fn manifest(dir: &Path, entries: Vec<ManifestEntry>) -> PathBuf {
    let m = DatasetManifest {
        name: "synthetic".into(),
        angular: None,
        scenes: entries,
    };
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&m).unwrap()).unwrap();
    p
}

fn test_entry(name: &str, path: &str, prediction: Option<&str>) -> ManifestEntry {
    ManifestEntry {
        name: name.into(),
        path: path.into(),
        role: Role::Test,
        prediction: prediction.map(Into::into),
    }
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&l2fm(&["--help"])), 0);
    assert_eq!(code(&l2fm(&["--version"])), 0);
    assert_eq!(code(&l2fm(&["count", "--help"])), 0);
}

#[test]
fn unknown_flags_and_commands_are_errors() {
    assert_eq!(code(&l2fm(&["count", "--bogus"])), 1);
    assert_eq!(code(&l2fm(&["frobnicate"])), 1);
    assert_eq!(code(&l2fm(&[])), 1);
    assert_eq!(code(&l2fm(&["sr", "--input", "x"])), 1);
    assert_eq!(code(&l2fm(&["--threads", "0", "count"])), 1);
}

#[test]
fn prep_crops_degrades_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let grid = dir.path().join("scene");
    write_grid(&grid, 9, 32);
    let out = dir.path().join("scene.lfsc");
    let report = json(&ok(&["--json", "prep", "--input", s(&grid), "--angular", "5", "--scale", "4", "--out", s(&out)]));
    assert_eq!(report["views"], serde_json::json!([5, 5]));
    let scene = read_container(&out).unwrap();
    assert_eq!(scene.hr.extents(), LfExtents::new(5, 5, 3, 32, 32));
    assert_eq!(scene.lr.as_ref().unwrap().extents(), LfExtents::new(5, 5, 1, 8, 8));
    let first = fs::read(&out).unwrap();
    ok(&["prep", "--input", s(&grid), "--angular", "5", "--scale", "4", "--out", s(&out)]);
    assert_eq!(first, fs::read(&out).unwrap());
}

#[test]
fn prep_rejects_oversized_angular_crop() {
    let dir = TempDir::new().unwrap();
    let grid = dir.path().join("scene");
    write_grid(&grid, 3, 8);
    let out = l2fm(&["prep", "--input", s(&grid), "--angular", "5", "--out", s(&dir.path().join("x.lfsc"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--angular 5"), "{}", stderr(&out));
}

#[test]
fn prep_reports_missing_input() {
    let dir = TempDir::new().unwrap();
    let out = l2fm(&["prep", "--input", s(&dir.path().join("nope")), "--out", s(&dir.path().join("x.lfsc"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn sr_writes_one_image_per_view() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let ckpt = checkpoint(d, &toy(), 1);
    let input = scene_file(d, "scene", 3, 1, 12, 2);
    let out = d.join("sr");
    let report = json(&ok(&["--json", "sr", "--checkpoint", s(&ckpt), "--input", s(&input), "--out", s(&out)]));
    assert_eq!(report["size"], serde_json::json!([12, 12]));
    for u in 0..3 {
        for v in 0..3 {
            let img = image_dims(&out.join(format!("view_{u:02}_{v:02}.png")));
            assert_eq!(img, (12, 12, false));
        }
    }
    let pred = read_container(&out.join("sr.lfsc")).unwrap();
    assert_eq!(pred.hr.extents(), LfExtents::new(3, 3, 1, 12, 12));
}

fn image_dims(p: &Path) -> (u32, u32, bool) {
    let bytes = fs::read(p).unwrap();
    // PNG IHDR: width and height at bytes 16..24, color type at 25.
    let w = u32::from_be_bytes(bytes[16..20].try_into().unwrap());
    let h = u32::from_be_bytes(bytes[20..24].try_into().unwrap());
    (h, w, bytes[25] == 2)
}

#[test]
fn sr_color_path_writes_rgb() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let ckpt = checkpoint(d, &toy(), 1);
    let input = scene_file(d, "scene", 3, 3, 12, 2);
    let out = d.join("sr");
    ok(&["sr", "--checkpoint", s(&ckpt), "--input", s(&input), "--out", s(&out), "--color", "bicubic-chroma"]);
    assert_eq!(image_dims(&out.join("view_01_02.png")), (12, 12, true));

    let gray = scene_file(d, "gray", 3, 1, 12, 2);
    let r = l2fm(&["sr", "--checkpoint", s(&ckpt), "--input", s(&gray), "--out", s(&out), "--color", "bicubic-chroma"]);
    assert_eq!(code(&r), 1);
}

#[test]
fn sr_scale_mismatch_names_both_values() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let ckpt = checkpoint(d, &toy(), 1);
    let input = scene_file(d, "scene", 3, 1, 16, 4);
    let r = l2fm(&["sr", "--checkpoint", s(&ckpt), "--input", s(&input), "--out", s(&d.join("o"))]);
    assert_eq!(code(&r), 1);
    let msg = stderr(&r);
    assert!(msg.contains("x2") && msg.contains("x4"), "{msg}");
}

#[test]
fn sr_rejects_corrupt_checkpoint() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let ckpt = checkpoint(d, &toy(), 1);
    let mut bytes = fs::read(&ckpt).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0x55;
    fs::write(&ckpt, bytes).unwrap();
    let input = scene_file(d, "scene", 3, 1, 12, 2);
    let r = l2fm(&["sr", "--checkpoint", s(&ckpt), "--input", s(&input), "--out", s(&d.join("o"))]);
    assert_eq!(code(&r), 1);
}

#[test]
fn eval_ground_truth_predictions_hit_the_cap() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    scene_file(d, "a", 2, 1, 16, 2);
    scene_file(d, "b", 3, 3, 16, 2);
    let m = manifest(d, vec![test_entry("a", "a.lfsc", Some("a.lfsc")), test_entry("b", "b.lfsc", Some("b.lfsc"))]);
    let report = d.join("report.csv");
    let out = json(&ok(&["--json", "eval", "--dataset", s(&m), "--report", s(&report)]));
    assert_eq!(out["psnr"], 100.0);
    assert_eq!(out["ssim"], 1.0);
    assert_eq!(out["config_digest"], Value::Null);
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.lines().any(|l| l == "dataset,,,100.000000,1.000000"), "{csv}");
    assert_eq!(csv.lines().filter(|l| l.starts_with("view,")).count(), 4 + 9);
}

#[test]
fn eval_dataset_score_is_mean_of_scene_scores() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let cfg = toy();
    let ckpt = checkpoint(d, &cfg, 4);
    scene_file(d, "a", 3, 1, 16, 2);
    scene_file(d, "b", 3, 1, 12, 2);
    let m = manifest(
        d,
        vec![
            test_entry("a", "a.lfsc", None),
            test_entry("b", "b.lfsc", None),
            ManifestEntry { role: Role::Train, ..test_entry("c", "a.lfsc", None) },
        ],
    );
    let report = d.join("r.csv");
    let out = json(&ok(&["--json", "eval", "--checkpoint", s(&ckpt), "--dataset", s(&m), "--report", s(&report)]));
    let scenes = out["scenes"].as_array().unwrap();
    assert_eq!(scenes.len(), 2);
    let mean = |k: &str| scenes.iter().map(|x| x[k].as_f64().unwrap()).sum::<f64>() / 2.0;
    assert!((out["psnr"].as_f64().unwrap() - mean("psnr")).abs() < 1e-12);
    assert!((out["ssim"].as_f64().unwrap() - mean("ssim")).abs() < 1e-12);
    assert_eq!(out["config_digest"], cfg.digest());
    let on_disk: Value = serde_json::from_slice(&fs::read(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(on_disk, out);
}

#[test]
fn eval_error_paths() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let empty = manifest(d, vec![]);
    assert_eq!(code(&l2fm(&["eval", "--dataset", s(&empty), "--report", s(&d.join("r.csv"))])), 1);
    scene_file(d, "a", 3, 1, 12, 2);
    let needs_model = manifest(d, vec![test_entry("a", "a.lfsc", None)]);
    let r = l2fm(&["eval", "--dataset", s(&needs_model), "--report", s(&d.join("r.csv"))]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("--checkpoint"));
    let missing = manifest(d, vec![test_entry("z", "z.lfsc", None)]);
    assert_eq!(code(&l2fm(&["eval", "--dataset", s(&missing), "--report", s(&d.join("r.csv"))])), 1);
}

#[test]
fn count_matches_published_sizes() {
    let dir = TempDir::new().unwrap();
    let out = json(&ok(&["--json", "count", "--flops"]));
    let p = out["params"].as_f64().unwrap();
    assert!((p / 1.09e6 - 1.0).abs() < 0.08, "{p}");
    let g = out["flops"]["gflops"].as_f64().unwrap();
    assert!((g / 37.99 - 1.0).abs() < 0.10, "{g}");
    assert_eq!(out["flops"]["convention"], "mac_is_one");
    let by_path: f64 = out["params_by_path"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert_eq!(by_path, p);

    let k8 = dir.path().join("k8.cfg");
    fs::write(&k8, "k = 8\n").unwrap();
    let p8 = json(&ok(&["--json", "count", "--config", s(&k8)]))["params"].as_f64().unwrap();
    assert!((p8 / 1.998e6 - 1.0).abs() < 0.08, "{p8}");

    let ablation = dir.path().join("ab.cfg");
    fs::write(&ablation, "d_state = 8\nssm_ratio = 2.0\n").unwrap();
    let pa = json(&ok(&["--json", "count", "--config", s(&ablation)]))["params"].as_f64().unwrap();
    assert!((pa / 1.271e6 - 1.0).abs() < 0.08, "{pa}");

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "scale = 3\n").unwrap();
    assert_eq!(code(&l2fm(&["count", "--config", s(&bad)])), 1);
}

#[test]
fn reports_agree_on_the_config_digest() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let cfg = toy();
    let cfg_path = d.join("toy.cfg");
    fs::write(&cfg_path, cfg.to_kv()).unwrap();
    let ckpt = checkpoint(d, &cfg, 2);
    let input = scene_file(d, "a", 3, 1, 12, 2);
    let m = manifest(d, vec![test_entry("a", "a.lfsc", None)]);
    let count = json(&ok(&["--json", "count", "--config", s(&cfg_path)]));
    let sr = json(&ok(&["--json", "sr", "--checkpoint", s(&ckpt), "--input", s(&input), "--out", s(&d.join("o"))]));
    let eval = json(&ok(&["--json", "eval", "--checkpoint", s(&ckpt), "--dataset", s(&m), "--report", s(&d.join("r.csv"))]));
    let bench = json(&ok(&["--json", "bench", "--config", s(&cfg_path), "--angular", "3", "--patch", "8", "--repeats", "1"]));
    for r in [&count, &sr, &eval, &bench] {
        assert_eq!(r["config_digest"], cfg.digest());
        assert_eq!(r["format_version"], 1);
    }
}

#[test]
fn bench_report_shape_is_stable() {
    let dir = TempDir::new().unwrap();
    let cfg_path = dir.path().join("toy.cfg");
    fs::write(&cfg_path, toy().to_kv()).unwrap();
    let run = |repeats: &str, patch: &str| {
        json(&ok(&["--json", "--threads", "1", "bench", "--config", s(&cfg_path), "--angular", "3", "--patch", patch, "--repeats", repeats]))
    };
    let one = run("1", "8");
    let ten = run("10", "8");
    let keys = |v: &Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&one), keys(&ten));
    assert_eq!(ten["times_ms"].as_array().unwrap().len(), 10);
    assert_eq!(ten["threads"], 1);
    assert_eq!(ten["dtype"], "f32");
    assert!(ten["median_ms"].as_f64().unwrap() <= ten["p90_ms"].as_f64().unwrap());

    let medians: Vec<f64> = ["16", "32", "64"].iter().map(|p| run("3", p)["median_ms"].as_f64().unwrap()).collect();
    assert!(medians.windows(2).all(|w| w[0] < w[1]), "{medians:?}");
}

#[test]
fn selfcheck_passes_and_names_injected_fault() {
    let out = ok(&["selfcheck"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 9 && text.lines().all(|l| l.starts_with("PASS")), "{text}");

    let bad = l2fm(&["selfcheck", "--inject-fault"]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL ss2d_direction_merge_order"));
    assert!(stderr(&bad).contains("ss2d_direction_merge_order"));
    assert!(!String::from_utf8_lossy(&l2fm(&["selfcheck", "--help"]).stdout).contains("inject"));
}

fn run_config(model: &ModelConfig, extra: &str) -> String {
    let mut s: String = model.to_kv().lines().map(|l| format!("model.{l}\n")).collect();
    s.push_str(extra);
    s
}

#[test]
fn train_with_zero_rate_keeps_init() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let cfg = toy();
    let data = scene_file(d, "a", 3, 1, 16, 2);
    let rc = d.join("run.cfg");
    fs::write(&rc, run_config(&cfg, "lr0 = 0\nepochs = 1\nsteps_per_epoch = 3\npatch = 8\nstride = 8\nseed = 5\n")).unwrap();
    let out = d.join("out");
    ok(&["train", "--config", s(&rc), "--data", s(&data), "--out", s(&out)]);
    let init = init_model::<f32>(&cfg, 5).unwrap();
    let fin: L2FMambaModel<f32> = load_checkpoint(&out.join("final.ckpt"), Some(&cfg)).unwrap();
    assert_eq!(encode_checkpoint(&init).unwrap(), encode_checkpoint(&fin).unwrap());
    let csv = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("best.ckpt").exists());
}

#[test]
fn train_seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let data = scene_file(d, "a", 3, 1, 16, 2);
    let rc = d.join("run.cfg");
    fs::write(&rc, run_config(&toy(), "epochs = 1\nsteps_per_epoch = 4\npatch = 8\nstride = 4\nseed = 1\n")).unwrap();
    let trace = |extra: &[&str], name: &str| {
        let out = d.join(name);
        let mut args: Vec<&str> = extra.to_vec();
        args.extend(["train", "--config", s(&rc), "--data", s(&data), "--out", s(&out)]);
        ok(&args);
        fs::read_to_string(out.join("loss.csv")).unwrap()
    };
    let a = trace(&[], "a");
    let b = trace(&["--seed", "1"], "b");
    let c = trace(&["--seed", "2"], "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn train_reads_manifests_and_rejects_bad_runs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    scene_file(d, "a", 3, 1, 16, 2);
    scene_file(d, "b", 3, 1, 16, 2);
    let m = manifest(
        d,
        vec![
            ManifestEntry { role: Role::Train, ..test_entry("a", "a.lfsc", None) },
            ManifestEntry { role: Role::Train, ..test_entry("b", "b.lfsc", None) },
        ],
    );
    let rc = d.join("run.cfg");
    fs::write(&rc, run_config(&toy(), "epochs = 1\nsteps_per_epoch = 2\npatch = 8\nstride = 8\n")).unwrap();
    let out = json(&ok(&["--json", "train", "--config", s(&rc), "--data", s(&m), "--out", s(&d.join("o"))]));
    assert_eq!(out["steps"], 2);

    let bad = d.join("bad.cfg");
    fs::write(&bad, run_config(&toy(), "momentum = 0.9\n")).unwrap();
    assert_eq!(code(&l2fm(&["train", "--config", s(&bad), "--data", s(&m), "--out", s(&d.join("p"))])), 1);
    let wrong_scale = d.join("x4.lfsc");
    fs::write(&wrong_scale, encode_container(&make_lr(&SceneRecord::new("x4", hr(3, 1, 16)), 4).unwrap()).unwrap()).unwrap();
    assert_eq!(code(&l2fm(&["train", "--config", s(&rc), "--data", s(&wrong_scale), "--out", s(&d.join("q"))])), 1);
}
