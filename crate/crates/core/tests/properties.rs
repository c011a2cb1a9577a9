use l2fm::data::{central_crop_views, decode_container, encode_container, luma_views, make_lr, SceneRecord};
use l2fm::metrics::{psnr, ssim, PSNR_CAP_DB};
use l2fm::model::checkpoint::{decode_checkpoint, encode_checkpoint};
use l2fm::model::{init_model, L2FMambaModel, ModelConfig};
use l2fm::ops::conv::{conv2d, dwconv3x3, ConvWeights, Padding};
use l2fm::ops::norm::layer_norm;
use l2fm::ops::resize::bicubic_resize_to;
use l2fm::ops::shuffle::{pixel_shuffle, pixel_unshuffle};
use l2fm::scan::{inter_paths, intra_paths, macpi_paths, paths_for, Direction, Family};
use l2fm::ssm::{selective_scan, ScanInputs};
use l2fm::train::{adam_step, augment, steplr, AdamState, Augment, TrainConfig};
use l2fm::{Layout, LfExtents, LightFieldTensor, Tensor};
use proptest::prelude::*;

fn lf_strategy(max_a: usize, max_s: usize, max_c: usize) -> impl Strategy<Value = LightFieldTensor<f32>> {
    (1..=max_a, 1..=max_a, 1..=max_c, 1..=max_s, 1..=max_s, any::<u64>()).prop_map(|(u, v, c, h, w, seed)| {
        LightFieldTensor::from_fn(LfExtents::new(u, v, c, h, w), |a, b, ch, y, x| {
            let k = (seed ^ ((a * 131 + b * 71 + ch * 31 + y * 7 + x) as u64)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            (k >> 40) as f32 / (1u64 << 24) as f32
        })
    })
}

fn scene_strategy(max_a: usize, max_s: usize) -> impl Strategy<Value = LightFieldTensor<f32>> {
    (lf_strategy(max_a, max_s, 1), any::<bool>()).prop_map(|(lf, color)| {
        if !color {
            return lf;
        }
        let e = lf.extents();
        LightFieldTensor::from_fn(LfExtents { c: 3, ..e }, |u, v, c, y, x| (lf.get(u, v, 0, y, x) + 0.25 * c as f32) % 1.0)
    })
}

fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut s = seed | 1;
    Tensor::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

fn layouts() -> impl Strategy<Value = Layout> {
    prop_oneof![Just(Layout::SaiStack), Just(Layout::SaisMosaic), Just(Layout::MacPi)]
}

/// Window-local raster over the SAI mosaic with windows of exactly one view.
fn window_scan(u: usize, v: usize, h: usize, w: usize, d: Direction) -> Vec<u32> {
    let token = |a: usize, b: usize, y: usize, x: usize| ((a * v + b) * h * w + y * w + x) as u32;
    let mut out = Vec::new();
    match d {
        Direction::LeftRight | Direction::RightLeft => {
            for a in 0..u {
                for b in 0..v {
                    for y in 0..h {
                        for x in 0..w {
                            out.push(token(a, b, y, x));
                        }
                    }
                }
            }
        }
        Direction::TopDown | Direction::BottomUp => {
            for b in 0..v {
                for a in 0..u {
                    for x in 0..w {
                        for y in 0..h {
                            out.push(token(a, b, y, x));
                        }
                    }
                }
            }
        }
    }
    if matches!(d, Direction::BottomUp | Direction::RightLeft) {
        out.reverse();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layout_conversion_is_bijective(lf in lf_strategy(4, 6, 3), a in layouts(), b in layouts()) {
        let there = lf.to_layout(a).to_layout(b);
        prop_assert!(there.to_layout(Layout::SaiStack).tensor().bit_eq(lf.tensor()));
        prop_assert_eq!(there.get(0, 0, 0, 0, 0).to_bits(), lf.get(0, 0, 0, 0, 0).to_bits());
    }

    #[test]
    fn pixel_shuffle_round_trips(n in 1usize..3, h in 1usize..5, w in 1usize..5, c in 1usize..3, alpha in 1usize..4, seed in any::<u64>()) {
        let x = tensor(&[n, h, w, c * alpha * alpha], seed);
        let y = pixel_shuffle(&x, alpha).unwrap();
        prop_assert_eq!(y.shape(), &[n, h * alpha, w * alpha, c][..]);
        let mut a: Vec<f64> = x.data().to_vec();
        let mut b: Vec<f64> = y.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        prop_assert!(pixel_unshuffle(&y, alpha).unwrap().bit_eq(&x));
    }

    #[test]
    fn conv2d_matches_nested_loops(n in 1usize..3, h in 1usize..7, w in 1usize..7, cin in 1usize..4, cout in 1usize..4,
                                   k in prop_oneof![Just(1usize), Just(3)], stride in 1usize..3, same in any::<bool>(), seed in any::<u64>()) {
        prop_assume!(same || (h >= k && w >= k));
        let x = tensor(&[n, h, w, cin], seed);
        let wt = tensor(&[cout, cin, k, k], seed ^ 1);
        let bias = tensor(&[cout], seed ^ 2);
        let pad = if same { (k - 1) / 2 } else { 0 };
        let got = conv2d(&x, &ConvWeights::new(wt.clone(), Some(bias.clone())).unwrap(), stride, if same { Padding::Same } else { Padding::Valid }).unwrap();
        let (oh, ow) = ((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1);
        prop_assert_eq!(got.shape(), &[n, oh, ow, cout][..]);
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..cout {
                        let mut acc = bias.data()[co];
                        for ky in 0..k {
                            for kx in 0..k {
                                let (iy, ix) = ((oy * stride + ky) as isize - pad as isize, (ox * stride + kx) as isize - pad as isize);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    acc += x.data()[((b * h + iy as usize) * w + ix as usize) * cin + ci]
                                        * wt.data()[((co * cin + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        let g = got.data()[((b * oh + oy) * ow + ox) * cout + co];
                        prop_assert!((g - acc).abs() <= 1e-12 * acc.abs().max(1.0), "{} vs {}", g, acc);
                    }
                }
            }
        }
    }

    #[test]
    fn dwconv_matches_nested_loops(n in 1usize..3, h in 1usize..6, w in 1usize..6, c in 1usize..5, seed in any::<u64>()) {
        let x = tensor(&[n, h, w, c], seed);
        let wt = tensor(&[c, 1, 3, 3], seed ^ 3);
        let bias = tensor(&[c], seed ^ 4);
        let got = dwconv3x3(&x, &wt, Some(&bias)).unwrap();
        let got32 = dwconv3x3(&x.cast::<f32>(), &wt.cast(), Some(&bias.cast())).unwrap();
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    for ch in 0..c {
                        let mut acc = bias.data()[ch];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (iy, ix) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                                    acc += x.data()[((b * h + iy as usize) * w + ix as usize) * c + ch] * wt.data()[ch * 9 + ky * 3 + kx];
                                }
                            }
                        }
                        let i = ((b * h + y) * w + xx) * c + ch;
                        prop_assert!((got.data()[i] - acc).abs() <= 1e-12 * acc.abs().max(1.0));
                        prop_assert!((got32.data()[i] as f64 - acc).abs() <= 1e-6 * acc.abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn bicubic_keeps_constants_and_identity(c in 1usize..3, h in 1usize..9, w in 1usize..9, oh in 1usize..17, ow in 1usize..17,
                                            value in 0.0f64..1.0, aa in any::<bool>(), seed in any::<u64>()) {
        let flat = Tensor::from_fn(&[c, h, w], |_| value);
        let r = bicubic_resize_to(&flat, oh, ow, aa).unwrap();
        prop_assert!(r.data().iter().all(|&v| (v - value).abs() < 1e-12));
        let x = tensor(&[c, h, w], seed);
        prop_assert!(bicubic_resize_to(&x, h, w, aa).unwrap().max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn layer_norm_standardizes(rows in 1usize..6, c in 4usize..40, scale in 0.5f64..20.0, shift in -5.0f64..5.0, seed in any::<u64>()) {
        let x = tensor(&[rows, c], seed).map(|v| v * scale + shift);
        let y = layer_norm(&x, &Tensor::from_fn(&[c], |_| 1.0), &Tensor::zeros(&[c]), 1e-6).unwrap();
        for (xr, row) in x.data().chunks(c).zip(y.data().chunks(c)) {
            let xm = xr.iter().sum::<f64>() / c as f64;
            let xv = xr.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / c as f64;
            prop_assume!(xv > 1e-2);
            let m = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c as f64;
            prop_assert!(m.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn scan_paths_are_bijections_with_reversals(u in 1usize..6, v in 1usize..6, h in 1usize..9, w in 1usize..9) {
        for fam in Family::ALL {
            let p = paths_for(fam, u, v, h, w).unwrap();
            let n = if fam == Family::Intra { h * w } else { u * v * h * w };
            for path in p.iter() {
                let mut seen = vec![false; n];
                for &t in &path.forward {
                    prop_assert!(!std::mem::replace(&mut seen[t as usize], true));
                }
                prop_assert!(seen.iter().all(|&s| s));
                for (i, &t) in path.forward.iter().enumerate() {
                    prop_assert_eq!(path.inverse[t as usize] as usize, i);
                }
            }
            let rev = |i: usize| p[i].forward.iter().rev().copied().collect::<Vec<_>>();
            prop_assert_eq!(&p[2].forward, &rev(0));
            prop_assert_eq!(&p[3].forward, &rev(1));
            prop_assert_eq!(p[2].direction, Direction::BottomUp);
            prop_assert_eq!(p[3].direction, Direction::RightLeft);
        }
    }

    #[test]
    fn scan_path_degeneracies(u in 1usize..6, v in 1usize..6, h in 1usize..9, w in 1usize..9) {
        let intra = intra_paths(h, w).unwrap();
        let (inter1, macpi1) = (inter_paths(1, 1, h, w).unwrap(), macpi_paths(1, 1, h, w).unwrap());
        let (inter_px, macpi_px) = (inter_paths(u, v, 1, 1).unwrap(), macpi_paths(u, v, 1, 1).unwrap());
        let angular = intra_paths(u, v).unwrap();
        for i in 0..4 {
            prop_assert_eq!(&inter1[i].forward, &intra[i].forward);
            prop_assert_eq!(&macpi1[i].forward, &intra[i].forward);
            prop_assert_eq!(&inter_px[i].forward, &angular[i].forward);
            prop_assert_eq!(&macpi_px[i].forward, &angular[i].forward);
        }
    }

    #[test]
    fn inter_path_is_view_sized_window_scan(u in 1usize..6, v in 1usize..6, h in 1usize..9, w in 1usize..9) {
        for p in inter_paths(u, v, h, w).unwrap().iter() {
            prop_assert_eq!(&p.forward, &window_scan(u, v, h, w, p.direction));
        }
    }

    #[test]
    fn selective_scan_matches_recurrence(l in 1usize..=16, d in 1usize..=16, n in 1usize..=16, batch in 1usize..3, seed in any::<u64>()) {
        let x = tensor(&[batch, l, d], seed);
        let dt = tensor(&[batch, l, d], seed ^ 5).map(|v| 0.05 + 0.45 * (v + 1.0));
        let a = tensor(&[d, n], seed ^ 6).map(|v| -0.1 - (v + 1.0));
        let b = tensor(&[batch, l, n], seed ^ 7);
        let c = tensor(&[batch, l, n], seed ^ 8);
        let ds = tensor(&[d], seed ^ 9);
        let y = selective_scan(&ScanInputs { x: &x, delta: &dt, a: &a, b: &b, c: &c, d_skip: &ds }).unwrap();
        for bi in 0..batch {
            for di in 0..d {
                let mut hs = vec![0.0; n];
                for t in 0..l {
                    let r = (bi * l + t) * d + di;
                    let mut want = ds.data()[di] * x.data()[r];
                    for k in 0..n {
                        let q = (bi * l + t) * n + k;
                        hs[k] = (dt.data()[r] * a.data()[di * n + k]).exp() * hs[k] + dt.data()[r] * b.data()[q] * x.data()[r];
                        want += c.data()[q] * hs[k];
                    }
                    prop_assert!((y.data()[r] - want).abs() <= 1e-12 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn augmentations_form_the_expected_group(lf in lf_strategy(4, 5, 2)) {
        let id = lf.to_layout(Layout::SaiStack);
        let eq = |a: &LightFieldTensor<f32>, b: &LightFieldTensor<f32>| a.extents() == b.extents() && a.tensor().bit_eq(b.tensor());
        let twice = |op| augment(&augment(&lf, op), op);
        prop_assert!(eq(&twice(Augment::Hflip), &id));
        prop_assert!(eq(&twice(Augment::Vflip), &id));
        let r2 = twice(Augment::Rot90);
        prop_assert!(eq(&augment(&augment(&r2, Augment::Rot90), Augment::Rot90), &id));
        prop_assert!(eq(&r2, &augment(&augment(&lf, Augment::Vflip), Augment::Hflip)));
    }

    #[test]
    fn central_crop_keeps_views_exactly(lf in lf_strategy(6, 4, 3), a in 1usize..7) {
        let e = lf.extents();
        prop_assume!(a <= e.u && a <= e.v);
        let crop = central_crop_views(&SceneRecord::new("s", lf.clone()), a).unwrap();
        let (ou, ov) = ((e.u - a) / 2, (e.v - a) / 2);
        let ce = crop.hr.extents();
        prop_assert_eq!(ce, LfExtents { u: a, v: a, ..e });
        for u in 0..a {
            for v in 0..a {
                for c in 0..e.c {
                    for y in 0..e.h {
                        for x in 0..e.w {
                            prop_assert_eq!(crop.hr.get(u, v, c, y, x).to_bits(), lf.get(u + ou, v + ov, c, y, x).to_bits());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn luma_stays_in_studio_range(lf in lf_strategy(2, 5, 1), seed in any::<u64>()) {
        let e = lf.extents();
        let rgb = LightFieldTensor::from_fn(LfExtents { c: 3, ..e }, |u, v, c, y, x| {
            let k = (seed ^ ((u * 17 + v * 13 + c * 7 + y * 3 + x) as u64)).wrapping_mul(0x2545_F491_4F6C_DD1D);
            (k >> 40) as f32 / (1u64 << 24) as f32
        });
        let y = luma_views(&rgb).unwrap();
        prop_assert!(y.tensor().data().iter().all(|&v| (16.0 / 255.0 - 1e-6..=235.0 / 255.0 + 1e-6).contains(&v)));
    }

    #[test]
    fn container_round_trip_and_lr_determinism(lf in scene_strategy(3, 12), scale in 1usize..4) {
        let e = lf.extents();
        prop_assume!(e.h >= scale && e.w >= scale);
        let scene = make_lr(&SceneRecord::new("p", lf), scale).unwrap();
        let bytes = encode_container(&scene).unwrap();
        prop_assert_eq!(&decode_container(&bytes).unwrap(), &scene);
        let again = make_lr(&SceneRecord::new("p", scene.hr.clone()), scale).unwrap();
        prop_assert_eq!(encode_container(&again).unwrap(), bytes);
    }

    #[test]
    fn metric_identities(h in 11usize..24, w in 11usize..24, seed in any::<u64>(), seed2 in any::<u64>()) {
        let a = tensor(&[h, w], seed).map(|v| (v + 1.0) / 2.0);
        let b = tensor(&[h, w], seed2).map(|v| (v + 1.0) / 2.0);
        prop_assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let s = ssim(&a, &b).unwrap();
        prop_assert!(s <= 1.0 && s >= -1.0);
    }

    #[test]
    fn adam_with_zero_gradients_is_a_no_op(seed in any::<u64>(), lr in 0.0f64..1.0, steps in 1usize..4) {
        let cfg = ModelConfig { c: 4, k: 1, d_state: 2, u: 2, v: 2, scale: 2, dt_rank: 1, ..ModelConfig::default() };
        let m = init_model::<f32>(&cfg, seed).unwrap();
        let mut params = m.params.clone();
        let zeros = params.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect();
        let mut state = AdamState::new(&params);
        for _ in 0..steps {
            adam_step(&mut params, &zeros, &mut state, lr).unwrap();
        }
        prop_assert!(params.iter().all(|(k, v)| v.bit_eq(&m.params[k])));
    }

    #[test]
    fn steplr_halves_exactly(epoch in 0usize..400) {
        let cfg = TrainConfig::default();
        let want = cfg.lr0 * 0.5f64.powi((epoch / 30) as i32);
        prop_assert_eq!(steplr(epoch, &cfg), want);
        if epoch % 30 != 29 {
            prop_assert_eq!(steplr(epoch + 1, &cfg), want);
        } else {
            prop_assert_eq!(steplr(epoch + 1, &cfg), want / 2.0);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact(seed in any::<u64>(), k in 1usize..3, c in prop_oneof![Just(4usize), Just(8)]) {
        let cfg = ModelConfig { c, k, d_state: 2, u: 2, v: 3, scale: 2, dt_rank: 1, ..ModelConfig::default() };
        let m = init_model::<f32>(&cfg, seed).unwrap();
        let bytes = encode_checkpoint(&m).unwrap();
        let back: L2FMambaModel<f32> = decode_checkpoint(&bytes, Some(&cfg)).unwrap();
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        prop_assert!(m.params.iter().all(|(k, v)| v.bit_eq(&back.params[k])));
    }

    #[test]
    fn config_text_round_trips(c in 1usize..128, k in 1usize..9, d_state in 1usize..33, a in 1usize..10,
                               scale in prop_oneof![Just(2usize), Just(4)], p_ang in any::<bool>()) {
        let cfg = ModelConfig { c, k, d_state, u: a, v: a, scale, p_ang, ..ModelConfig::default() };
        let cfg = ModelConfig { dt_rank: l2fm::model::config::default_dt_rank(c), ..cfg };
        prop_assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }
}

#[test]
fn scan_state_stays_bounded_on_long_sequences() {
    let (l, d, n) = (10_000, 4, 8);
    let x = tensor(&[1, l, d], 1);
    let dt = tensor(&[1, l, d], 2).map(|v| 0.001 + 0.05 * (v + 1.0));
    let a = tensor(&[d, n], 3).map(|v| -0.5 - (v + 1.0));
    let b = tensor(&[1, l, n], 4);
    let c = tensor(&[1, l, n], 5);
    let ds = Tensor::zeros(&[d]);
    let y = selective_scan(&ScanInputs { x: &x.cast::<f32>(), delta: &dt.cast(), a: &a.cast(), b: &b.cast(), c: &c.cast(), d_skip: &ds }).unwrap();
    // |h| <= max|dt·B·x| / (1 - max exp(dt·A)); |y| <= N·max|C|·that.
    let max_bar = (0..l * d)
        .map(|r| (dt.data()[r] * a.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max)).exp())
        .fold(0.0, f64::max);
    let max_in = (0..l * d).map(|r| dt.data()[r] * x.data()[r].abs()).fold(0.0, f64::max);
    let bound = n as f64 * max_in / (1.0 - max_bar);
    assert!(y.data().iter().all(|v| v.is_finite() && (*v as f64).abs() <= bound * (1.0 + 1e-4)), "bound {bound}");
}
