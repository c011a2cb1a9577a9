//! PSNR and SSIM on the Y channel, averaged over views then scenes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lf::{Layout, LightFieldTensor};
use crate::tensor::{Real, Tensor};

/// PSNR reported for a zero-error pair.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn plane<T: Real>(x: &Tensor<T>) -> Result<(usize, usize)> {
    match *x.shape() {
        [h, w] => Ok((h, w)),
        _ => Err(Error::Shape(format!("expected a single-channel [H, W] image, got {:?}", x.shape()))),
    }
}

fn same_extents<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize)> {
    let hw = plane(a)?;
    if plane(b)? != hw {
        return Err(Error::Shape(format!("image extents differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(hw)
}

/// `10·log10(1 / MSE)` for images in `[0, 1]`.
pub fn psnr<T: Real>(reference: &Tensor<T>, test: &Tensor<T>) -> Result<f64> {
    same_extents(reference, test)?;
    let n = reference.numel().max(1) as f64;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(&a, &b)| {
            let d = a.to_f64().unwrap() - b.to_f64().unwrap();
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1D Gaussian; the 2D window is its outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - mid;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of a row-major `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = g.iter().enumerate().map(|(j, &gj)| gj * x[y * w + ox + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = g.iter().enumerate().map(|(i, &gi)| gi * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows, dynamic range 1.
pub fn ssim<T: Real>(reference: &Tensor<T>, test: &Tensor<T>) -> Result<f64> {
    let (h, w) = same_extents(reference, test)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")));
    }
    let x: Vec<f64> = reference.data().iter().map(|v| v.to_f64().unwrap()).collect();
    let y: Vec<f64> = test.data().iter().map(|v| v.to_f64().unwrap()).collect();
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    let mx = filter_valid(&x, h, w, &g);
    let my = filter_valid(&y, h, w, &g);
    let mxx = filter_valid(&prod(&x, &x), h, w, &g);
    let myy = filter_valid(&prod(&y, &y), h, w, &g);
    let mxy = filter_valid(&prod(&x, &y), h, w, &g);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let sx = mxx[i] - ux * ux;
        let sy = myy[i] - uy * uy;
        let sxy = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * sxy + c2)) / ((ux * ux + uy * uy + c1) * (sx + sy + c2));
    }
    Ok(total / n as f64)
}

/// Drops `n` pixels from every border of an `[H, W]` image.
pub fn shave<T: Real>(x: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let (h, w) = plane(x)?;
    if n == 0 {
        return Ok(x.clone());
    }
    if 2 * n >= h || 2 * n >= w {
        return Err(Error::InvalidArgument(format!("cannot shave {n} pixels from a {h}x{w} image")));
    }
    let (oh, ow) = (h - 2 * n, w - 2 * n);
    Tensor::from_vec(
        &[oh, ow],
        (0..oh * ow).map(|i| x.data()[(i / ow + n) * w + i % ow + n]).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub view_psnr: Vec<f64>,
    pub view_ssim: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl SceneScore {
    pub fn from_views(name: impl Into<String>, view_psnr: Vec<f64>, view_ssim: Vec<f64>) -> Result<Self> {
        if view_psnr.is_empty() || view_psnr.len() != view_ssim.len() {
            return Err(Error::InvalidArgument("a scene score needs one PSNR and SSIM per view".into()));
        }
        Ok(SceneScore {
            name: name.into(),
            psnr: mean(&view_psnr),
            ssim: mean(&view_ssim),
            view_psnr,
            view_ssim,
        })
    }
}

/// Scores every view of a single-channel light field against its reference.
pub fn score_scene<T: Real>(
    name: &str,
    reference: &LightFieldTensor<T>,
    test: &LightFieldTensor<T>,
    shave_px: usize,
) -> Result<SceneScore> {
    let e = reference.extents();
    if test.extents() != e {
        return Err(Error::Shape(format!("prediction extents {:?} differ from reference {:?}", test.extents(), e)));
    }
    if e.c != 1 {
        return Err(Error::Shape(format!("metrics run on the Y channel only, got {} channels", e.c)));
    }
    let r = reference.to_layout(Layout::SaiStack);
    let t = test.to_layout(Layout::SaiStack);
    let mut ps = Vec::with_capacity(e.views());
    let mut ss = Vec::with_capacity(e.views());
    for u in 0..e.u {
        for v in 0..e.v {
            let a = shave(&Tensor::from_vec(&[e.h, e.w], r.view(u, v).to_vec())?, shave_px)?;
            let b = shave(&Tensor::from_vec(&[e.h, e.w], t.view(u, v).to_vec())?, shave_px)?;
            ps.push(psnr(&a, &b)?);
            ss.push(ssim(&a, &b)?);
        }
    }
    SceneScore::from_views(name, ps, ss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub psnr: f64,
    pub ssim: f64,
    pub scenes: Vec<SceneScore>,
}

/// Unweighted mean of scene means.
pub fn aggregate(scenes: Vec<SceneScore>) -> Result<DatasetScore> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("no scenes to aggregate".into()));
    }
    let p: Vec<f64> = scenes.iter().map(|s| s.psnr).collect();
    let s: Vec<f64> = scenes.iter().map(|s| s.ssim).collect();
    Ok(DatasetScore {
        psnr: mean(&p),
        ssim: mean(&s),
        scenes,
    })
}

impl DatasetScore {
    /// `level,scene,view,psnr,ssim` rows: views, then scenes, then the dataset.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,scene,view,psnr,ssim\n");
        for s in &self.scenes {
            for (i, (p, q)) in s.view_psnr.iter().zip(&s.view_ssim).enumerate() {
                out.push_str(&format!("view,{},{i},{p:.6},{q:.6}\n", s.name));
            }
        }
        for s in &self.scenes {
            out.push_str(&format!("scene,{},,{:.6},{:.6}\n", s.name, s.psnr, s.ssim));
        }
        out.push_str(&format!("dataset,,,{:.6},{:.6}\n", self.psnr, self.ssim));
        out
    }
}
