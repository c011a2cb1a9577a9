//! Scene ingestion, the crop/degrade protocol, scene containers and manifests.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framed;
use crate::lf::{LfExtents, Layout, LightFieldTensor};
use crate::ops::color::rgb_to_ycbcr;
use crate::ops::resize::bicubic_resize_to;
use crate::tensor::{DType, Tensor};

pub const DEFAULT_VIEW_PATTERN: &str = "view_{row:02}_{col:02}.png";
pub const CONTAINER_MAGIC: &str = "LFSC";
pub const CONTAINER_VERSION: u16 = 1;

/// One light-field scene: HR views (RGB or Y) and, once degraded, LR Y views.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub name: String,
    pub hr: LightFieldTensor<f32>,
    pub lr: Option<LightFieldTensor<f32>>,
    pub scale: usize,
    pub source: Option<PathBuf>,
}

impl SceneRecord {
    pub fn new(name: impl Into<String>, hr: LightFieldTensor<f32>) -> Self {
        SceneRecord {
            name: name.into(),
            hr: hr.to_layout(Layout::SaiStack),
            lr: None,
            scale: 1,
            source: None,
        }
    }

    /// HR luma views (the HR itself when already single-channel).
    pub fn hr_y(&self) -> Result<LightFieldTensor<f32>> {
        luma_views(&self.hr)
    }

    pub fn lr(&self) -> Result<&LightFieldTensor<f32>> {
        self.lr
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("scene `{}` has no LR views", self.name)))
    }
}

/// Per-view BT.601 Y of an RGB light field; single-channel input passes through.
pub fn luma_views(lf: &LightFieldTensor<f32>) -> Result<LightFieldTensor<f32>> {
    let e = lf.extents();
    let lf = lf.to_layout(Layout::SaiStack);
    match e.c {
        1 => Ok(lf),
        3 => {
            let mut out = Vec::with_capacity(e.views() * e.h * e.w);
            for u in 0..e.u {
                for v in 0..e.v {
                    let rgb = Tensor::from_vec(&[3, e.h, e.w], lf.view(u, v).to_vec())?;
                    out.extend_from_slice(&rgb_to_ycbcr(&rgb)?.data()[..e.h * e.w]);
                }
            }
            LightFieldTensor::new(LfExtents { c: 1, ..e }, Layout::SaiStack, Tensor::from_vec(&[out.len()], out)?)
        }
        c => Err(Error::Shape(format!("expected 1 or 3 channels, got {c}"))),
    }
}

fn pattern_regex(pattern: &str) -> Result<Regex> {
    let mut re = String::from("^");
    let mut rest = pattern;
    let token = Regex::new(r"^\{(row|col)(?::0?(\d+))?\}").unwrap();
    let mut seen = (false, false);
    while !rest.is_empty() {
        if let Some(m) = token.captures(rest) {
            let which = &m[1];
            let width = m.get(2).map(|w| w.as_str());
            let digits = match width {
                Some(w) => format!(r"\d{{{w},}}"),
                None => r"\d+".to_string(),
            };
            re.push_str(&format!("(?P<{which}>{digits})"));
            if which == "row" {
                seen.0 = true;
            } else {
                seen.1 = true;
            }
            rest = &rest[m[0].len()..];
        } else {
            let ch = rest.chars().next().unwrap();
            re.push_str(&regex::escape(&ch.to_string()));
            rest = &rest[ch.len_utf8()..];
        }
    }
    if !(seen.0 && seen.1) {
        return Err(Error::InvalidArgument(format!("view pattern `{pattern}` needs both {{row}} and {{col}}")));
    }
    re.push('$');
    Regex::new(&re).map_err(|e| Error::InvalidArgument(format!("view pattern `{pattern}`: {e}")))
}

/// File name of view `(row, col)` under `pattern`.
pub fn view_file_name(pattern: &str, row: usize, col: usize) -> String {
    let token = Regex::new(r"\{(row|col)(?::0?(\d+))?\}").unwrap();
    token
        .replace_all(pattern, |c: &regex::Captures| {
            let v = if &c[1] == "row" { row } else { col };
            let width: usize = c.get(2).map_or(0, |w| w.as_str().parse().unwrap_or(0));
            format!("{v:0width$}")
        })
        .into_owned()
}

fn read_image(path: &Path) -> Result<(usize, usize, bool, Vec<f32>)> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let color = img.color().has_color();
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    Ok((h as usize, w as usize, color, rgb.into_raw()))
}

/// Assembles a `U×V` view grid from `dir`; views are addressed `(row, col)`.
///
/// The grid extents come from the largest indices present; every position
/// inside them must exist. Scenes whose views are all gray load as one channel.
pub fn load_scene_from_view_grid(dir: &Path, pattern: &str) -> Result<SceneRecord> {
    let re = pattern_regex(pattern)?;
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let (mut rows, mut cols) = (0, 0);
    let mut found = false;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(caps) = name.to_str().and_then(|n| re.captures(n)) else { continue };
        let (Ok(r), Ok(c)) = (caps["row"].parse::<usize>(), caps["col"].parse::<usize>()) else { continue };
        rows = rows.max(r + 1);
        cols = cols.max(c + 1);
        found = true;
    }
    if !found {
        return Err(Error::InvalidArgument(format!("no files matching `{pattern}` in {}", dir.display())));
    }
    let mut views = Vec::with_capacity(rows * cols);
    let mut size = None;
    let mut any_color = false;
    for r in 0..rows {
        for c in 0..cols {
            let path = dir.join(view_file_name(pattern, r, c));
            if !path.exists() {
                return Err(Error::MissingView {
                    dir: dir.to_path_buf(),
                    row: r,
                    col: c,
                });
            }
            let (h, w, color, data) = read_image(&path)?;
            match size {
                None => size = Some((h, w)),
                Some(s) if s != (h, w) => {
                    return Err(Error::Shape(format!(
                        "{} is {h}x{w}, earlier views are {}x{}",
                        path.display(),
                        s.0,
                        s.1
                    )))
                }
                _ => {}
            }
            any_color |= color;
            views.push(data);
        }
    }
    let (h, w) = size.unwrap();
    let ch = if any_color { 3 } else { 1 };
    let e = LfExtents::new(rows, cols, ch, h, w);
    let hr = LightFieldTensor::from_fn(e, |u, v, c, y, x| views[u * cols + v][(y * w + x) * 3 + c]);
    let name = dir.file_name().map_or_else(|| "scene".to_string(), |n| n.to_string_lossy().into_owned());
    let mut scene = SceneRecord::new(name, hr);
    scene.source = Some(dir.to_path_buf());
    Ok(scene)
}

/// Keeps the central `a×a` views (offset `⌊(U−a)/2⌋`).
pub fn central_crop_views(scene: &SceneRecord, a: usize) -> Result<SceneRecord> {
    let e = scene.hr.extents();
    if a == 0 || a > e.u || a > e.v {
        return Err(Error::InvalidArgument(format!(
            "cannot crop {a}x{a} views from a {}x{} grid",
            e.u, e.v
        )));
    }
    let (ou, ov) = ((e.u - a) / 2, (e.v - a) / 2);
    let crop = |lf: &LightFieldTensor<f32>| {
        let src = lf.to_layout(Layout::SaiStack);
        let le = src.extents();
        LightFieldTensor::from_fn(LfExtents { u: a, v: a, ..le }, |u, v, c, y, x| src.get(u + ou, v + ov, c, y, x))
    };
    Ok(SceneRecord {
        name: scene.name.clone(),
        hr: crop(&scene.hr),
        lr: scene.lr.as_ref().map(crop),
        scale: scene.scale,
        source: scene.source.clone(),
    })
}

/// Center crop of every view to `h×w`.
pub fn center_crop_spatial(lf: &LightFieldTensor<f32>, h: usize, w: usize) -> Result<LightFieldTensor<f32>> {
    let e = lf.extents();
    if h > e.h || w > e.w {
        return Err(Error::InvalidArgument(format!("cannot crop {}x{} views to {h}x{w}", e.h, e.w)));
    }
    let (oy, ox) = ((e.h - h) / 2, (e.w - w) / 2);
    let src = lf.to_layout(Layout::SaiStack);
    Ok(LightFieldTensor::from_fn(LfExtents { h, w, ..e }, |u, v, c, y, x| {
        src.get(u, v, c, y + oy, x + ox)
    }))
}

/// Center-crops HR to a multiple of `scale`, then derives LR Y views by
/// antialiased bicubic downscaling of the HR luma.
pub fn make_lr(scene: &SceneRecord, scale: usize) -> Result<SceneRecord> {
    if scale < 1 {
        return Err(Error::InvalidArgument("scale must be positive".into()));
    }
    let e = scene.hr.extents();
    let (h, w) = (e.h / scale * scale, e.w / scale * scale);
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} views are smaller than the scale factor {scale}",
            e.h, e.w
        )));
    }
    let hr = center_crop_spatial(&scene.hr, h, w)?;
    let y = luma_views(&hr)?;
    let planes = y.tensor().clone().reshape(&[e.views(), h, w])?;
    let lr = bicubic_resize_to(&planes, h / scale, w / scale, true)?;
    let lr = LightFieldTensor::new(LfExtents::new(e.u, e.v, 1, h / scale, w / scale), Layout::SaiStack, lr)?;
    Ok(SceneRecord {
        name: scene.name.clone(),
        hr,
        lr: Some(lr),
        scale,
        source: scene.source.clone(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ContainerHeader {
    name: String,
    scale: usize,
    dtype: DType,
    hr: LfExtents,
    lr: Option<LfExtents>,
    source: Option<PathBuf>,
}

pub fn encode_container(scene: &SceneRecord) -> Result<Vec<u8>> {
    let hr = scene.hr.to_layout(Layout::SaiStack);
    let lr = scene.lr.as_ref().map(|l| l.to_layout(Layout::SaiStack));
    let header = ContainerHeader {
        name: scene.name.clone(),
        scale: scene.scale,
        dtype: DType::F32,
        hr: hr.extents(),
        lr: lr.as_ref().map(|l| l.extents()),
        source: scene.source.clone(),
    };
    let mut payload = hr.tensor().to_le_bytes();
    if let Some(l) = &lr {
        payload.extend_from_slice(&l.tensor().to_le_bytes());
    }
    framed::encode(CONTAINER_MAGIC, CONTAINER_VERSION, &header, &payload)
}

pub fn decode_container(bytes: &[u8]) -> Result<SceneRecord> {
    let (h, payload): (ContainerHeader, _) = framed::decode(bytes, CONTAINER_MAGIC, CONTAINER_VERSION)?;
    if h.dtype != DType::F32 {
        return Err(Error::Header(format!("unsupported scene dtype {:?}", h.dtype)));
    }
    let take = |e: LfExtents, off: usize| -> Result<(LightFieldTensor<f32>, usize)> {
        let end = off + e.numel() * 4;
        let raw = payload
            .get(off..end)
            .ok_or_else(|| Error::Header("tensor data runs past the payload".into()))?;
        let t = Tensor::<f32>::from_le_bytes(&e.backing_shape(Layout::SaiStack), raw)?;
        Ok((LightFieldTensor::new(e, Layout::SaiStack, t)?, end))
    };
    let (hr, off) = take(h.hr, 0)?;
    let (lr, off) = match h.lr {
        Some(e) => {
            let (l, o) = take(e, off)?;
            (Some(l), o)
        }
        None => (None, off),
    };
    if off != payload.len() {
        return Err(Error::Header("trailing bytes after scene tensors".into()));
    }
    if let Some(l) = &lr {
        let (he, le) = (hr.extents(), l.extents());
        if le.h * h.scale != he.h || le.w * h.scale != he.w || (le.u, le.v) != (he.u, he.v) {
            return Err(Error::Header(format!("LR extents {le:?} are not HR {he:?} over {}", h.scale)));
        }
    }
    Ok(SceneRecord {
        name: h.name,
        hr,
        lr,
        scale: h.scale,
        source: h.source,
    })
}

pub fn write_container(scene: &SceneRecord, path: &Path) -> Result<()> {
    framed::write_atomic(path, &encode_container(scene)?)
}

pub fn read_container(path: &Path) -> Result<SceneRecord> {
    decode_container(&framed::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    /// Scene container, relative to the manifest.
    pub path: PathBuf,
    pub role: Role,
    /// Precomputed prediction container to score instead of running the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    #[serde(default)]
    pub angular: Option<usize>,
    pub scenes: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Reads a manifest, resolving scene paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut m.scenes {
            s.path = base.join(&s.path);
            if let Some(p) = &mut s.prediction {
                *p = base.join(&*p);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for s in &self.scenes {
            if !names.insert(&s.name) {
                return Err(Error::Config(format!("duplicate scene `{}` in manifest", s.name)));
            }
            for p in std::iter::once(&s.path).chain(&s.prediction) {
                if !p.exists() {
                    return Err(Error::Config(format!("scene `{}`: {} does not exist", s.name, p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.scenes.iter().filter(move |s| s.role == role)
    }
}

/// Writes an `[H, W]` plane in `[0, 1]` as an 8-bit gray PNG.
pub fn save_gray_png(path: &Path, plane: &[f32], h: usize, w: usize) -> Result<()> {
    let bytes: Vec<u8> = plane.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::Shape(format!("{} values do not fill {h}x{w}", plane.len())))?;
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes a planar `[3, H, W]` image in `[0, 1]` as an 8-bit RGB PNG.
pub fn save_rgb_png(path: &Path, planes: &[f32], h: usize, w: usize) -> Result<()> {
    let n = h * w;
    if planes.len() != 3 * n {
        return Err(Error::Shape(format!("{} values do not fill 3x{h}x{w}", planes.len())));
    }
    let bytes: Vec<u8> = (0..n)
        .flat_map(|p| (0..3).map(move |c| (planes[c * n + p].clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let img = image::RgbImage::from_raw(w as u32, h as u32, bytes).unwrap();
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
