//! Token orderings for the four-direction 2D selective scans.
//!
//! Token ids are always SAI-stack flattened: `(u·V+v)·H·W + h·W + w`.
//! `LeftRight` is a row-major raster, `TopDown` a column-major raster, and
//! the other two directions reverse the whole sequence.
//!
//! Composite paths pair the same direction index for the angular grid and the
//! spatial grid: `Inter` walks views in the outer loop and pixels inside each
//! view, `MacPi` walks macro-pixels (spatial sites) in the outer loop and the
//! angular samples inside each macro-pixel.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    TopDown,
    LeftRight,
    BottomUp,
    RightLeft,
}

impl Direction {
    /// Scan order of the four SS2D branches.
    pub const ALL: [Direction; 4] = [
        Direction::TopDown,
        Direction::LeftRight,
        Direction::BottomUp,
        Direction::RightLeft,
    ];

    pub fn reversed(self) -> Direction {
        match self {
            Direction::TopDown => Direction::BottomUp,
            Direction::BottomUp => Direction::TopDown,
            Direction::LeftRight => Direction::RightLeft,
            Direction::RightLeft => Direction::LeftRight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Intra,
    Inter,
    MacPi,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Intra, Family::Inter, Family::MacPi];

    pub fn name(self) -> &'static str {
        match self {
            Family::Intra => "intra",
            Family::Inter => "inter",
            Family::MacPi => "macpi",
        }
    }
}

/// One scan direction as a permutation of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanPath {
    pub family: Family,
    pub direction: Direction,
    /// Token visited at sequence position `t`.
    pub forward: Vec<u32>,
    /// Sequence position of each token.
    pub inverse: Vec<u32>,
}

impl ScanPath {
    pub fn new(family: Family, direction: Direction, forward: Vec<u32>) -> Result<Self> {
        let inverse = invert(&forward)?;
        Ok(ScanPath {
            family,
            direction,
            forward,
            inverse,
        })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Checks that `forward` is a bijection and `inverse` undoes it.
    pub fn validate(&self) -> Result<()> {
        let n = self.forward.len();
        if self.inverse.len() != n {
            return Err(Error::InvalidArgument("inverse length differs from forward".into()));
        }
        let mut seen = vec![false; n];
        for (t, &tok) in self.forward.iter().enumerate() {
            let tok = tok as usize;
            if tok >= n || seen[tok] {
                return Err(Error::InvalidArgument(format!("token {tok} out of range or repeated")));
            }
            seen[tok] = true;
            if self.inverse[tok] as usize != t {
                return Err(Error::InvalidArgument(format!("inverse[{tok}] != {t}")));
            }
        }
        Ok(())
    }
}

/// Inverse of a permutation; errors if `perm` is not one.
pub fn invert(perm: &[u32]) -> Result<Vec<u32>> {
    let n = perm.len();
    let mut inv = vec![u32::MAX; n];
    for (t, &tok) in perm.iter().enumerate() {
        let tok = tok as usize;
        if tok >= n || inv[tok] != u32::MAX {
            return Err(Error::InvalidArgument(format!("not a permutation: token {tok} at position {t}")));
        }
        inv[tok] = t as u32;
    }
    Ok(inv)
}

/// Raster enumeration of a `rows × cols` grid (cell id `r·cols + c`).
pub fn raster_order(rows: usize, cols: usize, dir: Direction) -> Result<Vec<u32>> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!("raster over empty grid {rows}x{cols}")));
    }
    let mut order: Vec<u32> = match dir {
        Direction::LeftRight | Direction::RightLeft => (0..(rows * cols) as u32).collect(),
        Direction::TopDown | Direction::BottomUp => (0..cols)
            .flat_map(|c| (0..rows).map(move |r| (r * cols + c) as u32))
            .collect(),
    };
    if matches!(dir, Direction::BottomUp | Direction::RightLeft) {
        order.reverse();
    }
    Ok(order)
}

fn forward_dir(dir: Direction) -> Direction {
    match dir {
        Direction::BottomUp => Direction::TopDown,
        Direction::RightLeft => Direction::LeftRight,
        d => d,
    }
}

fn check_extents(ext: &[usize]) -> Result<()> {
    if ext.iter().any(|&e| e == 0) {
        return Err(Error::InvalidArgument(format!("scan extents must be >= 1, got {ext:?}")));
    }
    Ok(())
}

pub fn intra_paths(h: usize, w: usize) -> Result<[ScanPath; 4]> {
    check_extents(&[h, w])?;
    build4(|d| Ok((Family::Intra, raster_order(h, w, d)?)))
}

pub fn inter_paths(u: usize, v: usize, h: usize, w: usize) -> Result<[ScanPath; 4]> {
    check_extents(&[u, v, h, w])?;
    build4(|d| {
        let fd = forward_dir(d);
        let views = raster_order(u, v, fd)?;
        let pixels = raster_order(h, w, fd)?;
        let hw = (h * w) as u32;
        let mut order: Vec<u32> = views
            .iter()
            .flat_map(|&view| pixels.iter().map(move |&px| view * hw + px))
            .collect();
        if fd != d {
            order.reverse();
        }
        Ok((Family::Inter, order))
    })
}

pub fn macpi_paths(u: usize, v: usize, h: usize, w: usize) -> Result<[ScanPath; 4]> {
    check_extents(&[u, v, h, w])?;
    build4(|d| {
        let fd = forward_dir(d);
        let sites = raster_order(h, w, fd)?;
        let views = raster_order(u, v, fd)?;
        let hw = (h * w) as u32;
        let mut order: Vec<u32> = sites
            .iter()
            .flat_map(|&px| views.iter().map(move |&view| view * hw + px))
            .collect();
        if fd != d {
            order.reverse();
        }
        Ok((Family::MacPi, order))
    })
}

fn build4(mut f: impl FnMut(Direction) -> Result<(Family, Vec<u32>)>) -> Result<[ScanPath; 4]> {
    let mut out = Vec::with_capacity(4);
    for d in Direction::ALL {
        let (family, order) = f(d)?;
        out.push(ScanPath::new(family, d, order)?);
    }
    Ok(out.try_into().expect("four directions"))
}

/// Paths of `family` over a `(u, v, h, w)` light field.
///
/// Intra paths cover one view (`h·w` tokens) and are applied per view.
pub fn paths_for(family: Family, u: usize, v: usize, h: usize, w: usize) -> Result<[ScanPath; 4]> {
    match family {
        Family::Intra => intra_paths(h, w),
        Family::Inter => inter_paths(u, v, h, w),
        Family::MacPi => macpi_paths(u, v, h, w),
    }
}

type PathKey = (Family, usize, usize, usize, usize);

/// Process-wide cache of immutable path sets.
pub fn cached_paths(family: Family, u: usize, v: usize, h: usize, w: usize) -> Result<Arc<[ScanPath; 4]>> {
    static CACHE: OnceLock<Mutex<HashMap<PathKey, Arc<[ScanPath; 4]>>>> = OnceLock::new();
    let key = match family {
        Family::Intra => (family, 1, 1, h, w),
        _ => (family, u, v, h, w),
    };
    let cache = CACHE.get_or_init(Default::default);
    if let Some(p) = cache.lock().unwrap().get(&key) {
        return Ok(p.clone());
    }
    let built = Arc::new(paths_for(family, u, v, h, w)?);
    Ok(cache.lock().unwrap().entry(key).or_insert(built).clone())
}

/// `seq[t] = x[path[t]]` over rows of `x: [tokens, C]`.
pub fn gather<T: Real>(x: &Tensor<T>, path: &[u32]) -> Result<Tensor<T>> {
    let c = x.last_dim();
    if x.numel() != path.len() * c {
        return Err(Error::Shape(format!(
            "gather: {} tokens but path has length {}",
            x.numel() / c.max(1),
            path.len()
        )));
    }
    let src = x.data();
    let mut out = Vec::with_capacity(x.numel());
    for &tok in path {
        out.extend_from_slice(&src[tok as usize * c..][..c]);
    }
    Tensor::from_vec(x.shape(), out)
}

/// Inverse of [`gather`]: `x[path[t]] = seq[t]`.
pub fn scatter<T: Real>(seq: &Tensor<T>, path: &[u32]) -> Result<Tensor<T>> {
    let c = seq.last_dim();
    if seq.numel() != path.len() * c {
        return Err(Error::Shape(format!(
            "scatter: {} sequence rows but path has length {}",
            seq.numel() / c.max(1),
            path.len()
        )));
    }
    let mut out = vec![T::zero(); seq.numel()];
    for (row, &tok) in seq.data().chunks_exact(c.max(1)).zip(path) {
        out[tok as usize * c..][..c].copy_from_slice(row);
    }
    Tensor::from_vec(seq.shape(), out)
}

/// Repeats a per-view path over `views` consecutive blocks of `path.len()` tokens.
pub fn batched(path: &[u32], views: usize) -> Vec<u32> {
    let n = path.len() as u32;
    (0..views as u32)
        .flat_map(|b| path.iter().map(move |&t| b * n + t))
        .collect()
}
