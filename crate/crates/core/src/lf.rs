//! Light-field tensors and the three storage layouts.
//!
//! A light field is a `U×V` grid of sub-aperture images (SAIs), each `C×H×W`.
//! The same logical sample `(u, v, c, h, w)` lives at:
//!
//! | layout        | backing shape      | position                      |
//! |---------------|--------------------|-------------------------------|
//! | `SaiStack`    | `(U·V, C, H, W)`   | `(u·V+v, c, h, w)`            |
//! | `SaisMosaic`  | `(C, U·H, V·W)`    | `(c, u·H+h, v·W+w)`           |
//! | `MacPi`       | `(C, H·U, W·V)`    | `(c, h·U+u, w·V+v)`           |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    SaiStack,
    SaisMosaic,
    MacPi,
}

impl Layout {
    pub const ALL: [Layout; 3] = [Layout::SaiStack, Layout::SaisMosaic, Layout::MacPi];
}

/// Angular and spatial extents of a light field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LfExtents {
    pub u: usize,
    pub v: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl LfExtents {
    pub fn new(u: usize, v: usize, c: usize, h: usize, w: usize) -> Self {
        LfExtents { u, v, c, h, w }
    }

    pub fn views(&self) -> usize {
        self.u * self.v
    }

    pub fn numel(&self) -> usize {
        self.u * self.v * self.c * self.h * self.w
    }

    pub fn backing_shape(&self, layout: Layout) -> Vec<usize> {
        let LfExtents { u, v, c, h, w } = *self;
        match layout {
            Layout::SaiStack => vec![u * v, c, h, w],
            Layout::SaisMosaic => vec![c, u * h, v * w],
            Layout::MacPi => vec![c, h * u, w * v],
        }
    }

    /// Flat offset of logical sample `(u, v, c, h, w)` in `layout`.
    #[inline]
    pub fn offset(&self, layout: Layout, u: usize, v: usize, c: usize, h: usize, w: usize) -> usize {
        let e = self;
        match layout {
            Layout::SaiStack => (((u * e.v + v) * e.c + c) * e.h + h) * e.w + w,
            Layout::SaisMosaic => (c * e.u * e.h + u * e.h + h) * (e.v * e.w) + v * e.w + w,
            Layout::MacPi => (c * e.h * e.u + h * e.u + u) * (e.w * e.v) + w * e.v + v,
        }
    }
}

/// Five-axis light field with a layout tag.
#[derive(Debug, Clone, PartialEq)]
pub struct LightFieldTensor<T> {
    extents: LfExtents,
    layout: Layout,
    data: Tensor<T>,
}

impl<T: Real> LightFieldTensor<T> {
    pub fn new(extents: LfExtents, layout: Layout, data: Tensor<T>) -> Result<Self> {
        if data.numel() != extents.numel() {
            return Err(Error::Shape(format!(
                "light field {extents:?} needs {} elements, backing tensor has {}",
                extents.numel(),
                data.numel()
            )));
        }
        let data = data.reshape(&extents.backing_shape(layout))?;
        Ok(LightFieldTensor {
            extents,
            layout,
            data,
        })
    }

    pub fn zeros(extents: LfExtents, layout: Layout) -> Self {
        LightFieldTensor {
            extents,
            layout,
            data: Tensor::zeros(&extents.backing_shape(layout)),
        }
    }

    /// Build an SAI-stack light field from a function of `(u, v, c, h, w)`.
    pub fn from_fn(extents: LfExtents, mut f: impl FnMut(usize, usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(extents.numel());
        for u in 0..extents.u {
            for v in 0..extents.v {
                for c in 0..extents.c {
                    for h in 0..extents.h {
                        for w in 0..extents.w {
                            data.push(f(u, v, c, h, w));
                        }
                    }
                }
            }
        }
        LightFieldTensor {
            extents,
            layout: Layout::SaiStack,
            data: Tensor::from_vec(&extents.backing_shape(Layout::SaiStack), data).unwrap(),
        }
    }

    pub fn extents(&self) -> LfExtents {
        self.extents
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    pub fn get(&self, u: usize, v: usize, c: usize, h: usize, w: usize) -> T {
        self.data.data()[self.extents.offset(self.layout, u, v, c, h, w)]
    }

    /// One view as a `C×H×W` slice (SAI-stack layout only).
    pub fn view(&self, u: usize, v: usize) -> &[T] {
        assert_eq!(self.layout, Layout::SaiStack, "view() needs the SAI-stack layout");
        let e = self.extents;
        let len = e.c * e.h * e.w;
        let start = (u * e.v + v) * len;
        &self.data.data()[start..start + len]
    }

    /// Pure rearrangement into `target`; bit-exact and invertible.
    pub fn to_layout(&self, target: Layout) -> Self {
        if target == self.layout {
            return self.clone();
        }
        let e = self.extents;
        let src = self.data.data();
        let mut out = vec![T::zero(); src.len()];
        for u in 0..e.u {
            for v in 0..e.v {
                for c in 0..e.c {
                    for h in 0..e.h {
                        for w in 0..e.w {
                            out[e.offset(target, u, v, c, h, w)] = src[e.offset(self.layout, u, v, c, h, w)];
                        }
                    }
                }
            }
        }
        LightFieldTensor {
            extents: e,
            layout: target,
            data: Tensor::from_vec(&e.backing_shape(target), out).unwrap(),
        }
    }
}

/// Converts `x` into `target` layout.
pub fn layout_convert<T: Real>(x: &LightFieldTensor<T>, target: Layout) -> LightFieldTensor<T> {
    x.to_layout(target)
}

/// Token permutation from SAI-stack token order into a mosaic's raster order.
///
/// Tokens are `(u·V+v)·H·W + h·W + w` in SAI-stack order; entry `p` of the
/// result is the SAI-stack token that sits at raster position `p` of the
/// `layout` mosaic. `SaiStack` yields the identity.
pub fn token_order(layout: Layout, u: usize, v: usize, h: usize, w: usize) -> Vec<u32> {
    let e = LfExtents::new(u, v, 1, h, w);
    let mut order = vec![0u32; e.numel()];
    for uu in 0..u {
        for vv in 0..v {
            for hh in 0..h {
                for ww in 0..w {
                    let sai = e.offset(Layout::SaiStack, uu, vv, 0, hh, ww);
                    order[e.offset(layout, uu, vv, 0, hh, ww)] = sai as u32;
                }
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_element_is_identity_everywhere() {
        let e = LfExtents::new(1, 1, 1, 1, 1);
        let x = LightFieldTensor::from_fn(e, |_, _, _, _, _| 0.25f32);
        for l in Layout::ALL {
            assert_eq!(x.to_layout(l).tensor().data(), &[0.25]);
        }
    }

    #[test]
    fn macpi_of_view_index_field() {
        let e = LfExtents::new(2, 2, 1, 2, 2);
        let x = LightFieldTensor::from_fn(e, |u, v, _, _, _| (u * 2 + v) as f32);
        let m = x.to_layout(Layout::MacPi);
        assert_eq!(m.tensor().shape(), &[1, 4, 4]);
        #[rustfmt::skip]
        let expect = [
            0.0, 1.0, 0.0, 1.0,
            2.0, 3.0, 2.0, 3.0,
            0.0, 1.0, 0.0, 1.0,
            2.0, 3.0, 2.0, 3.0,
        ];
        assert_eq!(m.tensor().data(), &expect);
    }

    #[test]
    fn sais_mosaic_tiles_views() {
        let e = LfExtents::new(2, 2, 1, 2, 2);
        let x = LightFieldTensor::from_fn(e, |u, v, _, _, _| (u * 2 + v) as f32);
        let s = x.to_layout(Layout::SaisMosaic);
        #[rustfmt::skip]
        let expect = [
            0.0, 0.0, 1.0, 1.0,
            0.0, 0.0, 1.0, 1.0,
            2.0, 2.0, 3.0, 3.0,
            2.0, 2.0, 3.0, 3.0,
        ];
        assert_eq!(s.tensor().data(), &expect);
    }

    #[test]
    fn token_order_is_a_permutation() {
        for l in Layout::ALL {
            let mut o = token_order(l, 3, 2, 4, 5);
            o.sort_unstable();
            assert!(o.iter().enumerate().all(|(i, &t)| t as usize == i));
        }
    }

    #[test]
    fn new_rejects_wrong_size() {
        let e = LfExtents::new(2, 2, 1, 2, 2);
        assert!(LightFieldTensor::new(e, Layout::MacPi, Tensor::<f32>::zeros(&[15])).is_err());
    }
}
