//! Primitive neural operators. Feature maps are channels-last `[N, H, W, C]`.

pub mod act;
pub mod color;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod resize;
pub mod shuffle;

pub use act::{gelu, silu, softplus};
pub use color::{rgb_to_ycbcr, ycbcr_to_rgb};
pub use conv::{conv2d, dwconv3x3, ConvWeights, Padding};
pub use linear::linear;
pub use norm::{layer_norm, LAYER_NORM_EPS};
pub use resize::{bicubic_resize, bicubic_resize_to};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
