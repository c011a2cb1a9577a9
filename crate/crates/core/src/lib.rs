//! Light-field spatial super-resolution with selective state-space scans
//! over sub-aperture, mosaic and macro-pixel orderings.

pub mod autograd;
pub mod data;
pub mod error;
pub mod framed;
pub mod gradcheck;
pub mod kv;
pub mod lf;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod scan;
pub mod selfcheck;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use lf::{layout_convert, LfExtents, Layout, LightFieldTensor};
pub use model::{forward, init_model, L2FMambaModel, ModelConfig};
pub use scan::{Direction, Family, ScanPath};
pub use tensor::{DType, Real, Tensor};
