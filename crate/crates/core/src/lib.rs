//! Power-of-two post-training weight quantization.
//!
//! Weights are stored as `W̃ = S · P · 2^E`: a sign and a small exponent code
//! per weight, and one FP16 scale per group of rows in a column. Because the
//! scale is FP16, dequantization is a single 16-bit integer addition into
//! the scale's exponent field (see [`kernel::dequant_code`]).
//!
//! - [`fp16`]: bit-level half precision.
//! - [`tensor`]: dense tensors, group layout and the `PTEN` file format.
//! - [`pot`]: codes, the per-group scale grid search, and a uniform baseline.
//! - [`kernel`]: packed codes, the addition-based dequantizer and `POTQ` files.
//! - [`calib`]: gradient refinement of scales against layer outputs.
//! - [`synth`]: seeded synthetic data.

pub mod calib;
pub mod error;
pub mod fp16;
pub mod kernel;
pub mod pot;
pub mod synth;
pub mod tensor;

pub use error::{PotError, Result};
pub use fp16::Half;
pub use kernel::potq::PotqFile;
pub use kernel::PackedCodes;
pub use pot::{BitWidth, Code, GroupScale, QuantConfig, QuantizedMatrix};
pub use tensor::{DType, GroupLayout, Tensor};
