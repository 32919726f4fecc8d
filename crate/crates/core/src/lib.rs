//! Integer-only transformer inference kernels.
//!
//! The crate covers the full stack needed to run a transformer encoder layer
//! without floating-point arithmetic at inference time:
//!
//! - [`quant`]: uniform symmetric static quantization — scale computation,
//!   quantize/dequantize, dyadic requantization, activation calibration.
//! - [`poly`]: second-order polynomials compiled to integer form, plus the
//!   offline fitting machinery (Lagrange interpolation, discrete least
//!   squares, interpolation error bounds).
//! - [`nonlinear`]: the integer kernels themselves — erf/GELU, range-reduced
//!   exp and softmax, exact integer square root, and LayerNorm.
//! - [`oracle`]: double-precision references and grid-based error metrics.
//! - [`encoder`]: an encoder layer executed entirely with integer arithmetic
//!   (INT8 matmuls, INT32 accumulation, requantization), a matching FP64
//!   reference, calibration, weight-file I/O, and microbenchmarks.
//! - [`purity`]: instrumentation proving the quantized path performs no
//!   float work between input quantization and output dequantization.
//!
//! All scale bookkeeping happens at setup time; evaluation paths use integer
//! adds, multiplies, shifts, and divisions only.

pub mod encoder;
pub mod error;
pub mod nonlinear;
pub mod oracle;
pub mod poly;
pub mod purity;
pub mod quant;

pub use error::{Error, Result};
pub use quant::{QParams, QTensor};
