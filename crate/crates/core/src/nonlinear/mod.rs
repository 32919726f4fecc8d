//! Integer-only nonlinear kernels.
//!
//! Each kernel follows the same pattern: a setup step compiles the real
//! coefficients and scales into integer constants (float work, done offline),
//! and an evaluation step that touches only integer adds, multiplies, shifts,
//! and divisions. Inputs arriving at accumulator scales too fine for the
//! 32-bit working range are pre-scaled by a power-of-two shift chosen at
//! setup time.

mod gelu;
mod iexp;
mod norm;

pub use gelu::{h_gelu_ref, i_erf, i_erf_ref, i_gelu, i_gelu_ref, IErf, IGelu, IHGelu};
pub use iexp::{i_exp, i_exp_ref, i_softmax, IExp, ISoftmax};
pub use norm::{i_layernorm, i_sqrt, i_sqrt_with_iters, LayerNormParams};

use crate::poly::PolyCoeffs;

/// Clipped-quadratic coefficients standing in for `erf` inside the GELU
/// kernel: `sgn(x)[a(min(|x|, -b) + b)^2 + 1]`.
pub const ERF_COEFFS: PolyCoeffs = PolyCoeffs {
    a: -0.2888,
    b: -1.769,
    c: 1.0,
};

/// Quadratic approximating `exp` on the range-reduced interval `(-ln2, 0]`.
///
/// Produced by [`crate::poly::lsq_fit_exp_band`]: a discrete-L2 fit with the
/// band endpoints pinned to `L(0) = 1` and `L(-ln2) = 1/2`, so consecutive
/// power-of-two bands of the shifted exponential join continuously. The
/// resulting maximum gap from `exp` is 1.96e-3.
pub const EXP_COEFFS: PolyCoeffs = PolyCoeffs {
    a: 0.35761472,
    b: 1.3551276012061473,
    c: 0.34328676498065513,
};

/// Largest right-shift applied by the exponential kernel; anything smaller
/// than `2^-30` underflows to zero.
pub const EXP_SHIFT_MAX: i64 = 30;

/// Fractional bits of the fixed-point softmax output (`S_out = 2^-15`).
pub const SOFTMAX_FRAC_BITS: u32 = 15;

/// Fractional bits of the normalized LayerNorm output before the affine
/// transform (`S_out = 2^-10`).
pub const LAYERNORM_FRAC_BITS: u32 = 10;

/// Headroom target for compiled polynomial magnitudes inside the 32-bit
/// accumulator.
pub(crate) const ACC_HEADROOM_BITS: u32 = 30;

/// Number of doublings needed to bring `scale` up to at least `min_scale`.
pub(crate) fn input_shift_for(scale: f64, min_scale: f64) -> u32 {
    if scale >= min_scale {
        0
    } else {
        (min_scale / scale).log2().ceil() as u32
    }
}
