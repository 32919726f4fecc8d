//! Integer-only GELU via the clipped second-order approximation of `erf`,
//! plus the hard-sigmoid baseline.

use super::{input_shift_for, ACC_HEADROOM_BITS, ERF_COEFFS};
use crate::error::{Error, Result};
use crate::poly::{compile_poly, narrow_i32, IntPoly, PolyCoeffs};
use crate::quant::{round_ties_away, rounding_shift_right};

/// Smallest input scale the erf polynomial can be compiled at without its
/// integer constants leaving the 32-bit headroom.
fn erf_min_scale() -> f64 {
    let b = ERF_COEFFS.b;
    let a = ERF_COEFFS.a.abs();
    ((b * b + 1.0 / a) / (1u64 << ACC_HEADROOM_BITS) as f64).sqrt()
}

/// Integer-only `erf` kernel. The sign is split off, the magnitude is clipped
/// at the polynomial's vertex, and the quadratic is evaluated in integers.
/// Odd symmetry is exact by construction.
#[derive(Debug, Clone)]
pub struct IErf {
    poly: IntPoly,
    clip_max: i64,
    input_shift: u32,
}

impl IErf {
    pub fn new(s_in: f64) -> Result<Self> {
        if !s_in.is_finite() || s_in <= 0.0 {
            return Err(Error::InvalidScale(s_in));
        }
        let input_shift = input_shift_for(s_in, erf_min_scale());
        let s_eff = s_in * (1u64 << input_shift) as f64;
        let poly = compile_poly(ERF_COEFFS, s_eff)?;
        let clip_max = (-ERF_COEFFS.b / s_eff).floor() as i64;
        Ok(Self {
            poly,
            clip_max,
            input_shift,
        })
    }

    /// Output scale; negative because the leading coefficient is.
    pub fn s_out(&self) -> f64 {
        self.poly.s_out()
    }

    pub fn input_shift(&self) -> u32 {
        self.input_shift
    }

    #[inline]
    pub fn eval_i64(&self, q: i64) -> i64 {
        let sgn = if q < 0 { -1i64 } else { 1i64 };
        let mag = (q.abs() >> self.input_shift).min(self.clip_max);
        sgn * self.poly.eval(mag)
    }

    #[inline]
    pub fn eval(&self, q: i32) -> i32 {
        narrow_i32(self.eval_i64(q as i64))
    }

    pub fn eval_slice(&self, q: &[i32]) -> Vec<i32> {
        q.iter().map(|&v| self.eval(v)).collect()
    }
}

/// One-shot erf: compiles the kernel for `s` and evaluates. Returns the
/// output codes and their scale.
pub fn i_erf(q: &[i32], s: f64) -> Result<(Vec<i32>, f64)> {
    let k = IErf::new(s)?;
    Ok((k.eval_slice(q), k.s_out()))
}

/// Integer-only GELU kernel: `q * (q_erf + q_1)` with scale `S * S_erf / 2`.
///
/// The erf output is right-shifted by a precomputed amount so the final
/// product stays inside the 32-bit range for inputs up to `q_abs_max`; the
/// shift is folded into the output scale.
#[derive(Debug, Clone)]
pub struct IGelu {
    erf: IErf,
    erf_shift: u32,
    q_one: i64,
    s_out: f64,
}

impl IGelu {
    /// `q_abs_max` declares the largest input magnitude the kernel must
    /// handle; it comes from the producer's calibrated range.
    pub fn new(s_in: f64, q_abs_max: i64) -> Result<Self> {
        if !s_in.is_finite() || s_in <= 0.0 {
            return Err(Error::InvalidScale(s_in));
        }
        if q_abs_max < 1 {
            return Err(Error::InvalidArgument(format!(
                "q_abs_max must be >= 1, got {q_abs_max}"
            )));
        }
        let erf = IErf::new(s_in / std::f64::consts::SQRT_2)?;
        let s_erf = erf.s_out();
        // Keep q_abs_max * |q_erf + q_1| within the accumulator: the erf term
        // magnitude is at most ~2/|S_erf * 2^k|.
        let need = 2.2 * q_abs_max as f64 / (s_erf.abs() * (1u64 << ACC_HEADROOM_BITS) as f64);
        let erf_shift = if need > 1.0 {
            need.log2().ceil() as u32
        } else {
            0
        };
        let s_erf_eff = s_erf * (1u64 << erf_shift) as f64;
        let q_one = (1.0 / s_erf_eff).floor() as i64;
        Ok(Self {
            erf,
            erf_shift,
            q_one,
            s_out: s_in * s_erf_eff / 2.0,
        })
    }

    pub fn s_out(&self) -> f64 {
        self.s_out
    }

    #[inline]
    pub fn eval(&self, q: i32) -> i32 {
        let q_erf = rounding_shift_right(self.erf.eval_i64(q as i64), self.erf_shift);
        narrow_i32(q as i64 * (q_erf + self.q_one))
    }

    pub fn eval_slice(&self, q: &[i32]) -> Vec<i32> {
        q.iter().map(|&v| self.eval(v)).collect()
    }
}

/// One-shot GELU: sizes the kernel from the largest magnitude actually
/// present in `q`.
pub fn i_gelu(q: &[i32], s: f64) -> Result<(Vec<i32>, f64)> {
    let q_abs_max = q.iter().map(|&v| (v as i64).abs()).max().unwrap_or(0);
    let k = IGelu::new(s, q_abs_max.max(1))?;
    Ok((k.eval_slice(q), k.s_out()))
}

/// Integer-only hard-sigmoid GELU baseline: `q * clip(q + q_3, 0, q_6)` at
/// scale `S * 1.702 S / 6`.
#[derive(Debug, Clone)]
pub struct IHGelu {
    q_three: i64,
    q_six: i64,
    s_out: f64,
}

impl IHGelu {
    pub fn new(s_in: f64) -> Result<Self> {
        if !s_in.is_finite() || s_in <= 0.0 {
            return Err(Error::InvalidScale(s_in));
        }
        crate::purity::record_float_use();
        let s_t = 1.702 * s_in;
        Ok(Self {
            q_three: round_ties_away(3.0 / s_t) as i64,
            q_six: round_ties_away(6.0 / s_t) as i64,
            s_out: s_in * s_t / 6.0,
        })
    }

    pub fn s_out(&self) -> f64 {
        self.s_out
    }

    #[inline]
    pub fn eval(&self, q: i32) -> i32 {
        let gate = (q as i64 + self.q_three).clamp(0, self.q_six);
        narrow_i32(q as i64 * gate)
    }

    pub fn eval_slice(&self, q: &[i32]) -> Vec<i32> {
        q.iter().map(|&v| self.eval(v)).collect()
    }
}

/// Real-arithmetic form of the erf approximation:
/// `sgn(x)[a(min(|x|, -b) + b)^2 + 1]`, with `sgn(0) = 1` matching the
/// integer kernel so the origin carries the polynomial's residual value.
pub fn i_erf_ref(x: f64) -> f64 {
    crate::purity::record_float_use();
    let PolyCoeffs { a, b, .. } = ERF_COEFFS;
    let sgn = if x < 0.0 { -1.0 } else { 1.0 };
    let t = x.abs().min(-b) + b;
    sgn * (a * t * t + 1.0)
}

/// Real-arithmetic form of the GELU approximation,
/// `x/2 * (1 + i_erf_ref(x / sqrt2))`.
pub fn i_gelu_ref(x: f64) -> f64 {
    x * 0.5 * (1.0 + i_erf_ref(x / std::f64::consts::SQRT_2))
}

/// Real-arithmetic hard-sigmoid GELU, same curve as [`crate::oracle::h_gelu`].
pub fn h_gelu_ref(x: f64) -> f64 {
    crate::oracle::h_gelu(x)
}
