//! Integer-only exponential via power-of-two range reduction, and the
//! softmax built on it.
//!
//! A non-positive input decomposes as `x = -ln2 * z + p` with `z >= 0` and
//! `p in (-ln2, 0]`, so `exp(x) = L(p) >> z` where `L` is the quadratic
//! fitted to `exp` on that interval. The shift saturates at
//! [`EXP_SHIFT_MAX`](super::EXP_SHIFT_MAX) bits, below which the result
//! underflows to zero anyway.

use super::{input_shift_for, ACC_HEADROOM_BITS, EXP_COEFFS, EXP_SHIFT_MAX, SOFTMAX_FRAC_BITS};
use crate::error::{Error, Result};
use crate::poly::{compile_poly, narrow_i32, IntPoly, PolyCoeffs};

const LN2: f64 = std::f64::consts::LN_2;

/// Smallest input scale the exp polynomial can be compiled at without its
/// integer constants leaving the 32-bit headroom.
fn exp_min_scale() -> f64 {
    let PolyCoeffs { a, b, c } = EXP_COEFFS;
    let reach = b + LN2; // |q_p + q_b| <= (b + ln2)/S
    ((reach * reach + c / a) / (1u64 << ACC_HEADROOM_BITS) as f64).sqrt()
}

/// Integer-only `exp` for non-positive inputs.
#[derive(Debug, Clone)]
pub struct IExp {
    poly: IntPoly,
    q_ln2: i64,
    input_shift: u32,
}

impl IExp {
    pub fn new(s_in: f64) -> Result<Self> {
        if !s_in.is_finite() || s_in <= 0.0 {
            return Err(Error::InvalidScale(s_in));
        }
        if s_in > LN2 {
            // one integer step would overshoot the whole reduction interval
            return Err(Error::InvalidScale(s_in));
        }
        let input_shift = input_shift_for(s_in, exp_min_scale());
        let s_eff = s_in * (1u64 << input_shift) as f64;
        let poly = compile_poly(EXP_COEFFS, s_eff)?;
        let q_ln2 = (LN2 / s_eff).floor() as i64;
        debug_assert!(q_ln2 >= 1);
        Ok(Self {
            poly,
            q_ln2,
            input_shift,
        })
    }

    pub fn s_out(&self) -> f64 {
        self.poly.s_out()
    }

    pub fn input_shift(&self) -> u32 {
        self.input_shift
    }

    /// Integer-only evaluation. `q` must be non-positive.
    #[inline]
    pub fn eval_i64(&self, q: i64) -> Result<i64> {
        if q > 0 {
            return Err(Error::PositiveExpInput(q));
        }
        let q_s = (q >> self.input_shift).max(-EXP_SHIFT_MAX * self.q_ln2);
        let z = (-q_s) / self.q_ln2;
        let q_p = q_s + z * self.q_ln2; // in (-q_ln2, 0]
        Ok(self.poly.eval(q_p) >> z)
    }

    pub fn eval(&self, q: i32) -> Result<i32> {
        Ok(narrow_i32(self.eval_i64(q as i64)?))
    }

    pub fn eval_slice(&self, q: &[i32]) -> Result<Vec<i32>> {
        q.iter().map(|&v| self.eval(v)).collect()
    }
}

/// One-shot exp: compiles the kernel for `s` and evaluates.
pub fn i_exp(q: &[i32], s: f64) -> Result<(Vec<i32>, f64)> {
    let k = IExp::new(s)?;
    Ok((k.eval_slice(q)?, k.s_out()))
}

/// Real-arithmetic form of the range-reduced exponential, defined for
/// `x <= 0`: `L(p) * 2^-z` with `z = floor(-x/ln2)`, `p = x + z ln2`.
pub fn i_exp_ref(x: f64) -> f64 {
    crate::purity::record_float_use();
    debug_assert!(x <= 0.0, "reference exp defined for non-positive x");
    let z = (-x / LN2).floor();
    let p = x + z * LN2;
    EXP_COEFFS.eval(p) * (-z).exp2()
}

/// Integer-only softmax. Exponentials of max-subtracted codes are normalized
/// by fixed-point division; the output scale is `2^-15`.
#[derive(Debug, Clone)]
pub struct ISoftmax {
    exp: IExp,
    s_out: f64,
}

impl ISoftmax {
    pub fn new(s_in: f64) -> Result<Self> {
        Ok(Self {
            exp: IExp::new(s_in)?,
            s_out: (-(SOFTMAX_FRAC_BITS as f64)).exp2(),
        })
    }

    pub fn s_out(&self) -> f64 {
        self.s_out
    }

    /// Integer-only evaluation of one vector.
    pub fn eval(&self, q: &[i32]) -> Result<(Vec<i32>, f64)> {
        if q.is_empty() {
            return Err(Error::EmptyInput);
        }
        let max = *q.iter().max().unwrap() as i64;
        let mut exps = Vec::with_capacity(q.len());
        let mut sum = 0i64;
        for &v in q {
            let e = self.exp.eval_i64(v as i64 - max)?;
            sum += e;
            exps.push(e);
        }
        // the max element contributes a strictly positive exponential
        debug_assert!(sum > 0);
        let out = exps
            .into_iter()
            .map(|e| narrow_i32((e << SOFTMAX_FRAC_BITS) / sum))
            .collect();
        Ok((out, self.s_out))
    }
}

/// One-shot softmax over a single vector.
pub fn i_softmax(q: &[i32], s: f64) -> Result<(Vec<i32>, f64)> {
    ISoftmax::new(s)?.eval(q)
}
