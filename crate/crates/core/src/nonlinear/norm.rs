//! Exact integer square root by Newton iteration, and the integer-only
//! LayerNorm built on it.

use super::LAYERNORM_FRAC_BITS;
use crate::error::{Error, Result};
use crate::poly::{narrow_i32, rounded_div};

/// `floor(sqrt(n))` by Newton iteration from a power-of-two starting point.
///
/// The first iterate `2^ceil(bits(n)/2)` sits at or above the true root, so
/// the sequence decreases monotonically until the stop test `x_{i+1} >= x_i`
/// fires, at which point `x_i` is exact. Works for any non-negative 64-bit
/// input; a hard cap of 64 iterations bounds the loop.
pub fn i_sqrt(n: i64) -> Result<i64> {
    i_sqrt_with_iters(n).map(|(r, _)| r)
}

/// [`i_sqrt`] plus the number of averaging updates performed.
pub fn i_sqrt_with_iters(n: i64) -> Result<(i64, u32)> {
    if n < 0 {
        return Err(Error::NegativeSqrtInput(n));
    }
    if n == 0 {
        return Ok((0, 0));
    }
    let bits = 64 - (n as u64).leading_zeros();
    let mut x = 1i64 << bits.div_ceil(2);
    let mut iters = 0u32;
    loop {
        let next = (x + n / x) >> 1;
        iters += 1;
        if next >= x || iters >= 64 {
            return Ok((x, iters));
        }
        x = next;
    }
}

/// Configuration for the integer LayerNorm kernel: channel count, fractional
/// bits of the normalized output, and the integer epsilon added to the
/// variance before the square root.
#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub channels: usize,
    pub frac_bits: u32,
    pub eps: i64,
}

impl LayerNormParams {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            frac_bits: LAYERNORM_FRAC_BITS,
            eps: 1,
        }
    }
}

/// Integer-only LayerNorm, pre-affine.
///
/// Mean is a rounded integer division, the variance accumulator is 64-bit,
/// the standard deviation is an exact integer square root of `V/C + eps`,
/// and the output is `floor(d_i * 2^M / sigma)` at scale `2^-M`. The result
/// is independent of the input scale; any affine gain/bias is applied by the
/// caller on the fixed-point output.
///
/// The 64-bit accumulator bounds the input domain: magnitudes must stay
/// below `sqrt(2^63 / C)` (about 2^26 for 768 channels). Producers align
/// activations onto much coarser grids than that.
pub fn i_layernorm(q: &[i32], s: f64, params: &LayerNormParams) -> Result<(Vec<i32>, f64)> {
    if params.channels == 0 || q.is_empty() {
        return Err(Error::EmptyInput);
    }
    if q.len() != params.channels {
        return Err(Error::DimMismatch {
            context: "layernorm channels",
            expected: params.channels,
            actual: q.len(),
        });
    }
    if !s.is_finite() || s <= 0.0 {
        return Err(Error::InvalidScale(s));
    }
    let c = params.channels as i64;
    let sum: i64 = q.iter().map(|&v| v as i64).sum();
    let mean = rounded_div(sum, c);
    let mut var_acc = 0i64;
    for &v in q {
        let d = v as i64 - mean;
        var_acc += d * d;
    }
    let mut sigma = i_sqrt(var_acc / c + params.eps)?;
    if sigma == 0 {
        // only reachable with eps = 0 and a constant input; outputs are zero
        sigma = 1;
    }
    let out = q
        .iter()
        .map(|&v| {
            let d = v as i64 - mean;
            narrow_i32((d << params.frac_bits).div_euclid(sigma))
        })
        .collect();
    Ok((out, (-(params.frac_bits as f64)).exp2()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    #[test]
    fn sqrt_of_zero_is_zero() {
        assert_eq!(i_sqrt(0).unwrap(), 0);
        assert_eq!(i_sqrt_with_iters(0).unwrap(), (0, 0));
    }

    #[test]
    fn sqrt_small_values() {
        assert_eq!(i_sqrt(1).unwrap(), 1);
        assert_eq!(i_sqrt(2).unwrap(), 1);
        assert_eq!(i_sqrt(3).unwrap(), 1);
        assert_eq!(i_sqrt(4).unwrap(), 2);
        assert_eq!(i_sqrt(15).unwrap(), 3);
        assert_eq!(i_sqrt(16).unwrap(), 4);
        assert_eq!(i_sqrt(17).unwrap(), 4);
    }

    #[test]
    fn sqrt_int32_max() {
        let n = (1i64 << 31) - 1;
        let (r, iters) = i_sqrt_with_iters(n).unwrap();
        assert_eq!(r, 46340);
        assert!(r * r <= n && n < (r + 1) * (r + 1));
        // five averaging updates with this starting point
        assert_eq!(iters, 5);
    }

    #[test]
    fn sqrt_rejects_negative() {
        assert!(matches!(i_sqrt(-1), Err(Error::NegativeSqrtInput(-1))));
    }

    #[test]
    fn sqrt_exhaustive_small_range() {
        for n in 0..=(1i64 << 16) {
            let r = i_sqrt(n).unwrap();
            assert!(r * r <= n && n < (r + 1) * (r + 1), "n = {n}, r = {r}");
        }
    }

    #[test]
    fn layernorm_constant_input_is_zero() {
        let p = LayerNormParams::new(8);
        let (out, _) = i_layernorm(&[42; 8], 0.01, &p).unwrap();
        assert_eq!(out, vec![0; 8]);
    }

    #[test]
    fn layernorm_unit_variance_pair() {
        let p = LayerNormParams::new(2);
        let (out, s_out) = i_layernorm(&[1, -1], 0.5, &p).unwrap();
        let v: Vec<f64> = out.iter().map(|&o| o as f64 * s_out).collect();
        assert!((v[0] - 1.0).abs() < 0.01, "{v:?}");
        assert!((v[1] + 1.0).abs() < 0.01, "{v:?}");
    }

    #[test]
    fn layernorm_validates_input() {
        let p = LayerNormParams::new(4);
        assert!(i_layernorm(&[1, 2, 3], 0.1, &p).is_err());
        assert!(i_layernorm(&[], 0.1, &LayerNormParams::new(0)).is_err());
        assert!(i_layernorm(&[1, 2, 3, 4], 0.0, &p).is_err());
    }

    #[test]
    fn layernorm_matches_oracle_on_wide_inputs() {
        // accumulator-magnitude codes keep the integer mean and sigma precise
        let s = 1e-4;
        let p = LayerNormParams::new(768);
        let q: Vec<i32> = (0..768)
            .map(|i| (((i * 2654435761usize) % 60001) as i32) - 30000)
            .collect();
        let (out, s_out) = i_layernorm(&q, s, &p).unwrap();
        let x: Vec<f64> = q.iter().map(|&v| v as f64 * s).collect();
        let want = oracle::layernorm(&x, s * s).unwrap();
        for (o, w) in out.iter().zip(&want) {
            let v = *o as f64 * s_out;
            assert!((v - w).abs() < 1e-2, "{v} vs {w}");
        }
    }

    #[test]
    fn layernorm_scale_invariance() {
        let p = LayerNormParams::new(4);
        let q = [100, -50, 25, 7];
        let (a, _) = i_layernorm(&q, 1e-3, &p).unwrap();
        let (b, _) = i_layernorm(&q, 0.5, &p).unwrap();
        assert_eq!(a, b);
    }
}
