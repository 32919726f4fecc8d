//! Uniform symmetric static quantization.
//!
//! A real value `x` is mapped to an integer `q` by clipping to `[-alpha, alpha]`,
//! dividing by the scale `S = alpha / (2^(b-1) - 1)`, and rounding to nearest
//! (ties away from zero). Dequantization is the exact product `S * q`. All
//! scales are fixed ahead of inference; the runtime path between quantization
//! and dequantization is integer-only.

use crate::error::{Error, Result};
use crate::purity;

/// Quantization metadata: bit width, clipping bound, and scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QParams {
    bits: u8,
    alpha: f64,
    scale: f64,
}

impl QParams {
    /// Builds params from a clipping bound: `scale = alpha / (2^(bits-1) - 1)`.
    pub fn from_alpha(bits: u8, alpha: f64) -> Result<Self> {
        check_bits(bits)?;
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidAlpha(alpha));
        }
        purity::record_float_use();
        let scale = alpha / qmax(bits) as f64;
        Ok(Self { bits, alpha, scale })
    }

    /// Builds params directly from a scale; `alpha` becomes the value of the
    /// largest positive code, `scale * (2^(bits-1) - 1)`.
    pub fn from_scale(bits: u8, scale: f64) -> Result<Self> {
        check_bits(bits)?;
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::InvalidScale(scale));
        }
        purity::record_float_use();
        let alpha = scale * qmax(bits) as f64;
        Ok(Self { bits, alpha, scale })
    }

    /// Rebuilds params from stored fields, enforcing the `scale * qmax = alpha`
    /// relation to within a few ulps.
    pub fn from_parts(bits: u8, alpha: f64, scale: f64) -> Result<Self> {
        check_bits(bits)?;
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidAlpha(alpha));
        }
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::InvalidScale(scale));
        }
        if (scale * qmax(bits) as f64 - alpha).abs() > alpha * 1e-9 {
            return Err(Error::InvalidScale(scale));
        }
        Ok(Self { bits, alpha, scale })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Largest representable code, `2^(bits-1) - 1`.
    pub fn qmax(&self) -> i64 {
        qmax(self.bits)
    }

    /// Smallest representable code, `-2^(bits-1)`.
    pub fn qmin(&self) -> i64 {
        qmin(self.bits)
    }
}

pub(crate) fn qmax(bits: u8) -> i64 {
    (1i64 << (bits - 1)) - 1
}

pub(crate) fn qmin(bits: u8) -> i64 {
    -(1i64 << (bits - 1))
}

fn check_bits(bits: u8) -> Result<()> {
    if bits == 8 || bits == 32 {
        Ok(())
    } else {
        Err(Error::InvalidBits(bits))
    }
}

/// Integer payload plus its quantization metadata and shape.
///
/// Codes are stored as `i32` regardless of role; the `bits` field of the
/// params says whether the tensor plays the 8-bit or the 32-bit part, and
/// every element is validated against that range. The dequantized value of
/// element `q` is exactly `scale * q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    data: Vec<i32>,
    params: QParams,
    shape: Vec<usize>,
}

impl QTensor {
    pub fn new(data: Vec<i32>, params: QParams, shape: Vec<usize>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::DimMismatch {
                context: "tensor payload vs shape",
                expected: expect,
                actual: data.len(),
            });
        }
        let (lo, hi) = (params.qmin(), params.qmax());
        for &v in &data {
            let v = v as i64;
            if v < lo || v > hi {
                return Err(Error::ValueOutOfRange {
                    value: v,
                    bits: params.bits(),
                });
            }
        }
        Ok(Self {
            data,
            params,
            shape,
        })
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn params(&self) -> &QParams {
        &self.params
    }

    pub fn scale(&self) -> f64 {
        self.params.scale()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Transposes a 2-D tensor.
    pub fn transposed(&self) -> Result<QTensor> {
        if self.shape.len() != 2 {
            return Err(Error::DimMismatch {
                context: "transpose rank",
                expected: 2,
                actual: self.shape.len(),
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0i32; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(QTensor {
            data: out,
            params: self.params,
            shape: vec![c, r],
        })
    }
}

/// Round to nearest, ties away from zero. This is the `Int(.)` map used by
/// every operation in the crate.
#[inline]
pub fn round_ties_away(x: f64) -> f64 {
    x.round()
}

/// Quantizes a slice of reals into a 1-D tensor.
pub fn quantize(x: &[f64], params: &QParams) -> Result<QTensor> {
    quantize_shaped(x, params, vec![x.len()])
}

/// Quantizes a slice of reals with an explicit shape.
pub fn quantize_shaped(x: &[f64], params: &QParams, shape: Vec<usize>) -> Result<QTensor> {
    purity::record_float_use();
    let alpha = params.alpha();
    let scale = params.scale();
    let (lo, hi) = (params.qmin(), params.qmax());
    let mut data = Vec::with_capacity(x.len());
    for (index, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteInput { value: v, index });
        }
        let clipped = v.clamp(-alpha, alpha);
        let q = round_ties_away(clipped / scale) as i64;
        data.push(q.clamp(lo, hi) as i32);
    }
    QTensor::new(data, *params, shape)
}

/// Dequantizes a tensor: element-wise `scale * q`.
pub fn dequantize(t: &QTensor) -> Vec<f64> {
    purity::record_float_use();
    let s = t.scale();
    t.data().iter().map(|&q| s * q as f64).collect()
}

/// Right shift with round-to-nearest, ties away from zero. Equivalent to
/// `round(x / 2^shift)` under the crate's tie rule.
#[inline]
pub(crate) fn rounding_shift_right(x: i64, shift: u32) -> i64 {
    if shift == 0 {
        return x;
    }
    let half = 1i64 << (shift - 1);
    if x >= 0 {
        (x + half) >> shift
    } else {
        -((-x + half) >> shift)
    }
}

/// A positive real factor stored as `mantissa / 2^shift` so it can be applied
/// with one integer multiply and one rounded shift.
///
/// The mantissa fits in 31 bits, so `apply` never overflows `i64` for inputs
/// within the 32-bit range.
#[derive(Debug, Clone, Copy)]
pub struct DyadicMultiplier {
    mantissa: i64,
    shift: u32,
}

impl DyadicMultiplier {
    /// Decomposes `ratio` as `m / 2^s` with `m < 2^31`. Ratios at or above
    /// `2^31` are rejected; ratios below `2^-31` lose precision gracefully
    /// (the mantissa shrinks and may reach zero).
    pub fn from_ratio(ratio: f64) -> Result<Self> {
        if !ratio.is_finite() || ratio <= 0.0 {
            return Err(Error::InvalidScale(ratio));
        }
        purity::record_float_use();
        // ratio = f * 2^e with f in [0.5, 1)
        let mut e = ratio.log2().floor() as i32 + 1;
        let mut f = ratio / (2.0f64).powi(e);
        while f >= 1.0 {
            f /= 2.0;
            e += 1;
        }
        while f < 0.5 {
            f *= 2.0;
            e -= 1;
        }
        let mut shift = 31 - e;
        if shift < 0 {
            return Err(Error::InvalidScale(ratio));
        }
        let mut mantissa = round_ties_away(f * (1i64 << 31) as f64) as i64;
        if mantissa == 1i64 << 31 {
            mantissa >>= 1;
            shift -= 1;
        }
        if shift > 62 {
            // Tiny ratio: renormalize at the maximum shift.
            shift = 62;
            mantissa = round_ties_away(ratio * (1i64 << 62) as f64) as i64;
        }
        Ok(Self {
            mantissa,
            shift: shift as u32,
        })
    }

    pub fn mantissa(&self) -> i64 {
        self.mantissa
    }

    pub fn shift(&self) -> u32 {
        self.shift
    }

    /// Integer-only application: `round(v * ratio)` within one unit.
    #[inline]
    pub fn apply(&self, v: i64) -> i64 {
        rounding_shift_right(v * self.mantissa, self.shift)
    }

    /// The real value this multiplier represents.
    pub fn value(&self) -> f64 {
        self.mantissa as f64 / (1u64 << self.shift) as f64
    }
}

/// Precompiled rescaler from one tensor scale to another. Construction is
/// float work done offline; `apply` is integer-only.
#[derive(Debug, Clone)]
pub struct Requantizer {
    mult: DyadicMultiplier,
    in_scale: f64,
    out_params: QParams,
}

impl Requantizer {
    pub fn new(in_scale: f64, out_params: QParams) -> Result<Self> {
        if !in_scale.is_finite() || in_scale <= 0.0 {
            return Err(Error::InvalidScale(in_scale));
        }
        let mult = DyadicMultiplier::from_ratio(in_scale / out_params.scale())?;
        Ok(Self {
            mult,
            in_scale,
            out_params,
        })
    }

    pub fn out_params(&self) -> &QParams {
        &self.out_params
    }

    pub fn in_scale(&self) -> f64 {
        self.in_scale
    }

    /// Rescales one code, clipping to the output range.
    #[inline]
    pub fn apply_value(&self, q: i64) -> i32 {
        self.mult
            .apply(q)
            .clamp(self.out_params.qmin(), self.out_params.qmax()) as i32
    }

    /// Rescales a whole tensor. The input must carry the scale the
    /// requantizer was compiled for.
    pub fn apply(&self, t: &QTensor) -> Result<QTensor> {
        if (t.scale() - self.in_scale).abs() > self.in_scale * 1e-12 {
            return Err(Error::InvalidScale(t.scale()));
        }
        let data = t
            .data()
            .iter()
            .map(|&q| self.apply_value(q as i64))
            .collect();
        Ok(QTensor {
            data,
            params: self.out_params,
            shape: t.shape().to_vec(),
        })
    }
}

/// Rescales a 32-bit tensor to an 8-bit tensor: `q_out = round(q * S_in/S_out)`
/// clipped to the 8-bit range. The multiplier is compiled on entry; use
/// [`Requantizer`] directly to compile it once offline.
pub fn requantize(t: &QTensor, out_params: &QParams) -> Result<QTensor> {
    if t.params().bits() != 32 {
        return Err(Error::BitsMismatch {
            context: "requantize input",
            expected: 32,
            actual: t.params().bits(),
        });
    }
    if out_params.bits() != 8 {
        return Err(Error::BitsMismatch {
            context: "requantize output",
            expected: 8,
            actual: out_params.bits(),
        });
    }
    Requantizer::new(t.scale(), *out_params)?.apply(t)
}

/// Picks a clipping bound from activation samples: `alpha = max |x|`.
/// Fails on an empty or all-zero sample set.
pub fn calibrate<'a, I>(samples: I, bits: u8) -> Result<QParams>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    purity::record_float_use();
    let mut alpha = 0.0f64;
    let mut seen = false;
    for chunk in samples {
        for (index, &v) in chunk.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteInput { value: v, index });
            }
            seen = true;
            alpha = alpha.max(v.abs());
        }
    }
    if !seen {
        return Err(Error::EmptyInput);
    }
    if alpha == 0.0 {
        // An all-zero activation cannot define a scale.
        return Err(Error::InvalidAlpha(alpha));
    }
    QParams::from_alpha(bits, alpha)
}

/// Percentile variant of [`calibrate`]: `alpha` is the `pct`-th percentile
/// (nearest rank) of the absolute values, useful for clipping outliers.
pub fn calibrate_percentile<'a, I>(samples: I, bits: u8, pct: f64) -> Result<QParams>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    if !(0.0..=100.0).contains(&pct) {
        return Err(Error::InvalidArgument(format!(
            "percentile {pct} outside [0, 100]"
        )));
    }
    purity::record_float_use();
    let mut mags = Vec::new();
    for chunk in samples {
        for (index, &v) in chunk.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteInput { value: v, index });
            }
            mags.push(v.abs());
        }
    }
    if mags.is_empty() {
        return Err(Error::EmptyInput);
    }
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((pct / 100.0) * (mags.len() - 1) as f64).round() as usize;
    let alpha = mags[idx];
    if alpha == 0.0 {
        return Err(Error::InvalidAlpha(alpha));
    }
    QParams::from_alpha(bits, alpha)
}
