//! Double-precision reference implementations and error metrics.
//!
//! These are the ground truths the integer kernels are measured against:
//! erf/GELU (via libm's sub-ulp erf), the sigmoid and hard-sigmoid GELU
//! baselines, exp, softmax, and LayerNorm, plus grid-based L2/Linf reports
//! and tabular curve dumps for external plotting.

use std::io::Write;

use crate::error::{Error, Result};
use crate::purity;

/// Error function, accurate to well below 1e-14.
pub fn erf(x: f64) -> f64 {
    purity::record_float_use();
    libm::erf(x)
}

/// `GELU(x) = x/2 * (1 + erf(x / sqrt2))`.
pub fn gelu(x: f64) -> f64 {
    purity::record_float_use();
    x * 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn sigmoid(x: f64) -> f64 {
    purity::record_float_use();
    1.0 / (1.0 + (-x).exp())
}

/// The sigmoid-based GELU baseline `x * sigmoid(1.702 x)`.
pub fn sigmoid_gelu(x: f64) -> f64 {
    x * sigmoid(1.702 * x)
}

pub fn relu(x: f64) -> f64 {
    purity::record_float_use();
    x.max(0.0)
}

pub fn relu6(x: f64) -> f64 {
    purity::record_float_use();
    x.clamp(0.0, 6.0)
}

/// The hard-sigmoid GELU baseline `x * ReLU6(1.702 x + 3) / 6`. Saturates to
/// the identity for `x >= 3/1.702`.
pub fn h_gelu(x: f64) -> f64 {
    x * relu6(1.702 * x + 3.0) / 6.0
}

/// Numerically stable softmax: exponentials of max-subtracted inputs.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyInput);
    }
    purity::record_float_use();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Reference LayerNorm without affine transform: `(x - mean) / sqrt(var + eps)`
/// with the biased (1/C) variance.
pub fn layernorm(v: &[f64], eps: f64) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyInput);
    }
    purity::record_float_use();
    let c = v.len() as f64;
    let mean = v.iter().sum::<f64>() / c;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / c;
    let denom = (var + eps).sqrt();
    Ok(v.iter().map(|&x| (x - mean) / denom).collect())
}

/// L2 (root-mean-square) and Linf distance of an approximation from a
/// reference over a uniform grid.
#[derive(Debug, Clone, Copy)]
pub struct ErrorReport {
    pub l2: f64,
    pub linf: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
}

/// Evaluates both functions on an inclusive uniform grid and reports
/// `linf = max |approx - reference|` and `l2 = sqrt(mean (approx - reference)^2)`.
pub fn error_report<F, G>(
    approx: F,
    reference: G,
    lo: f64,
    hi: f64,
    n_points: usize,
) -> Result<ErrorReport>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if lo.is_nan() || hi.is_nan() || lo >= hi || n_points < 2 {
        return Err(Error::InvalidArgument(format!(
            "error_report needs lo < hi and n_points >= 2, got [{lo}, {hi}] x {n_points}"
        )));
    }
    purity::record_float_use();
    let step = (hi - lo) / (n_points - 1) as f64;
    let mut linf = 0.0f64;
    let mut sumsq = 0.0f64;
    for i in 0..n_points {
        let x = lo + step * i as f64;
        let (a, r) = (approx(x), reference(x));
        if !a.is_finite() || !r.is_finite() {
            return Err(Error::NonFiniteValue { x });
        }
        let d = a - r;
        linf = linf.max(d.abs());
        sumsq += d * d;
    }
    Ok(ErrorReport {
        l2: (sumsq / n_points as f64).sqrt(),
        linf,
        lo,
        hi,
        n_points,
    })
}

/// A table of sampled curves: one `x` column plus one column per function.
#[derive(Debug, Clone)]
pub struct CurveTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CurveTable {
    /// Writes the table as CSV with 13 significant digits per value.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{}", self.headers.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Samples the named functions on an inclusive uniform grid for external
/// plotting.
pub fn curve_dump(
    functions: &[(&str, &dyn Fn(f64) -> f64)],
    lo: f64,
    hi: f64,
    n_points: usize,
) -> Result<CurveTable> {
    if lo.is_nan() || hi.is_nan() || lo >= hi || n_points < 2 {
        return Err(Error::InvalidArgument(format!(
            "curve_dump needs lo < hi and n_points >= 2, got [{lo}, {hi}] x {n_points}"
        )));
    }
    purity::record_float_use();
    let mut headers = vec!["x".to_string()];
    headers.extend(functions.iter().map(|(name, _)| name.to_string()));
    let step = (hi - lo) / (n_points - 1) as f64;
    let mut rows = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let x = lo + step * i as f64;
        let mut row = Vec::with_capacity(functions.len() + 1);
        row.push(x);
        for (_, f) in functions {
            let y = f(x);
            if !y.is_finite() {
                return Err(Error::NonFiniteValue { x });
            }
            row.push(y);
        }
        rows.push(row);
    }
    Ok(CurveTable { headers, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_basics() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(3.0) - 2.995950).abs() < 1e-5);
        assert!(gelu(-10.0).abs() < 1e-9);
        // approaches identity for large x
        assert!((gelu(8.0) - 8.0).abs() < 1e-9);
    }

    #[test]
    fn erf_reference_values() {
        assert_eq!(erf(0.0), 0.0);
        assert!((erf(1.0) - 0.8427007929497149).abs() < 1e-14);
        assert!((erf(-1.0) + 0.8427007929497149).abs() < 1e-14);
    }

    #[test]
    fn baselines_vanish_at_zero() {
        assert_eq!(sigmoid_gelu(0.0), 0.0);
        assert_eq!(h_gelu(0.0), 0.0);
    }

    #[test]
    fn h_gelu_saturates_to_identity() {
        for &x in &[3.0 / 1.702, 2.0, 5.0] {
            assert!((h_gelu(x) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_uniform_and_singleton() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let one = softmax(&[3.2]).unwrap();
        assert!((one[0] - 1.0).abs() < 1e-15);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn layernorm_unit_pair() {
        let out = layernorm(&[1.0, -1.0], 0.0).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!((out[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn error_report_zero_for_identical_functions() {
        let r = error_report(gelu, gelu, -4.0, 4.0, 101).unwrap();
        assert_eq!(r.l2, 0.0);
        assert_eq!(r.linf, 0.0);
    }

    #[test]
    fn error_report_rejects_bad_grid() {
        assert!(error_report(gelu, gelu, 4.0, -4.0, 101).is_err());
        assert!(error_report(gelu, gelu, -4.0, 4.0, 1).is_err());
    }

    #[test]
    fn error_report_stable_under_grid_refinement() {
        let a = error_report(sigmoid_gelu, gelu, -4.0, 4.0, 8001).unwrap();
        let b = error_report(sigmoid_gelu, gelu, -4.0, 4.0, 16001).unwrap();
        assert!((a.linf - b.linf).abs() < 1e-4);
    }

    #[test]
    fn curve_dump_shape_and_values() {
        let fns: Vec<(&str, &dyn Fn(f64) -> f64)> = vec![("relu", &relu), ("gelu", &gelu)];
        let t = curve_dump(&fns, -1.0, 1.0, 3).unwrap();
        assert_eq!(t.headers, vec!["x", "relu", "gelu"]);
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0][1], 0.0); // relu(-1)
        assert_eq!(t.rows[1][2], 0.0); // gelu(0)
    }

    #[test]
    fn csv_has_12_significant_digits() {
        let fns: Vec<(&str, &dyn Fn(f64) -> f64)> = vec![("gelu", &gelu)];
        let t = curve_dump(&fns, 0.0, 1.0, 2).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,gelu\n"));
        assert!(text.contains("e0") || text.contains("e-"));
    }
}
