//! Second-order polynomials evaluated with integer-only arithmetic, plus the
//! offline coefficient machinery: Lagrange interpolation, discrete least
//! squares on an interval, and the interpolation error bound.
//!
//! The integer scheme rewrites `a(x + b)^2 + c` with `x = S*q` as
//! `S_out * ((q + q_b)^2 + q_c)` where `q_b = floor(b/S)`,
//! `q_c = floor(c/(a*S^2))`, and `S_out = a*S^2`. The three constants are
//! compiled once offline; evaluation is one add, one square, one add.

use crate::error::{Error, Result};
use crate::purity;
use crate::quant::round_ties_away;

/// Real coefficients of `a(x + b)^2 + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PolyCoeffs {
    pub fn eval(&self, x: f64) -> f64 {
        let t = x + self.b;
        self.a * t * t + self.c
    }
}

/// Narrows a 64-bit accumulator value to the 32-bit range: traps in debug
/// builds, saturates in release builds.
#[inline]
pub(crate) fn narrow_i32(v: i64) -> i32 {
    debug_assert!(
        (i32::MIN as i64..=i32::MAX as i64).contains(&v),
        "int32 accumulator overflow: {v}"
    );
    v.clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

/// Precompiled integer form of a second-order polynomial for one input scale.
#[derive(Debug, Clone, Copy)]
pub struct IntPoly {
    coeffs: PolyCoeffs,
    q_b: i64,
    q_c: i64,
    s_in: f64,
    s_out: f64,
}

impl IntPoly {
    pub fn q_b(&self) -> i64 {
        self.q_b
    }

    pub fn q_c(&self) -> i64 {
        self.q_c
    }

    pub fn s_in(&self) -> f64 {
        self.s_in
    }

    /// Output scale, the exact real `a * S^2`.
    pub fn s_out(&self) -> f64 {
        self.s_out
    }

    pub fn coeffs(&self) -> &PolyCoeffs {
        &self.coeffs
    }

    /// Integer-only evaluation in a 64-bit accumulator: `(q + q_b)^2 + q_c`.
    #[inline]
    pub fn eval(&self, q: i64) -> i64 {
        let t = q + self.q_b;
        t * t + self.q_c
    }

    /// Upper bound on `|S_out * eval(q) - (a(S*q+b)^2 + c)|` coming from the
    /// two floor operations in compilation.
    pub fn floor_error_bound(&self, q: i64) -> f64 {
        let PolyCoeffs { a, b, .. } = self.coeffs;
        let s = self.s_in;
        let x = s * q as f64;
        a.abs() * s * (s + 2.0 * (x + b).abs()) + (a * s * s).abs()
    }
}

/// Compiles real coefficients into integer form for the given input scale.
/// Offline setup: this is where the float work happens.
pub fn compile_poly(coeffs: PolyCoeffs, s_in: f64) -> Result<IntPoly> {
    if coeffs.a == 0.0 || !coeffs.a.is_finite() {
        return Err(Error::DegeneratePolynomial);
    }
    if !s_in.is_finite() || s_in <= 0.0 {
        return Err(Error::InvalidScale(s_in));
    }
    purity::record_float_use();
    let s_out = coeffs.a * s_in * s_in;
    Ok(IntPoly {
        coeffs,
        q_b: (coeffs.b / s_in).floor() as i64,
        q_c: (coeffs.c / s_out).floor() as i64,
        s_in,
        s_out,
    })
}

/// Integer-only batch evaluation. Returns the output codes and their scale.
pub fn i_poly(q: &[i32], p: &IntPoly) -> (Vec<i32>, f64) {
    let out = q.iter().map(|&v| narrow_i32(p.eval(v as i64))).collect();
    (out, p.s_out())
}

/// The unique polynomial through a set of nodes, stored as monomial
/// coefficients in ascending degree.
#[derive(Debug, Clone)]
pub struct InterpolatingPoly {
    nodes: Vec<(f64, f64)>,
    coeffs: Vec<f64>,
}

impl InterpolatingPoly {
    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

/// Fits the unique interpolating polynomial through the given points by
/// expanding the Lagrange basis into monomial form.
pub fn lagrange_fit(points: &[(f64, f64)]) -> Result<InterpolatingPoly> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    purity::record_float_use();
    let n = points.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let (xi, xj) = (points[i].0, points[j].0);
            if (xi - xj).abs() <= 1e-12 * xi.abs().max(xj.abs()).max(1.0) {
                return Err(Error::DuplicateNode(xi));
            }
        }
    }
    let mut coeffs = vec![0.0; n];
    for (i, &(xi, fi)) in points.iter().enumerate() {
        // numerator poly prod_{j != i} (x - x_j), built incrementally
        let mut num = vec![0.0; n];
        num[0] = 1.0;
        let mut deg = 0usize;
        let mut denom = 1.0;
        for (j, &(xj, _)) in points.iter().enumerate() {
            if j == i {
                continue;
            }
            denom *= xi - xj;
            for k in (0..=deg).rev() {
                num[k + 1] += num[k];
                num[k] *= -xj;
            }
            deg += 1;
        }
        let w = fi / denom;
        for (ck, nk) in coeffs.iter_mut().zip(&num) {
            *ck += w * nk;
        }
    }
    Ok(InterpolatingPoly {
        nodes: points.to_vec(),
        coeffs,
    })
}

/// Grid settings for the discrete least-squares fits. Open endpoints are
/// inset by half a step so the grid never samples an excluded endpoint.
#[derive(Debug, Clone, Copy)]
pub struct FitGrid {
    pub n_points: usize,
    pub open_lo: bool,
    pub open_hi: bool,
}

impl Default for FitGrid {
    fn default() -> Self {
        Self {
            n_points: 10_001,
            open_lo: false,
            open_hi: false,
        }
    }
}

impl FitGrid {
    fn points(&self, lo: f64, hi: f64) -> impl Iterator<Item = f64> {
        let n = self.n_points;
        let h = (hi - lo) / (n - 1) as f64;
        let eff_lo = if self.open_lo { lo + h / 2.0 } else { lo };
        let eff_hi = if self.open_hi { hi - h / 2.0 } else { hi };
        let step = (eff_hi - eff_lo) / (n - 1) as f64;
        (0..n).map(move |i| eff_lo + step * i as f64)
    }
}

/// Fits `a(x + b)^2 + c` to `f` on `[lo, hi]` by minimizing the discrete L2
/// distance over a dense uniform grid. Deterministic; solved as a linear
/// least-squares problem in monomial form around the interval midpoint.
pub fn lsq_fit_quadratic<F>(f: F, lo: f64, hi: f64, grid: &FitGrid) -> Result<PolyCoeffs>
where
    F: Fn(f64) -> f64,
{
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::InvalidArgument(format!(
            "bad fit interval [{lo}, {hi}]"
        )));
    }
    if grid.n_points < 3 {
        return Err(Error::InvalidArgument(
            "fit grid needs at least 3 points".into(),
        ));
    }
    purity::record_float_use();
    let mid = 0.5 * (lo + hi);

    // Normal equations for y ~ p2*t^2 + p1*t + p0 with t = x - mid.
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for x in grid.points(lo, hi) {
        let y = f(x);
        if !y.is_finite() {
            return Err(Error::NonFiniteValue { x });
        }
        let t = x - mid;
        let basis = [t * t, t, 1.0];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += basis[r] * basis[c];
            }
            rhs[r] += basis[r] * y;
        }
    }
    let sol = solve3(m, rhs)?;
    let (p2, p1, p0) = (sol[0], sol[1], sol[2]);
    if p2 == 0.0 || !p2.is_finite() {
        return Err(Error::DegeneratePolynomial);
    }
    // p2*(t + p1/(2 p2))^2 + p0 - p1^2/(4 p2), then shift t = x - mid back.
    Ok(PolyCoeffs {
        a: p2,
        b: p1 / (2.0 * p2) - mid,
        c: p0 - p1 * p1 / (4.0 * p2),
    })
}

#[allow(clippy::needless_range_loop)]
fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Result<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        b.swap(col, pivot);
        if m[col][col] == 0.0 {
            return Err(Error::DegeneratePolynomial);
        }
        for row in (col + 1)..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in (row + 1)..3 {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Ok(x)
}

/// Fits the clipped quadratic used inside the GELU approximation. The model
/// is `sgn(x)[a(min(|x|, -b) + b)^2 + 1]` standing in for `erf`, and the fit
/// minimizes the discrete L2 distance in GELU space:
/// `|| GELU(x) - x/2 (1 + L(x/sqrt2)) ||^2` over `x in [0, hi]`.
///
/// `c` is pinned to 1 so the polynomial joins the saturated region
/// continuously at `|x| = -b`; for fixed `b` the optimal `a` is closed-form,
/// and `b` is found by deterministic grid refinement.
pub fn lsq_fit_erf_for_gelu(hi: f64, n_points: usize) -> Result<PolyCoeffs> {
    if hi.is_nan() || hi <= 0.0 || n_points < 3 {
        return Err(Error::InvalidArgument(
            "erf fit needs hi > 0 and at least 3 grid points".into(),
        ));
    }
    purity::record_float_use();
    let sqrt2 = std::f64::consts::SQRT_2;
    let xs: Vec<f64> = (0..n_points)
        .map(|i| hi * i as f64 / (n_points - 1) as f64)
        .collect();
    let residual: Vec<f64> = xs
        .iter()
        .map(|&x| x / 2.0 * (crate::oracle::erf(x / sqrt2) - 1.0))
        .collect();

    // For fixed b: model term is u(x) = x/2 * (min(x/sqrt2, -b) + b)^2 and
    // a* = <residual, u> / <u, u>.
    let eval = |b: f64| -> (f64, f64) {
        let mut num = 0.0;
        let mut den = 0.0;
        for (&x, &r) in xs.iter().zip(&residual) {
            let y = (x / sqrt2).min(-b);
            let u = x / 2.0 * (y + b) * (y + b);
            num += r * u;
            den += u * u;
        }
        let a = num / den;
        let mut sse = 0.0;
        for (&x, &r) in xs.iter().zip(&residual) {
            let y = (x / sqrt2).min(-b);
            let u = x / 2.0 * (y + b) * (y + b);
            let d = r - a * u;
            sse += d * d;
        }
        (sse, a)
    };

    let mut lo_b = -3.0;
    let mut hi_b = -1.0;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for _ in 0..4 {
        let steps = 200;
        for i in 0..=steps {
            let b = lo_b + (hi_b - lo_b) * i as f64 / steps as f64;
            let (sse, a) = eval(b);
            if sse < best.0 {
                best = (sse, a, b);
            }
        }
        let w = (hi_b - lo_b) / steps as f64;
        lo_b = best.2 - 2.0 * w;
        hi_b = best.2 + 2.0 * w;
    }
    Ok(PolyCoeffs {
        a: best.1,
        b: best.2,
        c: 1.0,
    })
}

/// Fits the quadratic used by the shifted-exponential kernel: discrete L2
/// over `(-ln2, 0]` subject to `L(0) = 1` and `L(-ln2) = 1/2`, so the
/// power-of-two bands of `L(p) >> z` join continuously. The two constraints
/// leave one free parameter (the curvature), found by deterministic grid
/// refinement.
pub fn lsq_fit_exp_band(n_points: usize) -> Result<PolyCoeffs> {
    if n_points < 3 {
        return Err(Error::InvalidArgument(
            "exp band fit needs at least 3 grid points".into(),
        ));
    }
    purity::record_float_use();
    let ln2 = std::f64::consts::LN_2;
    let bc = |a: f64| -> (f64, f64) {
        let b = (0.5 / (a * ln2) + ln2) / 2.0;
        (b, 1.0 - a * b * b)
    };
    let xs: Vec<f64> = (0..n_points)
        .map(|i| -ln2 + ln2 * i as f64 / (n_points - 1) as f64)
        .collect();
    let exps: Vec<f64> = xs.iter().map(|&p| p.exp()).collect();
    let sse = |a: f64| -> f64 {
        let (b, c) = bc(a);
        xs.iter()
            .zip(&exps)
            .map(|(&p, &e)| {
                let d = a * (p + b) * (p + b) + c - e;
                d * d
            })
            .sum()
    };
    let mut lo = 0.2f64;
    let mut hi = 0.6f64;
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..6 {
        let steps = 400;
        for i in 0..=steps {
            let a = lo + (hi - lo) * i as f64 / steps as f64;
            let s = sse(a);
            if s < best.0 {
                best = (s, a);
            }
        }
        let w = (hi - lo) / steps as f64;
        lo = best.1 - 2.0 * w;
        hi = best.1 + 2.0 * w;
    }
    let (b, c) = bc(best.1);
    Ok(PolyCoeffs { a: best.1, b, c })
}

/// Upper bound on the interpolation error at `x` for nodes `points`:
/// `deriv_bound / (n+1)! * prod |x - x_i|`, where `deriv_bound` bounds the
/// (n+1)-th derivative over the hull of the nodes and `x`.
pub fn interp_error_bound(deriv_bound: f64, points: &[f64], x: f64) -> f64 {
    let n_plus_1 = points.len();
    let mut fact = 1.0f64;
    for k in 1..=n_plus_1 {
        fact *= k as f64;
    }
    let prod: f64 = points.iter().map(|&xi| (x - xi).abs()).product();
    deriv_bound / fact * prod
}

/// Round-to-nearest integer division, ties away from zero.
#[inline]
pub(crate) fn rounded_div(num: i64, den: i64) -> i64 {
    debug_assert!(den > 0);
    if num >= 0 {
        (num + den / 2) / den
    } else {
        -((-num + den / 2) / den)
    }
}

#[allow(dead_code)]
fn _round_ties_away_is_used(x: f64) -> f64 {
    round_ties_away(x)
}
