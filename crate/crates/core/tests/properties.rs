//! Property tests for the quantization and kernel invariants, plus the
//! million-sample requantization oracle check.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use intformer_core::nonlinear::{i_erf, i_sqrt_with_iters, ERF_COEFFS};
use intformer_core::poly::{compile_poly, interp_error_bound, lagrange_fit, PolyCoeffs};
use intformer_core::quant::{dequantize, quantize, DyadicMultiplier, QParams, Requantizer};

proptest! {
    #[test]
    fn round_trip_within_half_step(
        alpha in 1e-3f64..1e3,
        frac in -1.0f64..1.0,
    ) {
        let params = QParams::from_alpha(8, alpha).unwrap();
        let x = alpha * frac;
        let q = quantize(&[x], &params).unwrap();
        let back = dequantize(&q)[0];
        prop_assert!((back - x).abs() <= params.scale() / 2.0 + alpha * 1e-12);
    }

    #[test]
    fn clipping_beyond_alpha_saturates(
        alpha in 1e-3f64..1e3,
        excess in 1.0001f64..100.0,
    ) {
        let params = QParams::from_alpha(8, alpha).unwrap();
        let q = quantize(&[alpha * excess, -alpha * excess], &params).unwrap();
        prop_assert_eq!(q.data(), &[127, -127]);
    }

    #[test]
    fn quantization_is_odd_up_to_ties(
        alpha in 1e-3f64..1e3,
        frac in -2.0f64..2.0,
    ) {
        let params = QParams::from_alpha(8, alpha).unwrap();
        let x = alpha * frac;
        let plus = quantize(&[x], &params).unwrap().data()[0];
        let minus = quantize(&[-x], &params).unwrap().data()[0];
        prop_assert!((plus as i64 + minus as i64).abs() <= 1);
    }

    #[test]
    fn dyadic_multiplier_rounds_its_represented_ratio(
        log_ratio in -20.0f64..20.0,
        q in i32::MIN..=i32::MAX,
    ) {
        // the mantissa approximates the ratio to 2^-31 relative, and apply()
        // must round-to-nearest against the represented value
        let ratio = log_ratio.exp2();
        let m = DyadicMultiplier::from_ratio(ratio).unwrap();
        prop_assert!((m.value() - ratio).abs() <= ratio * 1e-9);
        let got = m.apply(q as i64) as f64;
        let want = (q as f64 * m.value()).round();
        if want.abs() < 1e15 {
            prop_assert!((got - want).abs() <= 1.0, "{got} vs {want}");
        }
    }

    #[test]
    fn integer_polynomial_stays_inside_floor_bound(
        a_mag in 0.05f64..2.0,
        neg in any::<bool>(),
        b in -3.0f64..3.0,
        c in -2.0f64..2.0,
        log_s in -3.0f64..-1.3,
    ) {
        let coeffs = PolyCoeffs { a: if neg { -a_mag } else { a_mag }, b, c };
        let s = log_s.exp2();
        let p = compile_poly(coeffs, s).unwrap();
        for q in -128..=127i64 {
            let got = p.eval(q) as f64 * p.s_out();
            let want = coeffs.eval(s * q as f64);
            prop_assert!(
                (got - want).abs() <= p.floor_error_bound(q),
                "q={} got={} want={}", q, got, want
            );
        }
    }

    #[test]
    fn integer_sqrt_is_exact_floor(n in 0i64..(1i64 << 62)) {
        let (r, iters) = i_sqrt_with_iters(n).unwrap();
        prop_assert!(r * r <= n);
        prop_assert!(n < (r + 1) * (r + 1));
        prop_assert!(iters <= 64);
    }

    #[test]
    fn interpolation_error_bound_dominates_for_exp(
        x0 in -1.0f64..-0.7,
        x1 in -0.6f64..-0.2,
        x2 in -0.1f64..0.3,
        x in -1.0f64..0.3,
    ) {
        let nodes = [x0, x1, x2];
        let pts: Vec<(f64, f64)> = nodes.iter().map(|&t| (t, t.exp())).collect();
        let p = lagrange_fit(&pts).unwrap();
        // |exp'''| <= e^0.3 on the hull
        let bound = interp_error_bound(0.3f64.exp(), &nodes, x);
        prop_assert!((p.eval(x) - x.exp()).abs() <= bound + 1e-12);
    }

    #[test]
    fn erf_kernel_is_odd_and_bounded(
        alpha in 0.5f64..16.0,
        q in 1i32..=127,
    ) {
        let s = alpha / 127.0;
        let (out, s_out) = i_erf(&[q, -q], s).unwrap();
        prop_assert_eq!(out[0], -out[1]);
        let bound = 1.0 + ERF_COEFFS.a.abs() * s * (2.0 * ERF_COEFFS.b.abs() + s);
        prop_assert!((out[0] as f64 * s_out).abs() <= bound);
    }
}

/// The requantization path must agree with the real-arithmetic formula
/// `round(q * S_in/S_out)`, clipped, within one unit — checked against a
/// scalar oracle over a million random inputs.
#[test]
fn requantize_matches_scalar_oracle_over_one_million_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..1_000_000 {
        let s_in = 10f64.powf(rng.random_range(-6.0..2.0));
        let s_out = 10f64.powf(rng.random_range(-6.0..2.0));
        let q: i32 = rng.random();
        let rq = Requantizer::new(s_in, QParams::from_scale(8, s_out).unwrap()).unwrap();
        let got = rq.apply_value(q as i64) as i64;
        let want = (q as f64 * (s_in / s_out)).round().clamp(-128.0, 127.0) as i64;
        assert!(
            (got - want).abs() <= 1,
            "q={q} s_in={s_in} s_out={s_out}: {got} vs {want}"
        );
    }
}
