//! Deterministic random weight and input generation for demos, tests, and
//! benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{EncoderDims, FloatEncoderWeights};

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * std
}

/// Random layer weights: matrices at 1/sqrt(fan-in) scale, small biases,
/// gains near one.
pub fn random_weights(dims: &EncoderDims, seed: u64) -> FloatEncoderWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = FloatEncoderWeights::zeros(*dims);
    let h = dims.hidden;
    let f = dims.ffn;

    let fill = |dst: &mut [f64], std: f64, rng: &mut ChaCha8Rng| {
        for v in dst.iter_mut() {
            *v = normal(rng, std);
        }
    };

    let wstd = 1.0 / (h as f64).sqrt();
    fill(&mut w.wq, wstd, &mut rng);
    fill(&mut w.wk, wstd, &mut rng);
    fill(&mut w.wv, wstd, &mut rng);
    fill(&mut w.wo, wstd, &mut rng);
    fill(&mut w.w1, wstd, &mut rng);
    fill(&mut w.w2, 1.0 / (f as f64).sqrt(), &mut rng);
    fill(&mut w.bq, 0.02, &mut rng);
    fill(&mut w.bk, 0.02, &mut rng);
    fill(&mut w.bv, 0.02, &mut rng);
    fill(&mut w.bo, 0.02, &mut rng);
    fill(&mut w.b1, 0.02, &mut rng);
    fill(&mut w.b2, 0.02, &mut rng);
    for v in w.ln1_gain.iter_mut().chain(w.ln2_gain.iter_mut()) {
        *v = 1.0 + normal(&mut rng, 0.1);
    }
    fill(&mut w.ln1_bias, 0.05, &mut rng);
    fill(&mut w.ln2_bias, 0.05, &mut rng);
    w
}

/// Random unit-variance inputs, one `seq * hidden` row-major matrix each.
pub fn random_inputs(dims: &EncoderDims, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..dims.seq * dims.hidden)
                .map(|_| normal(&mut rng, 1.0))
                .collect()
        })
        .collect()
}

/// Seeded uniform integers in `[lo, hi]`, for kernel-level tests.
pub fn random_codes(len: usize, lo: i32, hi: i32, seed: u64) -> Vec<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(lo..=hi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let dims = EncoderDims::new(2, 8, 2, 16).unwrap();
        let a = random_weights(&dims, 42);
        let b = random_weights(&dims, 42);
        assert_eq!(a.wq, b.wq);
        assert_eq!(a.b2, b.b2);
        let c = random_weights(&dims, 43);
        assert_ne!(a.wq, c.wq);
    }

    #[test]
    fn inputs_have_expected_shape() {
        let dims = EncoderDims::new(3, 8, 2, 16).unwrap();
        let xs = random_inputs(&dims, 5, 1);
        assert_eq!(xs.len(), 5);
        assert!(xs.iter().all(|x| x.len() == 24));
    }
}
