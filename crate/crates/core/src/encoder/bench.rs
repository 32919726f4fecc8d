//! Wall-clock microbenchmarks of the integer kernels against their float
//! counterparts. Timings carry no asserted targets; they exist to report
//! integer-vs-float behavior on the build machine.

use std::hint::black_box;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::nonlinear::{i_layernorm, i_sqrt, IGelu, ISoftmax, LayerNormParams};
use crate::oracle;
use crate::quant::{QParams, QTensor};

use super::matmul::int_matmul;
use super::synth::random_codes;

/// Minimum repetition count accepted by [`microbench`].
pub const MIN_REPS: usize = 30;

/// One benchmark result: median wall-clock nanoseconds for the integer and
/// float paths of an op, and their ratio.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub op: String,
    pub size: String,
    pub int_median_ns: u128,
    pub float_median_ns: u128,
    pub speedup: f64,
}

fn median(mut samples: Vec<u128>) -> u128 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

fn time<F: FnMut()>(reps: usize, mut f: F) -> u128 {
    let mut laps = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        f();
        laps.push(t0.elapsed().as_nanos());
    }
    median(laps)
}

fn row(op: &str, size: String, int_ns: u128, float_ns: u128) -> BenchRow {
    BenchRow {
        op: op.to_string(),
        size,
        int_median_ns: int_ns,
        float_median_ns: float_ns,
        speedup: float_ns as f64 / int_ns.max(1) as f64,
    }
}

fn bench_matmul(m: usize, k: usize, n: usize, reps: usize, seed: u64) -> Result<BenchRow> {
    let pa = QParams::from_alpha(8, 1.0)?;
    let a = QTensor::new(random_codes(m * k, -127, 127, seed), pa, vec![m, k])?;
    let b = QTensor::new(random_codes(k * n, -127, 127, seed + 1), pa, vec![k, n])?;
    let af: Vec<f64> = a.data().iter().map(|&v| v as f64 / 127.0).collect();
    let bf: Vec<f64> = b.data().iter().map(|&v| v as f64 / 127.0).collect();

    let int_ns = time(reps, || {
        black_box(int_matmul(black_box(&a), black_box(&b), None).unwrap());
    });
    let mut out = vec![0.0f64; m * n];
    let float_ns = time(reps, || {
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            for l in 0..k {
                let x = af[i * k + l];
                for j in 0..n {
                    out[i * n + j] += x * bf[l * n + j];
                }
            }
        }
        black_box(&out);
    });
    Ok(row("matmul", format!("{m}x{k}x{n}"), int_ns, float_ns))
}

fn bench_gelu(len: usize, reps: usize, seed: u64) -> Result<BenchRow> {
    let s = 8.0 / 127.0;
    let q = random_codes(len, -127, 127, seed);
    let xs: Vec<f64> = q.iter().map(|&v| v as f64 * s).collect();
    let kernel = IGelu::new(s, 127)?;
    let int_ns = time(reps, || {
        black_box(kernel.eval_slice(black_box(&q)));
    });
    let float_ns = time(reps, || {
        let out: Vec<f64> = xs.iter().map(|&x| oracle::gelu(x)).collect();
        black_box(out);
    });
    Ok(row("gelu", format!("{len}"), int_ns, float_ns))
}

fn bench_softmax(rows: usize, len: usize, reps: usize, seed: u64) -> Result<BenchRow> {
    let s = 1e-3;
    let q: Vec<Vec<i32>> = (0..rows)
        .map(|r| random_codes(len, -8000, 8000, seed + r as u64))
        .collect();
    let xs: Vec<Vec<f64>> = q
        .iter()
        .map(|row| row.iter().map(|&v| v as f64 * s).collect())
        .collect();
    let kernel = ISoftmax::new(s)?;
    let int_ns = time(reps, || {
        for row in &q {
            black_box(kernel.eval(black_box(row)).unwrap());
        }
    });
    let float_ns = time(reps, || {
        for row in &xs {
            black_box(oracle::softmax(black_box(row)).unwrap());
        }
    });
    Ok(row("softmax", format!("{rows}x{len}"), int_ns, float_ns))
}

fn bench_layernorm(rows: usize, channels: usize, reps: usize, seed: u64) -> Result<BenchRow> {
    let s = 1e-4;
    let params = LayerNormParams::new(channels);
    let q: Vec<Vec<i32>> = (0..rows)
        .map(|r| random_codes(channels, -30_000, 30_000, seed + r as u64))
        .collect();
    let xs: Vec<Vec<f64>> = q
        .iter()
        .map(|row| row.iter().map(|&v| v as f64 * s).collect())
        .collect();
    let int_ns = time(reps, || {
        for row in &q {
            black_box(i_layernorm(black_box(row), s, &params).unwrap());
        }
    });
    let float_ns = time(reps, || {
        for row in &xs {
            black_box(oracle::layernorm(black_box(row), 1e-12).unwrap());
        }
    });
    Ok(row(
        "layernorm",
        format!("{rows}x{channels}"),
        int_ns,
        float_ns,
    ))
}

fn bench_isqrt(count: usize, reps: usize, seed: u64) -> Result<BenchRow> {
    let q: Vec<i64> = random_codes(count, 0, i32::MAX, seed)
        .into_iter()
        .map(|v| v as i64)
        .collect();
    let xs: Vec<f64> = q.iter().map(|&v| v as f64).collect();
    let int_ns = time(reps, || {
        for &n in &q {
            black_box(i_sqrt(black_box(n)).unwrap());
        }
    });
    let float_ns = time(reps, || {
        for &x in &xs {
            black_box(black_box(x).sqrt().floor() as i64);
        }
    });
    Ok(row("isqrt", format!("{count}"), int_ns, float_ns))
}

/// Runs the named benchmark (`matmul`, `matmul-bert`, `gelu`, `softmax`,
/// `layernorm`, `isqrt`, or `all`) with at least [`MIN_REPS`] repetitions.
pub fn microbench(op: &str, reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if reps < MIN_REPS {
        return Err(Error::InvalidArgument(format!(
            "repetitions must be >= {MIN_REPS}, got {reps}"
        )));
    }
    match op {
        "matmul" => Ok(vec![bench_matmul(16, 64, 64, reps, seed)?]),
        "matmul-bert" => Ok(vec![bench_matmul(128, 768, 768, reps, seed)?]),
        "gelu" => Ok(vec![bench_gelu(4096, reps, seed)?]),
        "softmax" => Ok(vec![bench_softmax(64, 128, reps, seed)?]),
        "layernorm" => Ok(vec![bench_layernorm(64, 768, reps, seed)?]),
        "isqrt" => Ok(vec![bench_isqrt(10_000, reps, seed)?]),
        "all" => Ok(vec![
            bench_matmul(16, 64, 64, reps, seed)?,
            bench_gelu(4096, reps, seed)?,
            bench_softmax(64, 128, reps, seed)?,
            bench_layernorm(64, 768, reps, seed)?,
            bench_isqrt(10_000, reps, seed)?,
        ]),
        other => Err(Error::UnknownOp(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_low_repetitions_and_unknown_ops() {
        assert!(matches!(
            microbench("matmul", 10, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            microbench("frobnicate", 30, 0),
            Err(Error::UnknownOp(_))
        ));
    }

    #[test]
    fn rows_carry_op_size_and_timings() {
        let rows = microbench("isqrt", 30, 0).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.op, "isqrt");
        assert!(!r.size.is_empty());
        assert!(r.int_median_ns > 0);
        assert!(r.float_median_ns > 0);
        assert!(r.speedup > 0.0);
    }
}
