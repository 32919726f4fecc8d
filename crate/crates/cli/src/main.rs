//! Command-line front end: approximation-error tables, curve dumps,
//! coefficient fitting, integer-sqrt verification, the integer encoder demo,
//! and kernel microbenchmarks.
//!
//! Exit codes: 0 on success, 1 when an internal assertion fails, 2 on usage
//! errors.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use intformer_core::encoder::{
    microbench, synth, EncoderDims, EncoderWeights, IntEncoderLayer, ReferenceLayer,
};
use intformer_core::nonlinear::{h_gelu_ref, i_exp_ref, i_gelu_ref, i_sqrt_with_iters};
use intformer_core::oracle::{self, curve_dump, error_report};
use intformer_core::poly::{lsq_fit_erf_for_gelu, lsq_fit_quadratic, FitGrid};
use intformer_core::purity::IntegerOnlyGuard;
use intformer_core::quant::dequantize;
use intformer_core::Error;

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Parser)]
#[command(
    name = "intformer",
    version,
    about = "Integer-only transformer kernel toolbox"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report L2/Linf distances of the GELU and exp approximations
    ApproxError(ApproxArgs),
    /// Dump sampled curves as CSV for external plotting
    Curves(CurvesArgs),
    /// Recover the polynomial coefficients by least squares
    Fit(FitArgs),
    /// Verify the integer square root exhaustively and on random samples
    IsqrtVerify(IsqrtArgs),
    /// Calibrate and run the integer encoder against the FP64 reference
    EncoderDemo(EncoderArgs),
    /// Time integer kernels against their float counterparts
    Microbench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FunctionSet {
    Gelu,
    Exp,
    All,
}

#[derive(Args)]
struct ApproxArgs {
    /// Interval start (GELU table)
    #[arg(long, default_value_t = -4.0)]
    lo: f64,
    /// Interval end (GELU table)
    #[arg(long, default_value_t = 4.0)]
    hi: f64,
    /// Grid points
    #[arg(long, default_value_t = 8001)]
    points: usize,
    /// Which approximations to report
    #[arg(long, value_enum, default_value_t = FunctionSet::All)]
    function: FunctionSet,
    /// Optional CSV output path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurvesArgs {
    /// Which curve family to dump
    #[arg(long, value_enum, default_value_t = FunctionSet::Gelu)]
    function: FunctionSet,
    /// Interval start (defaults depend on the family)
    #[arg(long)]
    lo: Option<f64>,
    /// Interval end
    #[arg(long)]
    hi: Option<f64>,
    /// Grid points
    #[arg(long, default_value_t = 8001)]
    points: usize,
    /// CSV output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Grid points for the fits
    #[arg(long, default_value_t = 10_001)]
    points: usize,
}

#[derive(Args)]
struct IsqrtArgs {
    /// Seed for the random samples
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random 32-bit samples after the exhaustive sweep
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
}

#[derive(Args)]
struct EncoderArgs {
    /// Layer geometry as TxHxhxF
    #[arg(long, default_value = "16x64x4x256")]
    dims: String,
    /// Calibration sample count
    #[arg(long, default_value_t = 128)]
    samples: usize,
    /// Held-out evaluation inputs
    #[arg(long, default_value_t = 32)]
    held_out: usize,
    /// Seed for weights, calibration, and held-out inputs
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark to run: matmul, matmul-bert, gelu, softmax, layernorm, isqrt, all
    #[arg(long, default_value = "all")]
    op: String,
    /// Repetitions per measurement (>= 30)
    #[arg(long, default_value_t = 50)]
    reps: usize,
    /// Seed for benchmark data
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional CSV output path
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::ApproxError(args) => cmd_approx_error(args),
        Command::Curves(args) => cmd_curves(args),
        Command::Fit(args) => cmd_fit(args),
        Command::IsqrtVerify(args) => cmd_isqrt_verify(args),
        Command::EncoderDemo(args) => cmd_encoder_demo(args),
        Command::Microbench(args) => cmd_microbench(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("FAIL: internal assertions did not pass");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) | Error::UnknownOp(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn check_interval(lo: f64, hi: f64, points: usize) -> Result<(), Error> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi || points < 2 {
        return Err(Error::InvalidArgument(format!(
            "invalid interval [{lo}, {hi}] with {points} points"
        )));
    }
    Ok(())
}

fn cmd_approx_error(args: ApproxArgs) -> Result<bool, Error> {
    check_interval(args.lo, args.hi, args.points)?;
    let mut csv_rows: Vec<(String, bool, f64, f64)> = Vec::new();
    let mut ok = true;

    if args.function != FunctionSet::Exp {
        type Row = (&'static str, bool, fn(f64) -> f64);
        let table: Vec<Row> = vec![
            ("x*sigmoid(1.702x)", false, oracle::sigmoid_gelu),
            ("h-GELU", true, oracle::h_gelu),
            ("i-GELU", true, i_gelu_ref),
        ];
        println!(
            "GELU approximation error on [{}, {}], {} points:",
            args.lo, args.hi, args.points
        );
        println!(
            "{:<20} {:<9} {:>12} {:>12}",
            "method", "int-only", "L2", "Linf"
        );
        let mut reports = Vec::new();
        for (name, int_only, f) in &table {
            let r = error_report(f, oracle::gelu, args.lo, args.hi, args.points)?;
            println!(
                "{:<20} {:<9} {:>12.6} {:>12.6}",
                name,
                if *int_only { "yes" } else { "no" },
                r.l2,
                r.linf
            );
            csv_rows.push((name.to_string(), *int_only, r.l2, r.linf));
            reports.push(r);
        }
        // the integer-friendly quadratic should beat both baselines
        let (sig, hg, ig) = (&reports[0], &reports[1], &reports[2]);
        if !(ig.l2 < sig.l2 && sig.l2 < hg.l2) {
            eprintln!("assertion failed: L2 ordering i-GELU < sigmoid < h-GELU");
            ok = false;
        }
        if ig.linf >= hg.linf {
            eprintln!("assertion failed: Linf(i-GELU) < Linf(h-GELU)");
            ok = false;
        }
    }

    if args.function != FunctionSet::Gelu {
        let (lo, hi) = if args.function == FunctionSet::Exp && (args.lo, args.hi) != (-4.0, 4.0) {
            (args.lo, args.hi)
        } else {
            (-10.0, 0.0)
        };
        if hi > 0.0 {
            return Err(Error::InvalidArgument(
                "exp comparison requires hi <= 0".into(),
            ));
        }
        let r = error_report(i_exp_ref, f64::exp, lo, hi, args.points)?;
        println!(
            "exp approximation error on [{lo}, {hi}], {} points:",
            args.points
        );
        println!(
            "{:<20} {:<9} {:>12} {:>12}",
            "method", "int-only", "L2", "Linf"
        );
        println!(
            "{:<20} {:<9} {:>12.6} {:>12.6}",
            "i-exp", "yes", r.l2, r.linf
        );
        csv_rows.push(("i-exp".to_string(), true, r.l2, r.linf));
        if r.linf > 2.0e-3 {
            eprintln!(
                "assertion failed: Linf(i-exp) unexpectedly large: {}",
                r.linf
            );
            ok = false;
        }
    }

    if let Some(path) = args.out {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "method,int_only,l2,linf")?;
        for (name, int_only, l2, linf) in csv_rows {
            writeln!(w, "{name},{int_only},{l2:.12e},{linf:.12e}")?;
        }
    }
    Ok(ok)
}

fn cmd_curves(args: CurvesArgs) -> Result<bool, Error> {
    let (lo_default, hi_default) = match args.function {
        FunctionSet::Exp => (-10.0, 0.0),
        _ => (-4.0, 4.0),
    };
    let lo = args.lo.unwrap_or(lo_default);
    let hi = args.hi.unwrap_or(hi_default);
    check_interval(lo, hi, args.points)?;

    let table = match args.function {
        FunctionSet::Gelu | FunctionSet::All => {
            let fns: Vec<(&str, &dyn Fn(f64) -> f64)> = vec![
                ("relu", &oracle::relu),
                ("gelu", &oracle::gelu),
                ("h_gelu", &h_gelu_ref),
                ("i_gelu", &i_gelu_ref),
            ];
            curve_dump(&fns, lo, hi, args.points)?
        }
        FunctionSet::Exp => {
            if hi > 0.0 {
                return Err(Error::InvalidArgument("exp curves require hi <= 0".into()));
            }
            let exp_fn = |x: f64| x.exp();
            let fns: Vec<(&str, &dyn Fn(f64) -> f64)> =
                vec![("exp", &exp_fn), ("i_exp", &i_exp_ref)];
            curve_dump(&fns, lo, hi, args.points)?
        }
    };

    match args.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            table.write_csv(&mut w)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            table.write_csv(&mut w)?;
        }
    }
    Ok(true)
}

fn rel_dev(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

fn cmd_fit(args: FitArgs) -> Result<bool, Error> {
    if args.points < 3 {
        return Err(Error::InvalidArgument("fit needs at least 3 points".into()));
    }
    let mut ok = true;

    let grid = FitGrid {
        n_points: args.points,
        open_lo: true,
        open_hi: false,
    };
    let e = lsq_fit_quadratic(f64::exp, -LN2, 0.0, &grid)?;
    println!(
        "exp on (-ln2, 0]   : a={:+.6} b={:+.6} c={:+.6}",
        e.a, e.b, e.c
    );
    println!(
        "  reference        : a={:+.6} b={:+.6} c={:+.6}  (rel dev {:.4}, {:.4}, {:.4})",
        0.3585,
        1.353,
        0.344,
        rel_dev(e.a, 0.3585),
        rel_dev(e.b, 1.353),
        rel_dev(e.c, 0.344)
    );
    if rel_dev(e.a, 0.3585) > 0.02 || rel_dev(e.b, 1.353) > 0.02 || rel_dev(e.c, 0.344) > 0.02 {
        eprintln!("assertion failed: exp fit drifted beyond 2% of the reference constants");
        ok = false;
    }

    let g = lsq_fit_erf_for_gelu(4.0, args.points)?;
    println!(
        "erf (GELU-space)   : a={:+.6} b={:+.6} c={:+.6}",
        g.a, g.b, g.c
    );
    println!(
        "  reference        : a={:+.6} b={:+.6} c={:+.6}  (rel dev {:.4}, {:.4})",
        -0.2888,
        -1.769,
        1.0,
        rel_dev(g.a, -0.2888),
        rel_dev(g.b, -1.769)
    );
    if rel_dev(g.b, -1.769) > 0.02 || rel_dev(g.a, -0.2888) > 0.02 {
        eprintln!("assertion failed: erf fit drifted beyond 2% of the reference constants");
        ok = false;
    }
    Ok(ok)
}

fn cmd_isqrt_verify(args: IsqrtArgs) -> Result<bool, Error> {
    let mut failures = 0u64;
    let mut max_iters = 0u32;
    let mut check = |n: i64| -> Result<(), Error> {
        let (r, iters) = i_sqrt_with_iters(n)?;
        max_iters = max_iters.max(iters);
        if !(r * r <= n && n < (r + 1) * (r + 1)) {
            failures += 1;
        }
        Ok(())
    };
    for n in 0..=(1i64 << 20) {
        check(n)?;
    }
    let randoms = synth::random_codes(args.samples, 0, i32::MAX, args.seed);
    for v in randoms {
        check(v as i64)?;
    }
    println!(
        "isqrt: exhaustive [0, 2^20] plus {} random 32-bit samples (seed {})",
        args.samples, args.seed
    );
    println!("  correctness failures: {failures}");
    println!("  max Newton updates observed: {max_iters} (hard cap 64)");
    Ok(failures == 0 && max_iters <= 64)
}

fn parse_dims(s: &str) -> Result<EncoderDims, Error> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad dims {s:?}, expected TxHxhxF")))?;
    if parts.len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "bad dims {s:?}, expected TxHxhxF"
        )));
    }
    EncoderDims::new(parts[0], parts[1], parts[2], parts[3])
}

fn cmd_encoder_demo(args: EncoderArgs) -> Result<bool, Error> {
    let dims = parse_dims(&args.dims)?;
    if args.samples == 0 || args.held_out == 0 {
        return Err(Error::InvalidArgument(
            "need at least one calibration and one held-out sample".into(),
        ));
    }
    let weights = synth::random_weights(&dims, args.seed);
    let calib = synth::random_inputs(&dims, args.samples, args.seed.wrapping_add(1));
    let held_out = synth::random_inputs(&dims, args.held_out, args.seed.wrapping_add(2));

    let qw = EncoderWeights::quantize(&weights, &calib)?;
    let reference = ReferenceLayer::from_quantized(&qw);
    let layer = IntEncoderLayer::new(qw)?;

    let mut worst_rel = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut sum_rel = 0.0f64;
    let mut float_uses = 0u64;
    for x in &held_out {
        let xq = layer.quantize_input(x)?;
        let guard = IntegerOnlyGuard::new();
        let out = layer.forward(&xq)?;
        float_uses += guard.float_uses();
        drop(guard);

        let got = dequantize(&out);
        let want = reference.forward(&dequantize(&xq))?;
        let num: f64 = got.iter().zip(&want).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = want.iter().map(|v| v * v).sum();
        let rel = (num / den).sqrt();
        let abs = got
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_rel = worst_rel.max(rel);
        worst_abs = worst_abs.max(abs);
        sum_rel += rel;
    }
    println!(
        "encoder demo: dims {}x{}x{}x{}, {} calibration samples, {} held-out, seed {}",
        dims.seq, dims.hidden, dims.heads, dims.ffn, args.samples, args.held_out, args.seed
    );
    println!(
        "  relative L2 vs FP64 reference: mean {:.5}, worst {:.5}",
        sum_rel / held_out.len() as f64,
        worst_rel
    );
    println!("  max absolute deviation: {worst_abs:.5}");
    println!("  float uses inside the integer path: {float_uses}");
    Ok(worst_rel <= 5e-2 && float_uses == 0)
}

fn cmd_microbench(args: BenchArgs) -> Result<bool, Error> {
    let rows = microbench(&args.op, args.reps, args.seed)?;
    println!(
        "{:<12} {:<14} {:>14} {:>14} {:>9}",
        "op", "size", "int median ns", "fp median ns", "speedup"
    );
    for r in &rows {
        println!(
            "{:<12} {:<14} {:>14} {:>14} {:>9.2}",
            r.op, r.size, r.int_median_ns, r.float_median_ns, r.speedup
        );
    }
    if let Some(path) = args.out {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "op,size,int_median_ns,float_median_ns,speedup")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{:.6}",
                r.op, r.size, r.int_median_ns, r.float_median_ns, r.speedup
            )?;
        }
    }
    Ok(true)
}
