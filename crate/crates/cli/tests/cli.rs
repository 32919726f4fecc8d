//! End-to-end checks of the command-line surface: exit codes, output
//! formats, and byte-identical reruns.

use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intformer"))
        .args(args)
        .output()
        .expect("binary should run")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn approx_error_reports_the_reference_table() {
    let out = run(&["approx-error"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("i-GELU"));
    assert!(text.contains("h-GELU"));
    assert!(text.contains("x*sigmoid(1.702x)"));
    assert!(text.contains("i-exp"));
}

#[test]
fn approx_error_rejects_a_bad_interval() {
    let out = run(&["approx-error", "--lo", "4", "--hi", "-4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn curves_emit_the_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curves.csv");
    let out = run(&[
        "curves",
        "--function",
        "gelu",
        "--points",
        "101",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x,relu,gelu,h_gelu,i_gelu");
    assert_eq!(lines.count(), 101);
}

#[test]
fn curves_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = run(&[
            "curves",
            "--function",
            "exp",
            "--points",
            "501",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn fit_prints_coefficients_and_passes() {
    let out = run(&["fit", "--points", "4001"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("exp on (-ln2, 0]"));
    assert!(text.contains("erf (GELU-space)"));
}

#[test]
fn isqrt_verify_reports_zero_failures() {
    let out = run(&["isqrt-verify", "--samples", "20000"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("correctness failures: 0"));
    assert!(text.contains("max Newton updates"));
}

#[test]
fn encoder_demo_is_deterministic_and_passes() {
    let args = [
        "encoder-demo",
        "--dims",
        "4x16x2x32",
        "--samples",
        "16",
        "--held-out",
        "4",
        "--seed",
        "3",
    ];
    let out1 = run(&args);
    assert!(
        out1.status.success(),
        "{}",
        String::from_utf8_lossy(&out1.stderr)
    );
    let text = stdout(&out1);
    assert!(text.contains("relative L2"));
    assert!(text.contains("float uses inside the integer path: 0"));
    let out2 = run(&args);
    assert_eq!(stdout(&out1), stdout(&out2));
}

#[test]
fn encoder_demo_rejects_bad_dims() {
    let out = run(&["encoder-demo", "--dims", "4x10x3x8"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["encoder-demo", "--dims", "4x16"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn microbench_emits_csv_and_enforces_repetitions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.csv");
    let out = run(&[
        "microbench",
        "--op",
        "isqrt",
        "--reps",
        "30",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("op,size,int_median_ns,float_median_ns,speedup"));
    assert_eq!(text.lines().count(), 2);

    let out = run(&["microbench", "--op", "isqrt", "--reps", "5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["microbench", "--op", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}
