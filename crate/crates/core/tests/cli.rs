mod common;

use std::process::{Command, Output};

fn kerngen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kerngen")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn ai_prints_the_running_example() {
    let o = kerngen(&["ai", "--op", "conv1 in=Y:X:C=205:205:3 OC=96 KSZ=7 stride=2 pad=0"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("out         Y:X:C=100:100:96"), "{text}");
    assert!(text.contains("inmat       M:K=10000:147"));
    assert!(text.contains("sgemm AI 28.8694"));
}

#[test]
fn gen_prints_source_and_verifies() {
    let o = kerngen(&["gen", "--op", "c in=Y:X:C=12:12:4 OC=8 KSZ=3 pad=same bias=1", "--variant", "tconv", "--verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("kernel void tconv("));
    assert!(String::from_utf8_lossy(&o.stderr).contains("verification: pass"));
}

#[test]
fn gen_honours_variant_and_emit_dir() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = kerngen(&["gen", "--op", "pw in=Y:X:C=8:8:8 OC=8 KSZ=1", "--machine", "mobile-simd", "--emit-dir", d]);
    assert!(o.status.success());
    let ir = std::fs::read_to_string(dir.path().join("pw.k1conv_simd.ir.json")).unwrap();
    assert!(ir.trim_start().starts_with('['));
    assert!(dir.path().join("pw.k1conv_simd.cl").exists());
    let o = kerngen(&["gen", "--op", "pw in=Y:X:C=8:8:8 OC=8 KSZ=1", "--variant", "tconv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_report_kernels_and_counters() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("mini.json");
    let suite = common::data("suites/mini.suite");
    let machine = common::data("machines/generic_gpu.json");
    let o = kerngen(&[
        "sweep",
        "--suite",
        suite.to_str().unwrap(),
        "--machine",
        machine.to_str().unwrap(),
        "--format",
        "json",
        "--out",
        report.to_str().unwrap(),
        "--emit-dir",
        dir.path().to_str().unwrap(),
        "--counters",
        "--strict",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 13);
    for stem in ["k1.b1.k1conv", "t3.b2.tconv", "fixed.b3.conv"] {
        for ext in ["cl", "ir.json", "counters.json"] {
            assert!(dir.path().join(format!("{stem}.{ext}")).exists(), "{stem}.{ext}");
        }
    }
}

#[test]
fn sweep_csv_matches_library_golden() {
    let suite = common::data("suites/mini.suite");
    let o = kerngen(&["sweep", "--suite", suite.to_str().unwrap(), "--jobs", "2"]);
    assert!(o.status.success());
    let golden = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/mini_suite.csv")).unwrap();
    assert_eq!(stdout(&o), golden);
}

#[test]
fn bad_inputs_exit_nonzero() {
    let o = kerngen(&["sweep", "--suite", "/nonexistent.suite"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent.suite"));
    let o = kerngen(&["ai", "--op", "x in=Y:X:C=4:4:1 KSZ=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing OC="));
    let tune = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(tune.path(), r#"{"k1": {"Mt": 99}}"#).unwrap();
    let suite = common::data("suites/mini.suite");
    let o = kerngen(&["sweep", "--suite", suite.to_str().unwrap(), "--tune", tune.path().to_str().unwrap(), "--strict"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Mt=99"));
}
