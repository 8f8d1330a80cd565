use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn ihi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ihi"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ihi_env(dir: &Path, args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ihi"))
        .current_dir(dir)
        .env("IHI_THREADS", threads)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

/// Parameters, a scene and its noiseless interferogram in `dir`.
fn fixture(dir: &Path) {
    ok(ihi(dir, &["synth-params", "--out", "params"]));
    ok(ihi(dir, &["synth-scene", "--out", "scene.ihic", "--rows", "16", "--cols", "64", "--seed", "3"]));
    ok(ihi(
        dir,
        &[
            "simulate", "--input", "scene.ihic", "--params", "params", "--out", "y.ihic",
            "--deterministic", "--target-rate", "1e4", "--reference-out", "ref.ihic",
        ],
    ));
}

#[test]
fn noiseless_fprime_reports_high_psnr() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path());
    let out = ok(ihi(
        tmp.path(),
        &[
            "--json", "reconstruct", "--input", "y.ihic", "--params", "params", "--out", "x.ihic",
            "--method", "fprime", "--reference", "ref.ihic",
        ],
    ));
    let v = json(&out);
    let p = v["result"]["psnr_db"].as_f64().unwrap_or(f64::INFINITY);
    assert!(p >= 60.0, "{v}");
    assert_eq!(v["config_digest"].as_str().unwrap().len(), 64);
    assert!(tmp.path().join("x.ihic").exists());

    let human = ok(ihi(
        tmp.path(),
        &["reconstruct", "--input", "y.ihic", "--params", "params", "--out", "x.ihic", "--reference", "ref.ihic"],
    ));
    let text = String::from_utf8(human.stdout).unwrap();
    assert!(text.starts_with("config digest"), "{text}");
    assert!(text.contains("PSNR"), "{text}");
}

#[test]
fn missing_params_dir_is_an_io_failure() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path());
    let out = ihi(
        tmp.path(),
        &["reconstruct", "--input", "y.ihic", "--params", "no-such-params", "--out", "x.ihic"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-params"));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["reconstruct", "--bogus"][..],
        &["frobnicate"],
        &["reconstruct", "--input", "a", "--params", "b", "--out", "c", "--prior", "weird"],
        &["reconstruct", "--input", "a", "--params", "b", "--out", "c", "--method", "magic"],
    ] {
        assert_eq!(ihi(tmp.path(), args).status.code(), Some(2), "{args:?}");
    }
    let out = ihi_env(tmp.path(), &["selftest"], "zero");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_four() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ihi(tmp.path(), &["synth-calibration", "--out", "cal", "--rows", "8", "--width", "4"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn selftest_passes_within_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let out = ok(ihi(tmp.path(), &["--json", "selftest"]));
    assert!(t0.elapsed().as_secs_f64() <= 120.0);
    let v = json(&out);
    assert_eq!(v["result"]["failed"], 0);
    assert!(v["result"]["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

fn digest_of(dir: &Path, args: &[&str]) -> String {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    json(&ok(ihi(dir, &full)))["config_digest"].as_str().unwrap().to_owned()
}

#[test]
fn config_digest_tracks_inputs_not_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    let base = ["reconstruct", "--input", "y.ihic", "--params", "params", "--out", "x.ihic"];
    let a = digest_of(d, &base);
    assert_eq!(a, digest_of(d, &base));
    let moved = ["reconstruct", "--input", "y.ihic", "--params", "params", "--out", "other.ihic"];
    assert_eq!(a, digest_of(d, &moved));
    let mut stages = base.to_vec();
    stages.extend(["--method", "unfold", "--stages", "3"]);
    assert_ne!(a, digest_of(d, &stages));

    let sim = |seed: &str| {
        digest_of(d, &["simulate", "--input", "scene.ihic", "--params", "params", "--out", "z.ihic", "--seed", seed])
    };
    assert_eq!(sim("1"), sim("1"));
    assert_ne!(sim("1"), sim("2"));

    ok(ihi(d, &["synth-scene", "--out", "scene.ihic", "--rows", "16", "--cols", "64", "--seed", "4"]));
    ok(ihi(d, &["simulate", "--input", "scene.ihic", "--params", "params", "--out", "y.ihic"]));
    assert_ne!(a, digest_of(d, &base));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    let run = |threads: &str, out: &str| {
        ok(ihi_env(d, &["simulate", "--input", "scene.ihic", "--params", "params", "--out", &format!("y{out}"), "--seed", "9"], threads));
        ok(ihi_env(
            d,
            &[
                "reconstruct", "--input", &format!("y{out}"), "--params", "params", "--out", &format!("x{out}"),
                "--method", "unfold", "--prior", "tv-auto:1", "--background", "dark+background",
            ],
            threads,
        ));
        (fs::read(d.join(format!("y{out}"))).unwrap(), fs::read(d.join(format!("x{out}"))).unwrap())
    };
    assert_eq!(run("1", "1.ihic"), run("4", "4.ihic"));
}

#[test]
fn dataset_and_evaluation_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    fs::create_dir(d.join("src")).unwrap();
    ok(ihi(d, &["synth-scene", "--out", "src/a.ihic", "--rows", "32", "--cols", "64", "--seed", "1"]));
    ok(ihi(d, &["synth-scene", "--out", "src/b.ihic", "--rows", "16", "--cols", "32", "--seed", "2"]));
    let made = json(&ok(ihi(
        d,
        &["--json", "make-dataset", "--sources", "src", "--params", "params", "--out", "ds", "--patch", "16", "--test-sources", "b"],
    )));
    assert_eq!(made["result"]["train"], 8);
    assert_eq!(made["result"]["test"], 1);
    let gt = json(&ok(ihi(d, &["--json", "evaluate", "--dataset", "ds", "--method", "ground-truth", "--report", "r.json"])));
    assert_eq!(gt["result"]["mean_psnr_infinite"], true);
    let stored: Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(stored["digest"], gt["result"]["digest"]);
    let fp = json(&ok(ihi(d, &["--json", "evaluate", "--dataset", "ds", "--method", "fprime"])));
    assert!(fp["result"]["mean_psnr_db"].as_f64().unwrap() > 20.0);
}

#[test]
fn calibration_from_synthetic_captures() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(ihi(d, &["synth-calibration", "--out", "cal", "--truth-out", "truth", "--rows", "256", "--width", "8"]));
    let v = json(&ok(ihi(d, &["--json", "calibrate", "--captures", "cal", "--out", "est", "--truth", "truth", "--report", "cal.json"])));
    for stage in ["dark", "gain", "M", "A_beta"] {
        assert!(v["result"]["stages"][stage]["invalid_count"].is_u64(), "{stage}");
    }
    assert!(d.join("est").is_dir());
    assert!(d.join("cal.json").is_file());
    let missing = ihi(d, &["calibrate", "--captures", "absent", "--out", "est2"]);
    assert_eq!(missing.status.code(), Some(3));
}
