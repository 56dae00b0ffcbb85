//! End-to-end tests running the built binary against fixture files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_qbass")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qbass-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const TWO_POINT: &str = r#"{"d": 1, "atoms": [[-1.0], [1.0]], "weights": [0.5, 0.5]}"#;

#[test]
fn mcov_fixture_prints_value_one() {
    let dir = tempdir("mcov");
    write(&dir, "a.json", r#"{"d": 1, "atoms": [[0.0], [2.0]], "weights": [0.5, 0.5]}"#);
    write(&dir, "b.json", TWO_POINT);
    let out = run_in(&dir, &["mcov", "a.json", "b.json"]);
    let v = stdout_json(&out);
    assert_eq!(v["command"], "mcov");
    assert_eq!(v["result"]["value"].as_f64().unwrap(), 1.0);
}

#[test]
fn check_order_failure_exits_one_with_message() {
    let dir = tempdir("order");
    write(&dir, "mu.json", TWO_POINT);
    write(&dir, "nu.json", r#"{"d": 1, "atoms": [[0.0]], "weights": [1.0]}"#);
    let out = run_in(&dir, &["check-order", "mu.json", "nu.json"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("not in convex order"), "stderr: {stderr}");
}

#[test]
fn schema_violations_exit_two() {
    let dir = tempdir("schema");
    write(
        &dir,
        "bad.json",
        r#"{"d": 1, "atoms": [[0.0]], "weights": [1.0], "extra": true}"#,
    );
    write(&dir, "ok.json", TWO_POINT);
    let out = run_in(&dir, &["mcov", "bad.json", "ok.json"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run_in(&dir, &["mcov", "missing.json", "ok.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quantize_gaussian_moments() {
    let dir = tempdir("quantize");
    let out = run_in(&dir, &["quantize-gaussian", "--m", "100", "--sigma", "1"]);
    let v = stdout_json(&out);
    let atoms = v["result"]["atoms"].as_array().unwrap();
    let weights = v["result"]["weights"].as_array().unwrap();
    assert_eq!(atoms.len(), 100);
    let m2: f64 = atoms
        .iter()
        .zip(weights)
        .map(|(a, w)| {
            let x = a[0].as_f64().unwrap();
            x * x * w.as_f64().unwrap()
        })
        .sum();
    // Mid-cell quantile quantization undershoots by 1.27e-2 at m = 100.
    assert!((m2 - 1.0).abs() < 2e-2, "second moment {m2}");
}

#[test]
fn output_is_byte_deterministic() {
    let dir = tempdir("determinism");
    write(&dir, "mu.json", r#"{"d": 1, "atoms": [[0.0]], "weights": [1.0]}"#);
    write(&dir, "nu.json", TWO_POINT);
    write(&dir, "q.json", TWO_POINT);
    write(
        &dir,
        "inst.json",
        r#"{"schema": 1,
            "mu": {"d": 1, "atoms": [[0.0]], "weights": [1.0]},
            "nu": {"d": 1, "atoms": [[-1.0], [1.0]], "weights": [0.5, 0.5]},
            "q": {"d": 1, "atoms": [[-1.0], [1.0]], "weights": [0.5, 0.5]}}"#,
    );
    let a = run_in(&dir, &["solve-primal", "inst.json"]);
    let b = run_in(&dir, &["solve-primal", "inst.json"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout, "identical runs must be byte-identical");

    // Key reordering leaves the input digest unchanged.
    write(
        &dir,
        "inst2.json",
        r#"{"q": {"d": 1, "atoms": [[-1.0], [1.0]], "weights": [0.5, 0.5]},
            "nu": {"d": 1, "atoms": [[-1.0], [1.0]], "weights": [0.5, 0.5]},
            "mu": {"d": 1, "atoms": [[0.0]], "weights": [1.0]},
            "schema": 1}"#,
    );
    let c = run_in(&dir, &["solve-primal", "inst2.json"]);
    let va = stdout_json(&a);
    let vc = stdout_json(&c);
    assert_eq!(va["input_digest"], vc["input_digest"]);

    // --timing adds wall time and is documented to break determinism.
    let t = run_in(&dir, &["solve-primal", "inst.json", "--timing"]);
    let vt = stdout_json(&t);
    assert!(vt["wall_time_ms"].is_number());
}

#[test]
fn solve_primal_and_dual_agree() {
    let dir = tempdir("duality");
    write(
        &dir,
        "inst.json",
        r#"{"schema": 1,
            "mu": {"d": 1, "atoms": [[-1.0], [1.0]], "weights": [0.5, 0.5]},
            "nu": {"d": 1, "atoms": [[-2.0], [0.0], [2.0]], "weights": [0.25, 0.5, 0.25]},
            "q": {"d": 1, "atoms": [[-1.0], [1.0]], "weights": [0.5, 0.5]}}"#,
    );
    let p = stdout_json(&run_in(&dir, &["solve-primal", "inst.json"]));
    let d = stdout_json(&run_in(&dir, &["solve-dual", "inst.json"]));
    let pv = p["result"]["value"].as_f64().unwrap();
    let dv = d["result"]["value"].as_f64().unwrap();
    assert!((pv - 1.0).abs() < 1e-9, "primal {pv}");
    assert!((pv - dv).abs() < 1e-4, "primal {pv} vs dual {dv}");
    assert!(d["result"]["gap"].as_f64().unwrap() < 1e-4);
}

#[test]
fn bass_pipeline_through_files() {
    let dir = tempdir("pipeline");
    write(
        &dir,
        "inst.json",
        r#"{"schema": 1,
            "mu": {"d": 1, "atoms": [[-0.5], [0.5]], "weights": [0.5, 0.5]},
            "q": {"d": 1, "atoms": [[-1.0], [1.0]], "weights": [0.5, 0.5]},
            "potential": {"type": "smooth_quad_lse", "epsilon": 1.0, "beta": 0.01,
                          "slopes": [[0.0]], "intercepts": [0.0]}}"#,
    );
    let out = run_in(&dir, &["build-bass", "inst.json", "--out", "pair.json"]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let built: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("pair.json")).unwrap()).unwrap();
    let nu = built["result"]["nu"].clone();
    // Quadratic generator with centered q: nu = mu conv q on 4 atoms.
    assert_eq!(nu["atoms"].as_array().unwrap().len(), 4);

    // Assemble the verification instance from the emitted nu.
    let verify_inst = format!(
        r#"{{"schema": 1,
            "mu": {{"d": 1, "atoms": [[-0.5], [0.5]], "weights": [0.5, 0.5]}},
            "nu": {nu},
            "q": {{"d": 1, "atoms": [[-1.0], [1.0]], "weights": [0.5, 0.5]}}}}"#,
    );
    write(&dir, "verify.json", &verify_inst);
    let v = stdout_json(&run_in(
        &dir,
        &["verify-bass", "pair.json", "verify.json", "--tol", "1e-7"],
    ));
    assert_eq!(v["result"]["pass"], true, "verify: {v}");

    // Simulation reads the same pair file; seeds are reproducible.
    let s1 = run_in(
        &dir,
        &["simulate", "pair.json", "verify.json", "--paths", "200", "--seed", "9", "--format", "csv"],
    );
    let s2 = run_in(
        &dir,
        &["simulate", "pair.json", "verify.json", "--paths", "200", "--seed", "9", "--format", "csv"],
    );
    assert!(s1.status.success());
    assert_eq!(s1.stdout, s2.stdout);
    let text = String::from_utf8_lossy(&s1.stdout);
    assert!(text.starts_with("a,z,x0,x1\n"));
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn fixpoint_dirac_fixture_converges() {
    let dir = tempdir("fixpoint");
    // Build the reference measure with the quantizer itself; an even m is
    // needed so mass can split evenly across the step map.
    let out = run_in(
        &dir,
        &["quantize-gaussian", "--m", "20", "--out", "q.json"],
    );
    assert!(out.status.success());
    let q: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("q.json")).unwrap()).unwrap();
    let inst = format!(
        r#"{{"schema": 1,
            "mu": {{"d": 1, "atoms": [[0.0]], "weights": [1.0]}},
            "nu": {{"d": 1, "atoms": [[-1.0], [1.0]], "weights": [0.5, 0.5]}},
            "q": {}}}"#,
        q["result"]
    );
    write(&dir, "inst.json", &inst);
    let out = stdout_json(&run_in(&dir, &["fixpoint", "inst.json", "--max-iter", "200"]));
    assert_eq!(out["result"]["converged"], true, "{out}");
    assert!(out["result"]["pair"]["v_hat"]["type"] == "smooth_quad_lse");
}

#[test]
fn plot_emits_svg() {
    let dir = tempdir("plot");
    write(&dir, "a.json", TWO_POINT);
    write(&dir, "b.json", TWO_POINT);
    let out = run_in(
        &dir,
        &["mcov", "a.json", "b.json", "--plot", "chart.svg"],
    );
    assert!(out.status.success());
    let svg = std::fs::read_to_string(dir.join("chart.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("rect"));
}

#[test]
fn csv_format_for_couplings() {
    let dir = tempdir("csv");
    write(&dir, "a.json", r#"{"d": 1, "atoms": [[0.0], [2.0]], "weights": [0.5, 0.5]}"#);
    write(&dir, "b.json", TWO_POINT);
    let out = run_in(&dir, &["mcov", "a.json", "b.json", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("i,j,mass"));
    assert!(lines.next().unwrap().starts_with("0,0,"));

    // Commands without a tabular payload reject csv.
    let out = run_in(&dir, &["irreducible", "b.json", "b.json", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_rejected() {
    let dir = tempdir("config");
    write(
        &dir,
        "inst.json",
        r#"{"schema": 1,
            "mu": {"d": 1, "atoms": [[0.0]], "weights": [1.0]},
            "nu": {"d": 1, "atoms": [[-1.0], [1.0]], "weights": [0.5, 0.5]},
            "q": {"d": 1, "atoms": [[-1.0], [1.0]], "weights": [0.5, 0.5]},
            "config": {"tol": -1.0}}"#,
    );
    let out = run_in(&dir, &["fixpoint", "inst.json"]);
    assert_eq!(out.status.code(), Some(2));

    write(
        &dir,
        "inst2.json",
        r#"{"schema": 7,
            "mu": {"d": 1, "atoms": [[0.0]], "weights": [1.0]},
            "q": {"d": 1, "atoms": [[-1.0], [1.0]], "weights": [0.5, 0.5]}}"#,
    );
    let out = run_in(&dir, &["solve-primal", "inst2.json"]);
    assert_eq!(out.status.code(), Some(2));
}
