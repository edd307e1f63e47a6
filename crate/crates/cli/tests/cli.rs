use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fedcom_cli::config::load_document;
use serde_json::Value;
use tempfile::TempDir;

fn fedcom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedcom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_writes_one_row_per_round() {
    let tmp = TempDir::new().unwrap();
    let out_dir = path(tmp.path(), "run");
    let out = fedcom(&["run", "--output", &out_dir, "--set", "algorithm.rounds=10"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let trace = fs::read_to_string(tmp.path().join("run/trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0], "round,f,subopt,grad_norm_sq,uplink_bits,downlink_bits,gq,wall_ms");
    assert!(lines[1].starts_with("0,"));
    assert!(lines[10].starts_with("9,"));
    assert!(tmp.path().join("run/problem.json").exists());
}

#[test]
fn override_is_reflected_in_spec_json() {
    let tmp = TempDir::new().unwrap();
    let out_dir = path(tmp.path(), "run");
    let out = fedcom(&[
        "run",
        "--output",
        &out_dir,
        "--set",
        "algorithm.rounds=5",
        "--set",
        "algorithm.gamma=1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let spec = read_json(&tmp.path().join("run/spec.json"));
    assert_eq!(spec["config"]["algorithm"]["gamma"], Value::from(1.0));
    assert_eq!(spec["effective_eta"], Value::from(0.01));
    assert_eq!(spec["spec_hash"].as_str().unwrap().len(), 64);

    let out = fedcom(&["run", "--output", &out_dir, "--set", "algorithm.rounds=5", "--set", "algorithm.gamma=2.5"]);
    assert_eq!(code(&out), 0);
    let changed = read_json(&tmp.path().join("run/spec.json"));
    assert_eq!(changed["config"]["algorithm"]["gamma"], Value::from(2.5));
    assert_ne!(changed["spec_hash"], spec["spec_hash"]);
}

#[test]
fn zero_sample_ratio_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out_dir = path(tmp.path(), "run");
    let out = fedcom(&[
        "run",
        "--output",
        &out_dir,
        "--set",
        "algorithm.variant=fedcomgate-sampled",
        "--set",
        "algorithm.sample_ratio=0",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("sample_ratio"), "{}", stderr(&out));
    assert!(!tmp.path().join("run/trace.csv").exists());
}

#[test]
fn bad_inputs_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let missing = path(tmp.path(), "missing.json");
    let out = fedcom(&["run", "--config", &missing]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("missing.json"));

    let malformed = tmp.path().join("bad.json");
    fs::write(&malformed, "{ not json").unwrap();
    let out = fedcom(&["run", "--config", malformed.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("malformed JSON"));

    let unknown = tmp.path().join("unknown.json");
    fs::write(&unknown, r#"{"algorithm": {"learning_rate": 0.1}}"#).unwrap();
    let out = fedcom(&["run", "--config", unknown.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("algorithm.learning_rate"));

    let out = fedcom(&["run", "--set", "algorithm.stepsize=1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("algorithm.stepsize"));

    let out = fedcom(&["run", "--set", "algorithm.variant=fedavg"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("algorithm.variant"));
}

#[test]
fn divergence_exits_with_three_naming_the_round() {
    let tmp = TempDir::new().unwrap();
    let out_dir = path(tmp.path(), "run");
    let out = fedcom(&["run", "--output", &out_dir, "--set", "algorithm.eta=1", "--set", "algorithm.rounds=5000"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("round"), "{}", stderr(&out));
}

#[test]
fn print_config_then_run_is_idempotent() {
    let tmp = TempDir::new().unwrap();
    let out = fedcom(&["print-config", "--set", "algorithm.rounds=7", "--set", "seed=3"]);
    assert_eq!(code(&out), 0);
    let printed = stdout(&out);
    let config = tmp.path().join("config.json");
    fs::write(&config, &printed).unwrap();
    let config_arg = config.to_str().unwrap();

    // Every default is spelled out, and re-printing changes nothing.
    let doc: Value = serde_json::from_str(&printed).unwrap();
    assert!(doc["algorithm"]["preset"].is_null());
    assert_eq!(doc["cadence"]["gq_samples"], Value::from(64));
    let again = fedcom(&["print-config", "--config", config_arg]);
    assert_eq!(stdout(&again), printed);

    let out_dir = path(tmp.path(), "run");
    let run = fedcom(&["run", "--config", config_arg, "--output", &out_dir]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let spec = read_json(&tmp.path().join("run/spec.json"));
    let expected = load_document(Some(&config), &[]).unwrap().spec().hash();
    assert_eq!(spec["spec_hash"], Value::from(expected.clone()));
    assert!(stdout(&run).contains(&expected));

    let direct = fedcom(&["run", "--set", "algorithm.rounds=7", "--set", "seed=3", "--output", &out_dir]);
    assert!(stdout(&direct).contains(&expected));
}

#[test]
fn measure_q_prints_the_distortion() {
    let tmp = TempDir::new().unwrap();
    let out_dir = path(tmp.path(), "q");
    let out = fedcom(&["measure", "q", "--output", &out_dir]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), "0.0");

    let out = fedcom(&[
        "measure",
        "q",
        "--output",
        &out_dir,
        "--set",
        "problem.dim=8",
        "--set",
        r#"algorithm.compressor={"kind":"rand-k","k":2}"#,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let q: f64 = stdout(&out).trim().parse().unwrap();
    assert!((q - 3.0).abs() <= 0.15, "{q}");
    let record = read_json(&tmp.path().join("q/q.json"));
    assert_eq!(record["declared_q"], Value::from(3.0));
}

#[test]
fn measure_heatmap_homogeneous_is_all_ones() {
    let tmp = TempDir::new().unwrap();
    let out_dir = path(tmp.path(), "h");
    let out = fedcom(&["measure", "heatmap", "--output", &out_dir]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(tmp.path().join("h/heatmap.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 10);
    for row in &rows {
        assert_eq!(row.len(), 10);
        assert!(row.iter().all(|v| (v - 1.0).abs() <= 1e-12));
    }

    let out = fedcom(&["measure", "heatmap", "--output", &out_dir, "--set", "problem.hetero_level=1"]);
    assert_eq!(code(&out), 0);
    let line = stdout(&out);
    let mean: f64 = line.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(mean < 0.5, "{line}");
}

#[test]
fn measure_heatmap_with_a_zero_gradient_exits_three() {
    // In one dimension every homogeneous client's optimum is exactly +-1,
    // where the local gradient vanishes exactly.
    let tmp = TempDir::new().unwrap();
    let out_dir = path(tmp.path(), "h");
    let base = ["--output", &out_dir, "--set", "problem.dim=1", "--set", "problem.clients=3"];
    let out = fedcom(&[&["measure", "heatmap"][..], &base].concat());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let problem = read_json(&tmp.path().join("h/problem.json"));
    let client = &problem["objectives"]["clients"][0];
    let target = client["b"][0].as_f64().unwrap() / client["a"][0].as_f64().unwrap();
    assert_eq!(target.abs(), 1.0);

    let point = format!("measure.heatmap_point=[{target:?}]");
    let out = fedcom(&[&["measure", "heatmap"][..], &base, &["--set", &point]].concat());
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("client 0"), "{}", stderr(&out));

    let bad = fedcom(&[&["measure", "heatmap"][..], &base, &["--set", "measure.heatmap_point=[1, 2]"]].concat());
    assert_eq!(code(&bad), 2);
}

#[test]
fn measure_gq_writes_a_series() {
    let tmp = TempDir::new().unwrap();
    let out_dir = path(tmp.path(), "gq");
    let out = fedcom(&[
        "measure",
        "gq",
        "--output",
        &out_dir,
        "--set",
        "algorithm.rounds=30",
        "--set",
        "problem.hetero_level=1",
        "--set",
        r#"algorithm.compressor={"kind":"stochastic-quantizer","bits":4}"#,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(tmp.path().join("gq/gq.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "round,gq");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,"));
    assert!(lines[3].starts_with("20,"));
}

#[test]
fn unknown_figure_exits_two() {
    let out = fedcom(&["repro", "fig3"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("fig3"));
}

#[test]
fn repro_writes_artifacts_and_verdicts() {
    let tmp = TempDir::new().unwrap();
    let out_dir = path(tmp.path(), "repro");
    let expected: [(&str, &[&str]); 4] = [
        ("fig1", &["gq.csv", "fedcomgate.csv"]),
        ("fig2", &["fedcom.csv", "fedcomgate.csv"]),
        ("fig6", &["sparse-memory.csv", "fedgate.csv"]),
        ("fig7", &["heatmap-homogeneous.csv", "heatmap-heterogeneous.csv"]),
    ];
    for (figure, files) in expected {
        let out = fedcom(&["repro", figure, "--output", &out_dir, "--workers", "2"]);
        assert_eq!(code(&out), 0, "{figure}: {}{}", stdout(&out), stderr(&out));
        assert!(stdout(&out).starts_with(&format!("{figure}: PASS")));
        let dir = tmp.path().join("repro").join(figure);
        for f in files {
            assert!(dir.join(f).exists(), "{figure}: missing {f}");
        }
        let verdict = read_json(&dir.join("verdict.json"));
        assert_eq!(verdict["verdict"], Value::from("PASS"));
    }
}

#[test]
fn worker_count_does_not_change_trace_bytes() {
    let tmp = TempDir::new().unwrap();
    let mut traces = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "4"), ("c", "1")] {
        let out_dir = path(tmp.path(), name);
        let out = fedcom(&[
            "run",
            "--output",
            &out_dir,
            "--workers",
            workers,
            "--set",
            "problem.hetero_level=1",
            "--set",
            "algorithm.rounds=40",
            "--set",
            r#"algorithm.compressor={"kind":"stochastic-quantizer","bits":4}"#,
            "--set",
            r#"algorithm.batch={"batch_size":2,"noise":{"model":"additive-gaussian","sigma":0.5}}"#,
            "--set",
            "cadence.gq_every=5",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        traces.push(fs::read(tmp.path().join(name).join("trace.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
    assert_eq!(traces[0], traces[2]);
}
