use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
model = "ma2"
extractor = "autocorr"
n_s = 256
rounds = 1
sims_per_round = 100
batch_size = 50
max_epochs = 2
eval_batches = 2
eval_per_batch = 10
grid_resolution = 21
seed = 1
"#;

fn yulenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_yulenet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn malformed_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "seed = 1\nroundz = 3\n");
    let out = yulenet(&["simulate", "--config", &cfg, "--count", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("roundz") && err.contains("line 2"), "{err}");
}

#[test]
fn missing_config_exits_with_code_2() {
    let out = yulenet(&["infer", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_budget_override_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ok.toml", SMALL);
    let out = yulenet(&["infer", "--config", &cfg, "--budget-override", "3by100"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_then_infer_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ok.toml", SMALL);
    let sims = dir.path().join("sims");
    let out = yulenet(&[
        "simulate",
        "--config",
        &cfg,
        "--count",
        "0",
        "--out",
        sims.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(sims.join("manifest.json").exists());

    let run = dir.path().join("run");
    let run = run.to_str().unwrap();
    let out = yulenet(&["infer", "--config", &cfg, "--out", run, "--seed", "4"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = yulenet(&["evaluate", "--out", run, "--order", "1"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut lines = stdout.lines();
    assert_eq!(
        lines.next(),
        Some("extractor,model,budget,mean,stderr,floor")
    );
    assert!(lines.next().unwrap().starts_with("autocorr,ma2,100,"));
}

#[test]
fn evaluating_a_vdp_run_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("\"ma2\"", "\"vdp\"") + "theta0 = [1.0, 0.5]\n";
    let cfg = write(dir.path(), "vdp.toml", &text);
    let run = dir.path().join("run");
    let run = run.to_str().unwrap();
    assert!(
        yulenet(&["infer", "--config", &cfg, "--out", run])
            .status
            .success()
    );
    let out = yulenet(&["evaluate", "--out", run]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reference"));
}
