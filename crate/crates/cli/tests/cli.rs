use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn statseek(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_statseek"))
        .args(args)
        .env("STATSEEK_LOG", "error")
        .output()
        .expect("binary runs")
}

fn bundled(name: &str) -> String {
    configs().join(format!("{name}.json")).to_string_lossy().into_owned()
}

fn write_config(dir: &TempDir, name: &str, body: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn out(dir: &TempDir, sub: &str) -> String {
    dir.path().join(sub).to_string_lossy().into_owned()
}

fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_bundled_quadratic10_converges() {
    let dir = TempDir::new().unwrap();
    let o = statseek(&["run", "--config", &bundled("quadratic10"), "--out", &out(&dir, "q")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let verdict = json(dir.path().join("q/verdict.json"));
    assert_eq!(verdict["converged"], true);
    let header = fs::read_to_string(dir.path().join("q/trace.csv")).unwrap();
    let header = header.lines().next().unwrap();
    assert!(header.starts_with("k,phase,x_hat_1,"));
    assert!(header.contains(",residual,theta_norm_1,"));
    assert!(header.contains(",lambda_min_H,flags"));
}

#[test]
fn malformed_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(&dir, "bad.json", "{\"game\": \"quadratic10\", \"K\": ");
    assert_eq!(statseek(&["run", "--config", &bad, "--out", &out(&dir, "x")]).status.code(), Some(2));
    let unknown = write_config(&dir, "unknown.json", r#"{"game":"quadratic10","K":10,"colour":1}"#);
    assert_eq!(statseek(&["run", "--config", &unknown, "--out", &out(&dir, "y")]).status.code(), Some(2));
    let missing = dir.path().join("nope.json").to_string_lossy().into_owned();
    assert_eq!(statseek(&["run", "--config", &missing, "--out", &out(&dir, "z")]).status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_trace() {
    let dir = TempDir::new().unwrap();
    for sub in ["a", "b"] {
        let o = statseek(&["run", "--config", &bundled("internet"), "--seed", "7", "--out", &out(&dir, sub)]);
        assert!(o.status.success());
    }
    let a = fs::read(dir.path().join("a/trace.csv")).unwrap();
    let b = fs::read(dir.path().join("b/trace.csv")).unwrap();
    assert_eq!(a, b);
    statseek(&["run", "--config", &bundled("internet"), "--seed", "8", "--out", &out(&dir, "c")]);
    assert_ne!(a, fs::read(dir.path().join("c/trace.csv")).unwrap());
}

#[test]
fn sweep_writes_full_grid() {
    let dir = TempDir::new().unwrap();
    let o = statseek(&["sweep", "--config", &bundled("hyper_quadratic10"), "--out", &out(&dir, "s")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let grid = fs::read_to_string(dir.path().join("s/grid.csv")).unwrap();
    let mut lines = grid.lines();
    assert_eq!(lines.next(), Some("beta,K_in,k,mean_residual"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20 * 100);
    let cells: std::collections::BTreeSet<(&str, &str)> = rows
        .iter()
        .map(|r| {
            let mut f = r.split(',');
            (f.next().unwrap(), f.next().unwrap())
        })
        .collect();
    assert_eq!(cells.len(), 20);
}

#[test]
fn sweep_with_empty_grid_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "empty.json",
        r#"{"game":"quadratic10","K":20,"sweep":{"beta":[],"k_in_fraction":[0.1]}}"#,
    );
    assert_eq!(statseek(&["sweep", "--config", &cfg, "--out", &out(&dir, "e")]).status.code(), Some(2));
}

#[test]
fn single_cell_sweep_equals_run_residuals() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "one.json",
        r#"{"game":"quadratic10","K":40,"K_in":10,"alpha":1e9,"early_stop":false,
            "sweep":{"beta":[1.0],"k_in_fraction":[0.25],"reps":1}}"#,
    );
    assert!(statseek(&["run", "--config", &cfg, "--out", &out(&dir, "r")]).status.success());
    assert!(statseek(&["sweep", "--config", &cfg, "--out", &out(&dir, "s")]).status.success());

    let trace = fs::read_to_string(dir.path().join("r/trace.csv")).unwrap();
    let mut lines = trace.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "residual").unwrap();
    let from_run: Vec<String> = lines.map(|l| l.split(',').nth(col).unwrap().to_string()).collect();
    let grid = fs::read_to_string(dir.path().join("s/grid.csv")).unwrap();
    let from_grid: Vec<String> = grid.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect();
    assert_eq!(from_run.len(), 40);
    let parse = |v: &[String]| v.iter().map(|s| s.parse::<f64>().unwrap()).collect::<Vec<_>>();
    assert_eq!(parse(&from_run), parse(&from_grid));
}

#[test]
fn stats_are_reproducible() {
    let dir = TempDir::new().unwrap();
    for sub in ["a", "b"] {
        let o = statseek(&["stats", "--config", &bundled("lqr_random"), "--reps", "10", "--out", &out(&dir, sub)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(dir.path().join("a/stats.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/stats.json")).unwrap());
    let s = json(dir.path().join("a/stats.json"));
    let pct = s["percent_converged"].as_f64().unwrap();
    assert!(pct > 0.0 && pct <= 100.0);
    assert_eq!(s["verdicts"].as_array().unwrap().len(), 10);
}

#[test]
fn stats_with_zero_reps_exits_2() {
    let dir = TempDir::new().unwrap();
    let o = statseek(&["stats", "--config", &bundled("quadratic10"), "--reps", "0", "--out", &out(&dir, "z")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_round_trip_and_tampering() {
    let dir = TempDir::new().unwrap();
    let cfg = bundled("qp_gnep");
    assert!(statseek(&["run", "--config", &cfg, "--out", &out(&dir, "v")]).status.success());
    let trace = dir.path().join("v/trace.csv");
    let trace_arg = trace.to_string_lossy().into_owned();
    let o = statseek(&["verify", "--trace", &trace_arg, "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["consistent"], true);

    // shift the first query coordinate of the final row
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines.last_mut().unwrap();
    let mut fields: Vec<String> = last.split(',').map(String::from).collect();
    let v: f64 = fields[2].parse().unwrap();
    fields[2] = (v + 0.25).to_string();
    *last = fields.join(",");
    fs::write(&trace, lines.join("\n") + "\n").unwrap();
    assert_eq!(statseek(&["verify", "--trace", &trace_arg, "--config", &cfg]).status.code(), Some(4));
}

#[test]
fn verify_unconverged_run_reports_no_certificate() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "noeq.json", r#"{"game":"no_eq","K":80,"K_in":10}"#);
    assert!(statseek(&["run", "--config", &cfg, "--out", &out(&dir, "n")]).status.success());
    let trace = dir.path().join("n/trace.csv").to_string_lossy().into_owned();
    let o = statseek(&["verify", "--trace", &trace, "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("no certificate"));
}

#[test]
fn every_bundled_config_parses() {
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let cfg = statseek_core::engine::ExperimentConfig::from_json(&text).unwrap();
        cfg.run_config().unwrap();
        statseek_core::Game::build(&cfg.game_spec()).unwrap();
    }
}
