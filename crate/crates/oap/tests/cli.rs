use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seeds = [4]
[dataset]
n = 600
[agent]
actor_hidden = [16]
critic_hidden = [16]
batch_size = 32
[ranknet]
hidden = [16]
epochs = 3
[schedule]
n_train = 600
m_inter = 200
k_total = 90
[eval]
interval = 200
episodes = 2
final_window = 2
[theory]
instances = 20
"#;

fn oap(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("small.toml");
    if !config.exists() {
        std::fs::write(&config, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_oap")).arg("--config").arg(&config).args(args).output().unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = oap(tmp.path(), &["gen-data", "--out", "x.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    std::fs::write(&config, "[schedule]\nn_trian = 10\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_oap"))
        .arg("--config")
        .arg(&config)
        .args(["verify-theory", "--out"])
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_trian"));
}

#[test]
fn malformed_dataset_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bad.txt");
    std::fs::write(&data, "OAPDS v1 n=2 state_dim=2 action_dim=2 gamma=0.99\n1,2,3\n").unwrap();
    let out = oap(tmp.path(), &["train", "--env", "pointmass", "--scheme", "offline", "--data", data.to_str().unwrap(), "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_writes_the_declared_number_of_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("d.txt");
    let out = oap(tmp.path(), &["gen-data", "--env", "gridmaze-10", "--tier", "expert", "--n", "123", "--out", file.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&file).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("OAPDS v1"));
    assert!(header.contains("n=123"));
    assert_eq!(lines.count(), 123);
}

#[test]
fn generated_data_trains_like_inline_generation() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("d.txt");
    let dir = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    let gen = oap(tmp.path(), &["gen-data", "--env", "pointmass", "--seed", "4", "--out", file.to_str().unwrap()]);
    assert!(gen.status.success());
    let a = oap(tmp.path(), &["train", "--env", "pointmass", "--scheme", "offline", "--data", file.to_str().unwrap(), "--out", &dir("a")]);
    let b = oap(tmp.path(), &["train", "--env", "pointmass", "--scheme", "offline", "--out", &dir("b")]);
    assert!(a.status.success() && b.status.success());
    let run = "offline-pointmass-s4/metrics.csv";
    assert_eq!(std::fs::read(tmp.path().join("a").join(run)).unwrap(), std::fs::read(tmp.path().join("b").join(run)).unwrap());
}

#[test]
fn oap_run_stays_within_its_query_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("o");
    let out = oap(tmp.path(), &["train", "--env", "gridmaze-10", "--scheme", "oap", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = out_dir.join("oap-interval-gridmaze-10-s4");
    let (header, rows) = csv_rows(&run.join("metrics.csv"));
    let q = column(&header, "queries_used");
    let steps = column(&header, "env_steps");
    assert!(!rows.is_empty());
    for row in &rows {
        assert!(row[q].parse::<u64>().unwrap() <= 90);
        assert_eq!(row[steps], "0");
    }
    let (_, rounds) = csv_rows(&run.join("rounds.csv"));
    assert_eq!(rounds.len(), 3);
    let (_, queries) = csv_rows(&run.join("query_log.csv"));
    assert!(queries.len() <= 90);
    for name in ["config.toml", "manifest.txt", "snapshot/actor.oapnet", "snapshot/agent.toml", "ranknet.oapnet"] {
        assert!(run.join(name).exists(), "missing {name}");
    }
}

#[test]
fn offline_run_never_touches_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("o");
    let out = oap(tmp.path(), &["train", "--env", "pointmass", "--scheme", "offline", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&out_dir.join("offline-pointmass-s4/metrics.csv"));
    let (q, steps) = (column(&header, "queries_used"), column(&header, "env_steps"));
    for row in rows {
        assert_eq!(row[q], "0");
        assert_eq!(row[steps], "0");
    }
}

#[test]
fn manifest_lists_seed_inputs_outputs_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("o");
    assert!(oap(tmp.path(), &["train", "--env", "pointmass", "--scheme", "offline", "--out", out_dir.to_str().unwrap()]).status.success());
    let run = out_dir.join("offline-pointmass-s4");
    let manifest = std::fs::read_to_string(run.join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("OAP manifest v1\nseed 4\n"), "{manifest}");
    assert!(manifest.contains("input dataset sha256="));
    assert!(manifest.contains("output metrics.csv sha256="));
    assert!(manifest.contains("[schedule]"));
    assert!(manifest.contains("n_train = 600"));

    let rerun = tmp.path().join("again");
    let config = run.join("config.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_oap"))
        .arg("--config")
        .arg(&config)
        .args(["train", "--out"])
        .arg(&rerun)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(run.join("metrics.csv")).unwrap(),
        std::fs::read(rerun.join("offline-pointmass-s4/metrics.csv")).unwrap()
    );
}

#[test]
fn compare_writes_one_row_per_scheme() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("o");
    let out = oap(tmp.path(), &["compare", "--schemes", "offline,oap:no-rn", "--env", "pointmass", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&out_dir.join("aggregate.csv"));
    assert_eq!(rows.len(), 2);
    let failures = column(&header, "failures");
    assert!(rows.iter().all(|r| r[failures] == "0"));
    assert!(out_dir.join("aggregate.txt").exists());
    assert!(out_dir.join("manifest.txt").exists());
}

#[test]
fn compare_rejects_unknown_scheme() {
    let tmp = tempfile::tempdir().unwrap();
    let out = oap(tmp.path(), &["compare", "--schemes", "offline,bogus", "--env", "pointmass", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_theory_reports_every_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("o");
    let out = oap(tmp.path(), &["verify-theory", "--seed", "0", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("theory.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| !r.contains("FAIL")));
}

#[test]
fn diagnose_reads_a_saved_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("o");
    assert!(oap(tmp.path(), &["train", "--env", "gridmaze-10", "--scheme", "offline", "--out", out_dir.to_str().unwrap()]).status.success());
    let snapshot = out_dir.join("offline-gridmaze-10-s4/snapshot");
    let diag = tmp.path().join("d");
    let out = oap(
        tmp.path(),
        &["diagnose", "--env", "gridmaze-10", "--snapshot", snapshot.to_str().unwrap(), "--out", diag.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&diag.join("diagnostics.csv"));
    assert_eq!(header, ["index", "divergence", "value_gain"]);
    assert_eq!(rows.len(), 600);
    assert!(rows.iter().all(|r| r[1].parse::<f64>().unwrap() >= 0.0));
}
