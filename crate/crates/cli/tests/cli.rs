use std::path::Path;
use std::process::{Command, Output};

const FAST: &str = r#"
[protocol]
n_code = 100000

[profile]
mus = [0.0, 0.1, 0.2, 0.5]
signal_weight = 0.5

[optimizer]
mu_values = [0.1, 0.2, 0.5]
signal_weights = [0.5]
finalists = 1

[search]
nx = 5
ny = 3
rounds = 1
iterations = 4

[mc]
trials = 100
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_decoy-keysize"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn keysize_prints_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), FAST, &["keysize"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# schema:"));
    assert!(lines[1].starts_with("status,reason,rate,"));
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("ok,,"));
}

#[test]
fn unknown_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "[protocol]\nn_kode = 3\n", &["keysize"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_kode"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_decoy-keysize"))
        .args(["keysize", "--config", "/nonexistent/scenario.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn aborted_key_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{FAST}\n[channel]\ndistance_km = 400.0\n");
    let out = run(dir.path(), &config, &["keysize"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("aborted,below-minimum"));
}

#[test]
fn too_few_pulses_abort_on_check_bits() {
    let dir = tempfile::tempdir().unwrap();
    let config = FAST.replace("n_code = 100000", "n_code = 100000\nn_sent = 1000000");
    let out = run(dir.path(), &config, &["keysize"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("aborted,insufficient-check-bits"));
}

#[test]
fn scan_writes_deterministic_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{FAST}\n[sweep]\ndistances_km = [20.0, 60.0, 400.0, 450.0]\n");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = run(dir.path(), &config, &["scan-distance", "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        assert!(out.stdout.is_empty());
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[1].starts_with("distance_km,status"));
    assert_eq!(lines.len(), 6);
    assert!(lines[5].contains(",aborted,after-abort,"));
}

#[test]
fn scan_delta_needs_its_axis() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), FAST, &["scan-delta"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let plus = stdout(&run(dir.path(), FAST, &["keysize"]));
    let times = stdout(&run(dir.path(), FAST, &["keysize", "--basis", "times"]));
    let forward = run(dir.path(), FAST, &["keysize", "--variant", "forward"]);
    assert_eq!(forward.status.code(), Some(0));
    assert_ne!(plus, stdout(&forward));
    // Symmetric channel: both bases give the same numbers.
    assert_eq!(plus, times);
    let bad = run(dir.path(), FAST, &["keysize", "--variant", "sideways"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn decompose_lists_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), FAST, &["decompose"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 7);
}

#[test]
fn mc_validate_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let first = run(dir.path(), FAST, &["mc-validate", "--seed", "7"]);
    assert_eq!(first.status.code(), Some(0));
    let again = run(dir.path(), FAST, &["mc-validate", "--seed", "7"]);
    assert_eq!(first.stdout, again.stdout);
    let text = stdout(&first);
    assert!(text.contains("seed = 7\n"));
    assert!(text.contains("variance_ratio = "));
    let other = run(dir.path(), FAST, &["mc-validate", "--seed", "8"]);
    assert_ne!(first.stdout, other.stdout);
}

#[test]
fn optimize_reports_the_single_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), FAST, &["optimize"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let row = text.lines().nth(2).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], "ok");
    let mus: Vec<f64> = fields[5..9].iter().map(|f| f.parse().unwrap()).collect();
    assert_eq!(mus, vec![0.0, 0.1, 0.2, 0.5]);
}
