use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mbadmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbadmm")).args(args).output().expect("binary runs")
}

fn run_in(out: &Path, args: &[&str]) -> Output {
    let mut full = vec!["run", "--out", out.to_str().unwrap()];
    full.extend_from_slice(args);
    mbadmm(&full)
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn back_substitution_converges_on_the_divergence_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["--engine", "gbs", "--input", "fixture_diverge3.json", "--alpha", "0.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(dir.path())["report"]["status"], "converged");
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with("k,objective,primal_residual,dual_metric,block_ms\n"));
}

#[test]
fn gauss_seidel_exits_with_the_divergence_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["--engine", "gauss-seidel", "--input", "fixture_diverge3.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(report(dir.path())["report"]["status"], "diverged");
}

#[test]
fn iteration_cap_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["--engine", "prox-jacobi", "--input", "convex_n4.json", "--prox", "coupling:3.5", "--max-iter", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(report(dir.path())["report"]["status"], "max_iter_reached");
}

#[test]
fn simulated_offloading_writes_messages() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["--engine", "offload", "--input", "offload_b5a5.json", "--simulate"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["trace.csv", "report.json", "messages.jsonl", "allocation.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let first = fs::read_to_string(dir.path().join("messages.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(line["kind"], "signal");
    assert_eq!(line["dim"], 5);
}

#[test]
fn scopf_run_writes_scenario_solutions() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["--engine", "scopf", "--input", "scopf_3bus.json"]);
    assert_eq!(o.status.code(), Some(0));
    let sol: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol.as_array().unwrap().len(), 2);
}

#[test]
fn identical_runs_write_identical_traces() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["--engine", "variable-splitting", "--input", "convex_n3.json", "--rho", "2"];
    run_in(a.path(), &args);
    run_in(b.path(), &args);
    assert_eq!(fs::read(a.path().join("trace.csv")).unwrap(), fs::read(b.path().join("trace.csv")).unwrap());
}

#[test]
fn files_on_disk_take_precedence_over_bundled_names() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    assert_eq!(mbadmm(&["fixtures", "--out", fx.to_str().unwrap()]).status.code(), Some(0));
    let input = fx.join("convex_n2.json");
    let o = run_in(&dir.path().join("out"), &["--engine", "two-block", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn fixtures_are_written_listed_and_protected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fx");
    let o = mbadmm(&["fixtures", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(fs::read_dir(&out).unwrap().count() >= 5);

    assert_eq!(mbadmm(&["fixtures", "--out", out.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(mbadmm(&["fixtures", "--out", out.to_str().unwrap(), "--force"]).status.code(), Some(0));

    let listed = dir.path().join("listed");
    let o = mbadmm(&["fixtures", "--list", "--out", listed.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).lines().any(|l| l == "scopf_3bus.json"));
    assert!(!listed.exists());
}

#[test]
fn usage_and_io_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["--engine", "nope", "--input", "convex_n2.json"]).status.code(), Some(1));
    assert_eq!(run_in(dir.path(), &["--engine", "gbs", "--input", "/does/not/exist.json"]).status.code(), Some(1));
    assert_eq!(run_in(dir.path(), &["--engine", "gbs", "--input", "convex_n3.json", "--simulate"]).status.code(), Some(1));
    assert_eq!(run_in(dir.path(), &["--engine", "gbs", "--input", "convex_n3.json", "--alpha", "1.5"]).status.code(), Some(1));
}
