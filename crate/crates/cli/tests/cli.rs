use std::path::PathBuf;
use std::process::Command;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios")).join(name)
}

fn linewatch() -> Command {
    Command::new(env!("CARGO_BIN_EXE_linewatch"))
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = linewatch()
        .arg("run")
        .arg(scenario("standard.toml"))
        .args(["--set", "run.horizon=\"20 min\"", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("leak declared"), "{stdout}");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let hash = report["metadata"]["config_hash"].as_str().unwrap().to_string();
    for f in [
        "telemetry.csv",
        "states.txt",
        "trace.csv",
        "balance.csv",
        "acoustic.csv",
        "availability.csv",
    ] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("# config_sha256={hash}"), "{f}");
    }
}

#[test]
fn overrides_change_the_hash() {
    let hash_of = |extra: &[&str]| {
        let out = linewatch()
            .arg("validate")
            .arg(scenario("standard.toml"))
            .args(extra)
            .output()
            .unwrap();
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        text.lines().next().unwrap().to_string()
    };
    assert_ne!(hash_of(&[]), hash_of(&["--set", "leaks.0.rate=1.4"]));
    assert_eq!(hash_of(&[]), hash_of(&[]));
}

#[test]
fn invalid_config_names_the_field() {
    let out = linewatch()
        .arg("validate")
        .arg(scenario("standard.toml"))
        .args(["--set", "leaks.0.position=40 km"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("leaks[0].position"), "{err}");
}

#[test]
fn solver_failure_exits_nonzero_with_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = linewatch()
        .arg("run")
        .arg(scenario("standard.toml"))
        .args([
            "--set",
            "run.horizon=\"10 min\"",
            "--set",
            "leaks=[]",
            "--set",
            "boundary.outlet={kind = \"mass_flow\", schedule = [[0, 70.0], [60, 70.0], [120, 600.0]]}",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "failed");
    assert_eq!(report["failure"]["stage"], "plant");
}

#[test]
fn sweep_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    std::fs::write(&grid, "[[parameter]]\npath = \"leaks.0.rate\"\nvalues = [0.7, 3.5]\n").unwrap();
    let out = linewatch()
        .arg("sweep")
        .arg(scenario("standard.toml"))
        .arg(&grid)
        .args(["--set", "run.horizon=\"20 min\"", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config_sha256="));
    assert!(lines[1].starts_with("cell,leaks.0.rate,config_sha256,status"));
    assert_eq!(lines.len(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cells"], 2);
    assert_eq!(summary["rtm_alarms"], 2);
}

#[test]
fn shipped_grid_is_valid() {
    let g = linewatch::SweepGrid::load(scenario("sweep_sizes.toml")).unwrap();
    assert_eq!(g.cell_count(), 12);
}
