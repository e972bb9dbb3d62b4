//! CLI behavior: exit codes, stage file formats, idempotence, and the
//! equivalence of run-all with stage-by-stage execution.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_bgplens")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

/// A minimal hand-written scenario: one vantage, two prefixes, four ASes.
fn write_tiny_scenario(dir: &Path) -> PathBuf {
    fs::write(
        dir.join("rib.tsv"),
        "10\t10.0.0.0/22\t10 2 100\n10\t10.9.0.0/16\t10 2 101\n",
    )
    .unwrap();
    fs::write(
        dir.join("updates.tsv"),
        "60\t10\t10.0.0.0/22\t10 3 100\n\
         120\t10\t10.0.0.0/22\t10 2 100\n\
         3700\t10\t10.0.1.0/24\t10 3 101\n",
    )
    .unwrap();
    fs::write(
        dir.join("rel.txt"),
        "1|10|-1\n2|10|-1\n2|100|-1\n3|101|-1\n2|3|0\n",
    )
    .unwrap();
    fs::write(
        dir.join("meta.jsonl"),
        "{\"asn\":10,\"orgName\":\"org-v\"}\n{\"asn\":100,\"orgName\":\"org-a\"}\n\
         {\"asn\":101,\"orgName\":\"org-a\"}\n{\"asn\":2,\"orgName\":\"org-t\"}\n\
         {\"asn\":3,\"orgName\":\"org-t\"}\n{\"asn\":1,\"orgName\":\"org-t\"}\n",
    )
    .unwrap();
    let config = serde_json::json!({
        "paths": {
            "rib": "rib.tsv",
            "updates": "updates.tsv",
            "relationships": "rel.txt",
            "metadata": "meta.jsonl"
        },
        "provider": {"kind": "mock", "dim": 12, "seed": 9},
        "reduced_dim": 4,
        "train": {"enabled": false},
        "seed": 21
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn monitor_writes_change_file() {
    let dir = tmp_dir("cli_monitor");
    let config = write_tiny_scenario(&dir);
    let out = run(&["--config", config.to_str().unwrap(), "monitor"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let changes = fs::read_to_string(dir.join("out/changes.jsonl")).unwrap();
    let lines: Vec<&str> = changes.lines().collect();
    // 60s announcement diverges, 120s restores, 3700s matches the broader /22.
    assert_eq!(lines.len(), 3);
    assert!(lines[2].contains("\"matched_prefix\":\"10.0.0.0/22\""));
}

#[test]
fn missing_rib_names_path_and_fails() {
    let dir = tmp_dir("cli_missing_rib");
    let config = write_tiny_scenario(&dir);
    fs::remove_file(dir.join("rib.tsv")).unwrap();
    let out = run(&["--config", config.to_str().unwrap(), "monitor"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("rib.tsv"),
        "stderr must name the path: {stderr}"
    );
}

#[test]
fn empty_updates_empty_output_exit_zero() {
    let dir = tmp_dir("cli_empty_updates");
    let config = write_tiny_scenario(&dir);
    fs::write(dir.join("updates.tsv"), "").unwrap();
    let out = run(&["--config", config.to_str().unwrap(), "monitor"]);
    assert!(out.status.success());
    assert_eq!(
        fs::read_to_string(dir.join("out/changes.jsonl")).unwrap(),
        ""
    );
}

#[test]
fn zero_window_is_config_error() {
    let dir = tmp_dir("cli_zero_window");
    let config = write_tiny_scenario(&dir);
    let out = run(&[
        "--config",
        config.to_str().unwrap(),
        "--window-secs",
        "0",
        "detect",
    ]);
    assert_eq!(out.status.code(), Some(1), "config errors exit 1");
    assert!(String::from_utf8_lossy(&out.stderr).contains("window_secs"));
}

#[test]
fn embed_twice_identical_store() {
    let dir = tmp_dir("cli_embed_idempotent");
    let config = write_tiny_scenario(&dir);
    let config = config.to_str().unwrap();
    assert!(run(&["--config", config, "profile"]).status.success());
    assert!(run(&["--config", config, "embed"]).status.success());
    let first = fs::read(dir.join("out/store.jsonl")).unwrap();
    assert!(run(&["--config", config, "embed"]).status.success());
    let second = fs::read(dir.join("out/store.jsonl")).unwrap();
    assert_eq!(first, second, "embed is idempotent byte-for-byte");
}

#[test]
fn run_all_matches_stage_by_stage() {
    let dir = tmp_dir("cli_runall_equiv");
    let config_path = write_tiny_scenario(&dir);
    let config = config_path.to_str().unwrap();
    let out = run(&["--config", config, "run-all"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.trim().ends_with("report.json"));
    let via_run_all = fs::read(dir.join("out/report.json")).unwrap();

    for sub in [
        "monitor",
        "profile",
        "embed",
        "reduce",
        "detect",
        "aggregate",
    ] {
        let out = run(&["--config", config, sub]);
        assert!(
            out.status.success(),
            "{sub}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let via_stages = fs::read(dir.join("out/report.json")).unwrap();
    assert_eq!(via_run_all, via_stages);
}

#[test]
fn perturb_writes_expected_edge_count() {
    let dir = tmp_dir("cli_perturb");
    let config = write_tiny_scenario(&dir);
    let out_path = dir.join("rel_perturbed.txt");
    let out = run(&[
        "--config",
        config.to_str().unwrap(),
        "perturb",
        "--noise",
        "delete",
        "--ratio",
        "0.25",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let edges = fs::read_to_string(&out_path).unwrap();
    // 5 edges, floor(0.25 * 5) = 1 removed.
    assert_eq!(edges.lines().count(), 4);

    let bad = run(&[
        "--config",
        config.to_str().unwrap(),
        "perturb",
        "--noise",
        "melt",
        "--ratio",
        "0.1",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn out_of_order_updates_is_data_error() {
    let dir = tmp_dir("cli_out_of_order");
    let config = write_tiny_scenario(&dir);
    fs::write(
        dir.join("updates.tsv"),
        "120\t10\t10.0.0.0/22\t10 3 100\n60\t10\t10.0.0.0/22\t10 2 100\n",
    )
    .unwrap();
    let out = run(&["--config", config.to_str().unwrap(), "monitor"]);
    assert_eq!(out.status.code(), Some(2), "data errors exit 2");
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of order"));
}

#[test]
fn unreachable_provider_is_provider_error() {
    let dir = tmp_dir("cli_provider_error");
    let config_path = write_tiny_scenario(&dir);
    let mut config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&config_path).unwrap()).unwrap();
    // Discard port: connection refused immediately.
    config["provider"] = serde_json::json!({
        "kind": "http",
        "endpoint": "http://127.0.0.1:9",
        "model": "none",
        "timeout_secs": 2
    });
    config["embed"] = serde_json::json!({"max_retries": 0, "retry_base_ms": 0});
    fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let config = config_path.to_str().unwrap();
    assert!(run(&["--config", config, "profile"]).status.success());
    let out = run(&["--config", config, "embed"]);
    assert_eq!(out.status.code(), Some(3), "provider errors exit 3");
}

#[test]
fn fixture_generation_is_deterministic() {
    let a = tmp_dir("cli_fixture_a");
    let b = tmp_dir("cli_fixture_b");
    assert!(run(&["--gen-fixture", a.to_str().unwrap(), "--seed", "7"])
        .status
        .success());
    assert!(run(&["--gen-fixture", b.to_str().unwrap(), "--seed", "7"])
        .status
        .success());
    for name in [
        "rib.tsv",
        "updates.tsv",
        "rel.txt",
        "meta.jsonl",
        "roa.csv",
        "ground_truth.json",
        "config.json",
    ] {
        let fa = fs::read(a.join(name)).unwrap();
        let fb = fs::read(b.join(name)).unwrap();
        assert_eq!(fa, fb, "{name} differs between equal-seed generations");
    }
}
