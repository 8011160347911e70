use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/tiny")
}

fn fuelseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuelseg")).args(args).output().unwrap()
}

fn config() -> String {
    fixture().join("pipeline.toml").display().to_string()
}

#[test]
fn run_writes_a_complete_bundle() {
    let out = tempfile::tempdir().unwrap();
    let o = fuelseg(&["run", "--config", &config(), "--out", out.path().to_str().unwrap(), "--nperm", "99"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_perm"], 99);
    assert!(manifest["inputs"].as_array().unwrap().iter().all(|i| i["sha256"].as_str().unwrap().len() == 64));
    for f in ["permanova_euclidean.csv", "permanova_bray_curtis.csv", "heatmap.svg", "kruskal_wallis.csv"] {
        assert!(out.path().join(f).is_file(), "{f} missing");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for t in ["1", "3"] {
        let out = dir.path().join(t);
        let o = fuelseg(&["--threads", t, "permanova", "--config", &config(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        tables.push(std::fs::read(out.join("permanova_euclidean.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn single_stage_respects_metric_and_seed() {
    let out = tempfile::tempdir().unwrap();
    let o = fuelseg(&[
        "permanova",
        "--config",
        &config(),
        "--metric",
        "bray_curtis",
        "--seed",
        "7",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(!out.path().join("permanova_euclidean.csv").exists());
    let csv = std::fs::read_to_string(out.path().join("permanova_bray_curtis.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",199,7"), "{csv}");
}

#[test]
fn figures_redraw_from_an_existing_bundle() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().to_str().unwrap();
    assert!(fuelseg(&["run", "--config", &config(), "--out", dir]).status.success());
    std::fs::remove_file(out.path().join("pcoa.svg")).unwrap();
    let o = fuelseg(&["figures", "--out", dir]);
    assert!(o.status.success());
    assert!(out.path().join("pcoa.svg").is_file());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "n_perm = 999\nsurprise = true\n").unwrap();
    let o = fuelseg(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let o = fuelseg(&["run", "--config", &config(), "--nperm", "10", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    // Usage errors from argument parsing share the code.
    assert_eq!(fuelseg(&["run", "--metric", "cosine"]).status.code(), Some(2));
    assert_eq!(fuelseg(&["permanova"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_3_and_mark_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["demographics.csv", "resources.csv", "pipeline.toml"] {
        std::fs::copy(fixture().join(f), dir.path().join(f)).unwrap();
    }
    let regroup = std::fs::read_to_string(fixture().join("regroup.toml")).unwrap();
    std::fs::write(dir.path().join("regroup.toml"), regroup.replace("\"b1\" = \"B\"\n", "")).unwrap();
    let o = fuelseg(&["run", "--config", dir.path().join("pipeline.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("b1"), "{err}");
    assert!(dir.path().join("out").join("FAILED").is_file());
}
