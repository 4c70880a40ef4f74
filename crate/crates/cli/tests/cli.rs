use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ipaths_cli::config::RunConfig;
use ipaths_cli::provenance::MANIFEST;

fn ipaths(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipaths"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn smoke_config(dir: &Path) -> String {
    let path = dir.join("smoke.toml");
    fs::write(&path, RunConfig::smoke().to_toml().unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn path_counts_match_reference_values() {
    for (task, focus, expected) in [
        ("Simple", "subject", "16"),
        ("nounPP", "subject", "6946"),
        ("nounPPAdv", "subject", "41561"),
        ("nounPP", "intervening", "16"),
        ("nounPPAdv", "intervening", "152"),
    ] {
        let o = ipaths(&["paths", "count", "--task", task, "--focus", focus]);
        assert!(o.status.success());
        assert_eq!(stdout(&o).trim(), expected, "{task} {focus}");
    }
}

#[test]
fn enumerate_writes_one_json_array_per_path() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("paths.jsonl");
    let o = ipaths(&[
        "paths",
        "enumerate",
        "--task",
        "Simple",
        "--output",
        file.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(file).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 16);
    for l in lines {
        let nodes: Vec<String> = serde_json::from_str(l).unwrap();
        assert_eq!(nodes.first().map(String::as_str), Some("input:2"));
        assert_eq!(nodes.last().map(String::as_str), Some("qoi"));
    }
}

#[test]
fn intervening_focus_on_simple_is_an_error() {
    let o = ipaths(&["paths", "count", "--task", "Simple", "--focus", "intervening"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no intervening noun"));
}

#[test]
fn failures_exit_nonzero_with_a_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = ipaths(&["--out", out, "eval-na"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing checkpoint"));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[model]\nhidden = \"wide\"\n").unwrap();
    let o = ipaths(&["--config", bad.to_str().unwrap(), "config"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid configuration"));

    assert!(!ipaths(&["frobnicate"]).status.success());
}

#[test]
fn overrides_reach_the_effective_config() {
    let o = ipaths(&[
        "--set",
        "model.hidden=12",
        "--set",
        "compression.pooling=per-condition",
        "config",
    ]);
    assert!(o.status.success());
    let c = RunConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(c.model.hidden, 12);
    assert_eq!(c.compression.pooling, ipaths_core::compression::Pooling::PerCondition);
}

#[test]
fn verify_passes_on_a_fresh_random_model() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path());
    let out = tmp.path().join("out");
    let o = ipaths(&["--config", &cfg, "--out", out.to_str().unwrap(), "verify"]);
    let text = stdout(&o);
    assert!(o.status.success(), "{text}");
    assert!(!text.contains("FAIL"));
    assert!(text.contains("PASS path counts"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    assert_eq!(v["provenance"]["config_hash"], RunConfig::smoke().hash());
}

fn artifact_files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path());
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        let o = ipaths(&["--config", &cfg, "--out", d.to_str().unwrap(), "--threads", "1", "run"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let files = artifact_files(&dirs[0]);
    assert_eq!(files, artifact_files(&dirs[1]));
    for f in [
        "table1.csv",
        "table2.csv",
        "na.csv",
        "sentences.csv",
        "top_paths.csv",
        "neurons.csv",
        "attributions.jsonl",
        "analysis.json",
        "model.json",
        "report.md",
        MANIFEST,
    ] {
        assert!(files.contains(&f.to_string()), "missing {f}");
    }
    for f in &files {
        assert_eq!(
            fs::read(dirs[0].join(f)).unwrap(),
            fs::read(dirs[1].join(f)).unwrap(),
            "{f} differs"
        );
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dirs[0].join(MANIFEST)).unwrap()).unwrap();
    let hash = RunConfig::smoke().hash();
    for f in files
        .iter()
        .filter(|f| f.ends_with(".csv") || f.ends_with(".jsonl") || f.ends_with(".svg"))
    {
        assert_eq!(manifest[f.as_str()]["config_hash"], hash.as_str(), "{f}");
    }
    let ckpt: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dirs[0].join("model.json")).unwrap()).unwrap();
    assert_eq!(ckpt["version"], "ipaths-ckpt-1");
    assert_eq!(ckpt["info"]["provenance"]["config_hash"], hash.as_str());

    let table1 = fs::read_to_string(dirs[0].join("table1.csv")).unwrap();
    assert!(table1.starts_with("Task,C,Focus,P_plus,NumPaths,PrimaryShare,PrimaryT,TopNeuron1,T1,TopNeuron2,T2\n"));
    assert_eq!(table1.lines().count(), 1 + 2 + 4 * 2 + 4 * 2);
    let table2 = fs::read_to_string(dirs[0].join("table2.csv")).unwrap();
    assert!(table2.starts_with("Task,C,Cbar_si,Cbar_s,Cbar_i,C_si,C_s,C_i,C\n"));
    assert_eq!(table2.lines().count(), 1 + 2 * 5);

    let o = ipaths(&[
        "--config",
        &cfg,
        "--out",
        dirs[0].to_str().unwrap(),
        "--threads",
        "1",
        "eval-na",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 10);
}
