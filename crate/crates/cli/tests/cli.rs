//! End-to-end runs of the binary.

use std::path::Path;
use std::process::{Command, Output};

use gibbslab::record::{read_records, Quantity};
use gibbslab::runtime::OutputFormat;

fn gibbslab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gibbslab"))
        .args(args)
        .current_dir(dir)
        .env_remove("GIBBSLAB_MAX_ENUM")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&gibbslab(&["--help"], dir.path()));
    for cmd in ["jump", "decay", "scan", "oracle", "sample", "contours", "dobrushin"] {
        assert!(text.contains(cmd), "{cmd} missing from\n{text}");
    }
}

#[test]
fn exact_jump_writes_matching_ratios() {
    let dir = tempfile::tempdir().unwrap();
    ok(&gibbslab(
        &["jump", "--mode", "exact", "--p", "0.3,0.8", "--L", "2,3", "--out", "jump.csv"],
        dir.path(),
    ));
    let records = read_records(&dir.path().join("jump.csv"), OutputFormat::Csv).unwrap();
    assert_eq!(records.len(), 4);
    for r in &records {
        assert_eq!(r.seed, None);
        let lhs = r.results["mu_ratio_plain"].value();
        let rhs = r.results["ratio_plain"].value();
        assert!((lhs - rhs).abs() <= 1e-10 * rhs);
        assert!(matches!(r.results["ratio_plain"], Quantity::Exact { .. }));
    }
}

#[test]
fn config_file_is_layered_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "p = [0.9]\nL = 5\nsweeps = 3000\nburn_in = 300\nreplicas = 2\nseed = 11\nformat = \"csv\"\n",
    )
    .unwrap();
    let text = ok(&gibbslab(&["sample", "--config", "run.toml", "--L", "4"], dir.path()));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("param:L"), "4");
    assert_eq!(col("param:p"), "0.9");
    assert_eq!(col("param:sweeps"), "3000");
    assert_eq!(col("param:replicas"), "2");
}

#[test]
fn sampling_is_reproducible_from_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sample", "--p", "0.8", "--L", "4", "--sweeps", "2000", "--burn-in", "100", "--seed", "5",
    ];
    let strip = |out: &Output| {
        let mut v = read_json(&ok(out));
        for r in v["records"].as_array_mut().unwrap() {
            r["wall_time_s"] = 0.into();
        }
        v
    };
    let a = strip(&gibbslab(&args, dir.path()));
    let b = strip(&gibbslab(&args, dir.path()));
    assert_eq!(a, b);
    let mut other = args.to_vec();
    let last = other.len() - 1;
    other[last] = "6";
    assert_ne!(strip(&gibbslab(&other, dir.path())), a);
}

fn read_json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn oracle_reports_event_probability() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pair.txt"), "d=1 corner=0 sides=2\n11\n").unwrap();
    let v = read_json(&ok(&gibbslab(
        &["oracle", "--p", "0.5", "--region-file", "pair.txt", "--event", "0=1"],
        dir.path(),
    )));
    // isolation on two sites at p = 1/2: 00, 10, 01 equally likely
    let prob = v["event"]["prob"].as_f64().unwrap();
    assert!((prob - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(v["table"]["patterns"].as_array().unwrap().len(), 3);
}

#[test]
fn dobrushin_reports_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let v = read_json(&ok(&gibbslab(&["dobrushin", "--p", "0.3", "--d", "2"], dir.path())));
    assert_eq!(v[0]["constant"]["uniqueness"], false);
    assert!(v[0].get("decay").is_none());
    let v = read_json(&ok(&gibbslab(&["dobrushin", "--p", "0.1", "--L", "2"], dir.path())));
    assert_eq!(v[0]["constant"]["uniqueness"], true);
    let decay = &v[0]["decay"][0];
    assert!(decay["numeric"].as_f64().unwrap() <= decay["closed_form"].as_f64().unwrap());
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "temperature = 3\n").unwrap();
    for args in [
        vec!["sample", "--config", "bad.toml"],
        vec!["sample", "--p", "1.5"],
        vec!["jump", "--sweeps", "10", "--burn-in", "20"],
    ] {
        let out = gibbslab(&args, dir.path());
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
}

#[test]
fn enumeration_cap_comes_from_env_or_flag() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sq.txt"), "d=2 corner=0,0 sides=3,3\n111\n111\n111\n").unwrap();
    let args = ["oracle", "--p", "0.5", "--region-file", "sq.txt", "--constraint", "none"];
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_gibbslab"));
        cmd.args(args).args(extra).current_dir(dir.path());
        match env {
            Some(v) => cmd.env("GIBBSLAB_MAX_ENUM", v),
            None => cmd.env_remove("GIBBSLAB_MAX_ENUM"),
        };
        cmd.output().unwrap()
    };
    assert!(run(None, &[]).status.success());
    let capped = run(Some("4"), &[]);
    assert!(!capped.status.success());
    assert!(String::from_utf8_lossy(&capped.stderr).contains("9"));
    assert!(run(Some("4"), &["--max-enum", "9"]).status.success());
}
