use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const CONFIG: &str = "\
[grid]
rows = 4
cols = 5
r_d = 64

[mcmc]
iterations = 400
burn_in = 100
thin = 5

[surrogate]
alpha_points = 5
psi_points = 9
sims = 200
burn_in = 20
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcm-segment"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn pipeline(dir: &Path) {
    std::fs::write(dir.join("run.toml"), CONFIG).unwrap();
    let c = ["--seed", "5", "--config", "run.toml"];
    let with = |rest: &[&str]| -> Vec<String> { c.iter().chain(rest).map(|s| s.to_string()).collect() };
    let go = |rest: &[&str]| {
        let args = with(rest);
        ok(dir, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    go(&["simulate", "--subjects", "5", "--rows", "4", "--cols", "5", "--out", "sim"]);
    go(&["grid-stats", "--points", "sim/points.csv", "--windows", "sim/windows.csv", "--out", "gs.csv"]);
    go(&["features", "--grid-stats", "gs.csv", "--out", "feat"]);
    go(&["fit", "--features", "feat/features.csv", "--basis", "feat/basis.txt", "--cache-dir", "cache", "--out", "fit"]);
    go(&["summarize", "--chain", "fit/chain_1.tsv", "--basis", "feat/basis.txt", "--eval-distances", "0.2", "--out", "summary"]);
    go(&["baseline", "--method", "Curve-G", "--grid-stats", "gs.csv", "--out", "curve.csv"]);
    go(&["ari", "sim/truth.csv", "summary/labels.csv", "--out", "ari.txt"]);
}

fn manifests(dir: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.to_string_lossy().ends_with("manifest.json") {
                found.push(p);
            }
        }
    }
    found.sort();
    found
}

#[test]
fn ari_of_identical_files_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let table = "subject_id,row,col,label\na,0,0,1\na,0,1,2\na,1,0,2\nb,0,0,3\n";
    std::fs::write(dir.path().join("a.csv"), table).unwrap();
    std::fs::write(dir.path().join("b.csv"), table).unwrap();
    assert_eq!(ok(dir.path(), &["ari", "a.csv", "b.csv"]).trim(), "1.0");
}

#[test]
fn fit_without_features_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["fit", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    let line = err.lines().last().unwrap();
    assert!(line.starts_with("error kind=usage message="), "{line}");
    assert!(line.contains("--features"), "{line}");
}

#[test]
fn bad_inputs_report_one_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["grid-stats", "--points", "p.csv", "--rows", "3", "--target-mean-count", "4", "--out", "g.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["ari", "missing.csv", "other.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().filter(|l| l.starts_with("error kind=io message=")).count(), 1, "{err}");
    let out = run(dir.path(), &["baseline", "--method", "spectral", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "seeed = 1\n").unwrap();
    let out = run(dir.path(), &["--config", "bad.toml", "ari", "a.csv", "b.csv"]);
    assert!(String::from_utf8(out.stderr).unwrap().contains("error kind=config"));
}

#[test]
fn pipeline_is_reproducible_and_fully_manifested() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());

    let ari: f64 = std::fs::read_to_string(a.path().join("ari.txt")).unwrap().trim().parse().unwrap();
    assert!((-1.0..=1.0).contains(&ari));

    let (ma, mb) = (manifests(a.path()), manifests(b.path()));
    assert_eq!(ma.len(), 7);
    let mut listed: BTreeMap<String, usize> = BTreeMap::new();
    for (pa, pb) in ma.iter().zip(&mb) {
        let (x, y) = (manifest(pa), manifest(pb));
        assert_eq!(x["config_hash"], y["config_hash"], "{}", pa.display());
        assert_eq!(x["outputs"], y["outputs"], "{}", pa.display());
        assert_eq!(x["seed"], 5);
        for o in x["outputs"].as_array().unwrap() {
            *listed.entry(o["path"].as_str().unwrap().to_string()).or_default() += 1;
        }
    }
    // every file except manifests, the config, and the surrogate cache is
    // listed by exactly one manifest
    let mut files = Vec::new();
    let mut stack = vec![a.path().to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                if !p.ends_with("cache") {
                    stack.push(p);
                }
            } else {
                let rel = p.strip_prefix(a.path()).unwrap().to_string_lossy().to_string();
                if !rel.ends_with("manifest.json") && rel != "run.toml" {
                    files.push(rel);
                }
            }
        }
    }
    files.sort();
    assert_eq!(files.len(), listed.len());
    for f in &files {
        assert_eq!(listed.get(f), Some(&1), "{f}");
    }

    let fit = manifest(&a.path().join("fit/manifest.json"));
    assert_eq!(fit["cache"][0]["reused"], false);
    let chain = std::fs::read(a.path().join("fit/chain_1.tsv")).unwrap();
    // rerun with the cache in place: table reused, chain bit-identical
    ok(
        a.path(),
        &[
            "--seed", "5", "--config", "run.toml", "fit", "--features", "feat/features.csv", "--basis",
            "feat/basis.txt", "--cache-dir", "cache", "--out", "fit",
        ],
    );
    let again = manifest(&a.path().join("fit/manifest.json"));
    assert_eq!(again["cache"][0]["reused"], true);
    assert_eq!(again["config_hash"], fit["config_hash"]);
    assert_eq!(std::fs::read(a.path().join("fit/chain_1.tsv")).unwrap(), chain);
}

#[test]
fn exact_fit_with_fixed_seed_replays() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), "[grid]\nrows = 2\ncols = 3\nr_d = 32\n").unwrap();
    let base = ["--seed", "9", "--config", "run.toml"];
    let go = |rest: &[&str]| ok(d, &base.iter().chain(rest).copied().collect::<Vec<_>>());
    go(&["simulate", "--subjects", "4", "--rows", "2", "--cols", "3", "--out", "sim"]);
    go(&["grid-stats", "--points", "sim/points.csv", "--windows", "sim/windows.csv", "--out", "gs.csv"]);
    go(&["features", "--grid-stats", "gs.csv", "--out", "feat"]);
    let fit = |out: &str| {
        go(&[
            "fit", "--features", "feat/features.csv", "--m", "2", "--exact", "--iterations", "300", "--burn-in", "100",
            "--out", out,
        ]);
        std::fs::read(d.join(out).join("chain_1.tsv")).unwrap()
    };
    assert_eq!(fit("f1"), fit("f2"));
    let m = manifest(&d.join("f1/manifest.json"));
    assert!(m["cache"].as_array().unwrap().is_empty());
    let selected = go(&["select-m", "--features", "feat/features.csv", "--exact", "--m-min", "1", "--m-max", "2",
        "--iterations", "200", "--burn-in", "50", "--out", "sel"]);
    assert!(["1", "2"].contains(&selected.trim()));
}
