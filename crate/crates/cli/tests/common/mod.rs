#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trisim::RunConfig;

pub fn trisim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trisim"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn trisim_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trisim"));
    c.args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs and insists on exit 0, showing stderr otherwise.
pub fn ok(args: &[&str]) -> Output {
    let o = trisim(args);
    assert_eq!(code(&o), 0, "trisim {args:?} failed:\n{}", stderr(&o));
    o
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A small, fast variant of the desk configuration.
pub fn tiny() -> RunConfig {
    let mut c = RunConfig::desk();
    c.encoder.d = 8;
    c.encoder.l = 8;
    c.blocks.reduction = 2;
    c.attention.d_prime = 4;
    c.attention.reduction = 2;
    c.fusion.d_dprime = 4;
    c.head.hidden = 8;
    c.train.epochs = 2;
    c
}

pub fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, cfg.to_json()).unwrap();
    p
}

/// Header and rows of a CSV file written by the CLI.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

/// `column` of the row whose first field is `key`.
pub fn lookup(path: &Path, key: &str, column: &str) -> f64 {
    let (header, rows) = read_csv(path);
    let c = header.iter().position(|h| h == column).unwrap();
    let row = rows
        .iter()
        .find(|r| r[0] == key)
        .unwrap_or_else(|| panic!("no row {key} in {}", path.display()));
    row[c].parse().unwrap()
}

/// Metric-log lines with `elapsed_s` removed.
pub fn reproducible_log(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("elapsed_s");
            v
        })
        .collect()
}
