use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wildiv::sim::{self, DgpConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wildiv"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn dataset(dir: &Path, cfg: &DgpConfig) -> PathBuf {
    let path = dir.join("data.csv");
    let d = sim::replication_dataset(cfg, 3, 0).unwrap();
    wildiv::io::save_dataset_csv(&d, &path).unwrap();
    path
}

fn q14() -> DgpConfig {
    DgpConfig { q: 14, dz: 2, ..DgpConfig::default() }
}

fn with_workers(dir: &Path, base: &[&str], workers: &str) -> Vec<u8> {
    let out = dir.join(format!("out-{workers}"));
    let mut args = base.to_vec();
    args.extend(["--workers", workers, "-o", out.to_str().unwrap()]);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    fs::read(out).unwrap()
}

#[test]
fn test_output_is_identical_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &q14());
    let base = [
        "test", "wald-cr", "--data", data.to_str().unwrap(), "--beta0", "0.5", "--method", "liml",
        "--signs", "sampled", "--draws", "399", "--seed", "5", "--distribution",
    ];
    let one = with_workers(dir.path(), &base, "1");
    assert_eq!(one, with_workers(dir.path(), &base, "3"));
    assert!(String::from_utf8(one).unwrap().contains("\"reject\""));
}

#[test]
fn simulate_output_is_identical_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "simulate", "power", "--q", "10", "--dz", "2", "--pi0", "4", "--rho", "0.5", "--strong", "3",
        "--tests", "WB-S:full,WB-AR-US", "--reps", "100", "--betas", "-0.5,0,0.5", "--seed", "9",
    ];
    let one = with_workers(dir.path(), &base, "1");
    assert_eq!(one, with_workers(dir.path(), &base, "4"));
    let text = String::from_utf8(one).unwrap();
    assert!(text.starts_with("test,estimator,rho,pi0,dz,strong,beta,reject_rate,se\n"), "{text}");
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}

#[test]
fn fit_reads_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &DgpConfig::default());
    let o = run(&["fit", "--data", data.to_str().unwrap(), "--method", "tsls"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("\"beta\"") && text.contains("\"n\": 330"), "{text}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &DgpConfig::default());
    let path = data.to_str().unwrap();
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["test", "nonsense", "--data", path]).status.code(), Some(1));
    assert_eq!(run(&["fit", "--data", "/nonexistent/file.csv"]).status.code(), Some(1));
    assert_eq!(run(&["test", "ar", "--data", path, "--alpha", "1.5"]).status.code(), Some(1));

    // An instrument equal to the intercept leaves nothing after partialling.
    let mut text = String::from("y,x1,z1,cluster\n");
    for i in 0..20 {
        text += &format!("{},{},1,{}\n", i as f64 * 0.3, (i * i % 7) as f64, i % 4);
    }
    let bad = dir.path().join("collinear.csv");
    fs::write(&bad, text).unwrap();
    let o = run(&["fit", "--data", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn malformed_csv_names_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "y,x1,z1,cluster\n1,2,3,0\n1,2,oops,1\n").unwrap();
    let o = run(&["fit", "--data", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 2") && err.contains("z1"), "{err}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &DgpConfig::default());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("# settings\ndata = {}\nalpha = 0.05\nbeta0 = 0.25\n", data.display())).unwrap();
    let from_file = run(&["--config", cfg.to_str().unwrap(), "test", "ar"]);
    assert!(from_file.status.success(), "{}", String::from_utf8_lossy(&from_file.stderr));
    let overridden = run(&["--config", cfg.to_str().unwrap(), "test", "ar", "--alpha", "0.2"]);
    let a = String::from_utf8(from_file.stdout).unwrap();
    let b = String::from_utf8(overridden.stdout).unwrap();
    assert!(a.contains("\"alpha\": 0.05"), "{a}");
    assert!(b.contains("\"alpha\": 0.2"), "{b}");

    fs::write(&cfg, format!("data = {}\nbogus = 1\n", data.display())).unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "test", "ar"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn csv_results_and_confidence_sets() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &DgpConfig::default());
    let path = data.to_str().unwrap();
    let o = run(&["test", "ar-cr", "--data", path, "--format", "csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().lines().count() >= 2);
    let o = run(&["cs", "ar", "--data", path, "--lo", "-1", "--hi", "1", "--step", "0.1", "--shared-signs"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("\"intervals\""));
}
