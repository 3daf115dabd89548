use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const GOLDEN: &str = "0.6180339887498949";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_szego-lab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn run_dir(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap().trim().to_string()
}

#[test]
fn free_spectrum_is_the_circle_and_reruns_hit_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "free.txt", &format!("lambda = 0\nomega = {GOLDEN}\ngrid = 64\n"));
    let out = dir.path().join("out");
    let first = run(&["spectrum", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let rd = run_dir(&first);
    let arcs: serde_json::Value = serde_json::from_str(&fs::read_to_string(Path::new(&rd).join("arcs.json")).unwrap()).unwrap();
    assert_eq!(arcs["full_circle"], true);
    let csv = fs::read_to_string(Path::new(&rd).join("spectrum.csv")).unwrap();
    assert!(csv.starts_with("zeta_rad,verdict\n"));
    let payload = fs::read(Path::new(&rd).join("payload.json")).unwrap();

    let second = run(&["spectrum", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(second.status.code(), Some(0));
    let env: serde_json::Value = serde_json::from_str(&fs::read_to_string(Path::new(&rd).join("envelope.json")).unwrap()).unwrap();
    assert_eq!(env["cache_hit"], true);
    assert_eq!(fs::read(Path::new(&rd).join("payload.json")).unwrap(), payload);
}

#[test]
fn corrupt_cache_is_recomputed_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.txt", &format!("lambda = 0.5\nomega = {GOLDEN}\ngrid = 64\nhorizon = 256\n"));
    let out = dir.path().join("out");
    let first = run(&["spectrum", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let payload = fs::read(Path::new(&run_dir(&first)).join("payload.json")).unwrap();
    let cache = fs::read_dir(out.join("cache")).unwrap().next().unwrap().unwrap().path();
    fs::write(&cache, "{ not json").unwrap();
    let second = run(&["spectrum", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(second.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&second.stderr).contains("corrupt cache entry"));
    assert_eq!(fs::read(Path::new(&run_dir(&second)).join("payload.json")).unwrap(), payload);
}

#[test]
fn payload_does_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "l.txt", &format!("lambda = 0.3\nomega = {GOLDEN}\ngrid = 8\nn_iter = 2000\nphases = 8\nmodulus = 1.1\n"));
    let mut payloads = Vec::new();
    for t in ["1", "3"] {
        let out = dir.path().join(format!("out{t}"));
        let o = run(&["lyapunov", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", t, "--no-cache"]);
        assert_eq!(o.status.code(), Some(0));
        let rd = run_dir(&o);
        payloads.push((fs::read(Path::new(&rd).join("payload.json")).unwrap(), fs::read(Path::new(&rd).join("lyapunov.csv")).unwrap()));
    }
    assert_eq!(payloads[0], payloads[1]);
}

#[test]
fn geronimus_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "g.txt", &format!("lambda = 0.5\nomega = {GOLDEN}\ngrid = 1000\nphases = 1\n"));
    let o = run(&["suite", "--config", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(Path::new(&run_dir(&o)).join("suite.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")), "{csv}");
    assert!(csv.contains("geronimus_arc_start"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = write_config(dir.path(), "k.txt", &format!("lambda = 0.5\nomega = {GOLDEN}\nresolution = 3\n"));
    let o = run(&["spectrum", "--config", &bad_key]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `resolution`"));
    let bad_lambda = write_config(dir.path(), "l.txt", &format!("lambda = 1.5\nomega = {GOLDEN}\n"));
    let o = run(&["spectrum", "--config", &bad_lambda]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("|alpha| < 1"));
    let o = run(&["spectrum", "--config", dir.path().join("missing.txt").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn computation_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "z.txt", &format!("lambda = 0\nomega = {GOLDEN}\nestimator = zeros\ndegree = 64\n"));
    let o = run(&["dos", "--config", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dos:"));
}

#[test]
fn kam_smoke_model_is_gated_unless_asked() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("lambda = 1e-4\nomega = {GOLDEN}\nh.1 = 0.5, 0\nh.-1 = 0.5, 0\nzeta = 2\nr = 0.02\nsteps = 2\n");
    let gated = write_config(dir.path(), "k.txt", &text);
    let out = dir.path().join("out");
    let o = run(&["kam", "--config", &gated, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("smallness gate"));
    let ungated = write_config(dir.path(), "u.txt", &format!("{text}ungated = 1\n"));
    let o = run(&["kam", "--config", &ungated, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(Path::new(&run_dir(&o)).join("kam_steps.csv")).unwrap();
    let step1: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(step1[5], "true");
    assert_eq!(step1[6], "true");
}
