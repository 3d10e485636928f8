use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn holiv(args: &[&str], config: &str, dir: &Path) -> i32 {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_holiv")).args(args).arg("--config").arg(&cfg).arg("--out").arg(dir.join("out")).output().unwrap().status.code().unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join("out").join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_slice(&read(dir, name)).unwrap()
}

fn outputs(dir: &Path) -> Vec<String> {
    json(dir, "manifest.json")["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect()
}

fn assert_reruns_identical(cmd: &str, config: &str) {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(holiv(&[cmd, "--seed", "11"], config, a.path()), 0, "{cmd}");
    assert_eq!(holiv(&[cmd, "--seed", "11"], config, b.path()), 0, "{cmd}");
    let files = outputs(a.path());
    assert!(files.contains(&"manifest.json".to_string()) || !files.is_empty());
    assert_eq!(files, outputs(b.path()));
    for f in files.iter().chain(std::iter::once(&"manifest.json".to_string())) {
        assert!(read(a.path(), f) == read(b.path(), f), "{cmd}: {f} differs");
    }
}

#[test]
fn orbits_csv_lists_every_period() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(holiv(&["orbits"], "period_max = 2\n", d.path()), 0);
    let text = String::from_utf8(read(d.path(), "orbits.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["orbit_id", "period", "primitive", "points"]);
    let mut per_period = [0usize; 3];
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let n: usize = rec[1].parse().unwrap();
        per_period[n] += rec[3].split(';').count();
    }
    // tr(M^n) - 2 fixed points of M^n
    assert_eq!(per_period[1], 1);
    assert_eq!(per_period[2], 5);
    let manifest = json(d.path(), "manifest.json");
    assert_eq!(manifest["command"], "orbits");
    assert_eq!(manifest["status"], "ok");
    assert!(manifest.get("wall_time_s").is_none());
    assert!(manifest["config"].get("out").is_none());
}

#[test]
fn reruns_are_byte_identical() {
    assert_reruns_identical("orbits", "period_max = 5\n");
    assert_reruns_identical("wilson", "period_max = 4\nrank = 2\n");
    assert_reruns_identical("repstab-sweep", "samples = 4\nsweep = [1e-2, 1e-3]\n");
    assert_reruns_identical("surface-sweep", "rank = 1\nlength_max = 5.0\nsweep = [1e-2, 1e-3, 0.0]\n");
}

#[test]
fn livsic_run_writes_report_and_grid() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "rank = 1\ngrid = 8\nlivsic_target = \"gauge\"\n";
    assert_eq!(holiv(&["livsic", "--seed", "3", "--dump-stages"], cfg, d.path()), 0);
    let report = json(d.path(), "livsic_report.json");
    assert!(report.is_object());
    let grid = read(d.path(), "livsic_p.bin");
    assert!(!grid.is_empty());
    assert!(outputs(d.path()).iter().any(|f| f.starts_with("stages/")));
}

#[test]
fn wilson_csv_is_unitary_rank_bounded() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(holiv(&["wilson"], "period_max = 3\nrank = 2\n", d.path()), 0);
    let text = String::from_utf8(read(d.path(), "wilson.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let (re, im): (f64, f64) = (rec[2].parse().unwrap(), rec[3].parse().unwrap());
        assert!(re.hypot(im) <= 2.0 + 1e-12);
        n += 1;
    }
    assert!(n > 0);
}

#[test]
fn config_errors_name_the_stage() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(holiv(&["orbits"], "bogus = 1\n", d.path()), 2);
    let err = json(d.path(), "error.json");
    assert_eq!(err["stage"], "config");
    assert_eq!(err["command"], "orbits");

    let d = tempfile::tempdir().unwrap();
    assert_eq!(holiv(&["orbits"], "map = [0, 1, 1, 0]\n", d.path()), 2);
    assert_eq!(json(d.path(), "error.json")["stage"], "config");
}

#[test]
fn failing_stage_is_reported_with_manifest() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nope.json");
    let cfg = format!("rank = 2\nconnection = {:?}\n", missing.display().to_string());
    assert_eq!(holiv(&["surface-sweep"], &cfg, d.path()), 2);
    assert_eq!(json(d.path(), "error.json")["stage"], "connection");
    assert_eq!(json(d.path(), "manifest.json")["status"], "error");
}

#[test]
fn timing_flag_adds_wall_time() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(holiv(&["orbits", "--timing"], "period_max = 2\n", d.path()), 0);
    assert!(json(d.path(), "manifest.json")["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn livsic_identical_pair_is_exact() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(holiv(&["livsic"], "rank = 2\ngrid = 8\nlivsic_target = \"identical\"\n", d.path()), 0);
    let report = json(d.path(), "livsic_report.json");
    assert!(report["sup_defect"].as_f64().unwrap() < 1e-6, "{report}");
}
