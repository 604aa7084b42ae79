use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ttperc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttperc")).current_dir(dir).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_SNN: &str = "
[events]
samples = 12
[snn]
holdout = 0.25
[snn.network]
conv1 = { channels = 2, kernel = 5, stride = 2 }
conv2 = { channels = 2, kernel = 5, stride = 2 }
hidden = 16
[snn.train]
epochs = 1
batch_size = 4
";

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ttperc(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(ttperc(dir.path(), &["spin", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn missing_required_field_names_it() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", "seed = 1\n\n[simulate]\nduration_s = 0.5\n");
    let o = ttperc(dir.path(), &["--config", "run.toml", "simulate"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("trajectories") && err.contains("line 3"), "{err}");
}

#[test]
fn missing_section_and_unknown_key_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ttperc(dir.path(), &["spin"]).status.code(), Some(3));
    write(dir.path(), "run.toml", "[spin]\nrates = [10.0]\nspeed = 3\n");
    let o = ttperc(dir.path(), &["--config", "run.toml", "spin"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("speed"));
}

#[test]
fn missing_config_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ttperc(dir.path(), &["--config", "absent.toml", "spin"]).status.code(), Some(4));
}

#[test]
fn simulate_minimal_config() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", "[simulate]\ntrajectories = 1\nimages = 4\nevent_window_us = 5000\n");
    let o = ttperc(dir.path(), &["--config", "run.toml", "--out", "sim", "--quiet", "simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("sim");
    for f in ["trajectory_000.csv", "events_000_cam4.evs", "events_000_cam5.evs", "orientation_000.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_dir(out.join("images_000")).unwrap().count(), 4);
    assert!(!out.join("trajectory_001.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "simulate");
    assert_eq!(manifest["config_path"], "run.toml");
    assert!(manifest["version"].is_string());
}

#[test]
fn seeded_simulation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", "[simulate]\ntrajectories = 2\nimages = 3\nevent_window_us = 4000\n");
    for out in ["a", "b"] {
        assert!(ttperc(dir.path(), &["--config", "run.toml", "--seed", "7", "--out", out, "-q", "simulate"]).status.success());
    }
    for f in ["trajectory_001.csv", "events_001_cam4.evs", "orientation_000.csv", "images_001/frame_0002.pgm"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap());
    }
    assert!(ttperc(dir.path(), &["--config", "run.toml", "--seed", "8", "--out", "c", "-q", "simulate"]).status.success());
    assert_ne!(
        std::fs::read(dir.path().join("a/trajectory_000.csv")).unwrap(),
        std::fs::read(dir.path().join("c/trajectory_000.csv")).unwrap()
    );
}

#[test]
fn spin_sweep_rejects_bad_rates() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "empty.toml", "[spin]\nrates = []\n");
    write(dir.path(), "high.toml", "[spin]\nrates = [100.0, 300.0]\n");
    write(dir.path(), "zero.toml", "[spin]\nrates = [0.0]\n");
    for cfg in ["empty.toml", "high.toml", "zero.toml"] {
        assert_eq!(ttperc(dir.path(), &["--config", cfg, "spin"]).status.code(), Some(3), "{cfg}");
    }
}

#[test]
fn spin_sweep_flags_rates_beyond_nyquist() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", "[spin]\nrates = [50.0, 200.0]\naxes = 2\n");
    let o = ttperc(dir.path(), &["--config", "run.toml", "-q", "spin"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/spin_sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let rate: f64 = r.split(',').next().unwrap().parse().unwrap();
        assert_eq!(r.ends_with("true"), rate < 175.0, "{r}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/spin_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["envelope_ok"], true);
    assert_eq!(summary["nyquist_rps"], 175.0);
}

#[test]
fn calibrate_reports_every_camera() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", "[calibrate]\nposes = 30\nnoise_px = 0.3\n");
    let o = ttperc(dir.path(), &["--config", "run.toml", "-q", "calibrate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mae = std::fs::read_to_string(dir.path().join("out/mae.csv")).unwrap();
    let lines: Vec<&str> = mae.lines().collect();
    assert_eq!(lines[0], "camera,name,mean_px,std_px,count");
    assert_eq!(lines.len(), 7);

    // Calibrating again from the written detections gives the same rig.
    let o = ttperc(dir.path(), &["--out", "again", "-q", "calibrate", "--detections", "out/detections.csv", "--gauge", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(dir.path().join("out/rig.json")).unwrap(),
        std::fs::read(dir.path().join("again/rig.json")).unwrap()
    );
    let o = ttperc(dir.path(), &["-q", "calibrate", "--detections", "missing.csv"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn snn_eval_mirrors_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", SMALL_SNN);
    let d = dir.path();
    assert!(ttperc(d, &["--config", "run.toml", "--out", "data", "-q", "events"]).status.success());
    assert!(d.join("data/labels.csv").is_file());
    for t in ["8", "16", "32"] {
        let o = ttperc(d, &["--config", "run.toml", "--out", &format!("t{t}"), "-q", "snn", "train", "--data", "data", "--steps", t]);
        assert!(o.status.success(), "{}", stderr(&o));
        let log = std::fs::read_to_string(d.join(format!("t{t}/train_log.csv"))).unwrap();
        assert!(log.starts_with("epoch,loss,px_error,spikes_l1,spikes_l2,spikes_l3,spikes_l4,synops"));
    }
    let o = ttperc(
        d,
        &["--config", "run.toml", "--out", "eval", "-q", "snn", "eval", "--data", "data", "--weights", "t32/weights.snnw", "t8/weights.snnw", "t16/weights.snnw"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(d.join("eval/table2.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "steps,networks,mean_px,std_px,synops");
    let steps: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["8", "16", "32"]);

    let o = ttperc(d, &["--out", "eval", "-q", "report"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_to_string(d.join("eval/report.md")).unwrap().contains("| 16 | 1 |"));
}

#[test]
fn snn_compare_writes_both_losses() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "run.toml", SMALL_SNN);
    assert!(ttperc(d, &["--config", "run.toml", "--out", "data", "-q", "events"]).status.success());
    let o = ttperc(d, &["--config", "run.toml", "--out", "cmp", "-q", "snn", "compare", "--data", "data", "--steps", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.join("cmp/loss_activity.csv")).unwrap();
    assert!(csv.contains("\nmse,") && csv.contains("\ncross_entropy,"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("cmp/loss_activity.json")).unwrap()).unwrap();
    assert!(v["synops_ratio"].as_f64().unwrap() > 0.0);
}

#[test]
fn snn_missing_dataset_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ttperc(dir.path(), &["snn", "train", "--data", "nowhere"]).status.code(), Some(4));
}

#[test]
fn report_without_results_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    assert_eq!(ttperc(dir.path(), &["report", "--input", "empty"]).status.code(), Some(4));
}
