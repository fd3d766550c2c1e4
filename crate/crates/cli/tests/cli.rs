use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use optagg_core::scenario::{commensurate_symbol_count, AseSection, NoisePlacement, RxChannel};
use optagg_core::{golden, Scenario};
use tempfile::TempDir;

fn optagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optagg"))
        .args(args)
        .env_remove("OPTAGG_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn short(name: &str) -> Scenario {
    let mut s = golden(name).unwrap();
    s.transmitter.symbol_count = commensurate_symbol_count(&s, 400).unwrap();
    s
}

fn write_config(dir: &Path, file: &str, s: &Scenario) -> PathBuf {
    let p = dir.join(file);
    fs::write(&p, s.to_json()).unwrap();
    p
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn golden_list_names_nine_figures() {
    let o = optagg(&["golden", "list"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let names: Vec<&str> = out
        .lines()
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(names.len(), 9);
    assert_eq!(names[0], "fig5a_qpsk");
    assert!(names.iter().all(|n| n.starts_with("fig")));
}

#[test]
fn golden_show_round_trips() {
    let o = optagg(&["golden", "show", "fig6_qam16"]);
    assert!(o.status.success());
    let s = Scenario::from_json(&stdout(&o)).unwrap();
    assert_eq!(s, golden("fig6_qam16").unwrap());
    let o = optagg(&["golden", "show", "fig9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_writes_artifacts_and_replays_from_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "a.json", &short("fig5a_qpsk"));
    let out_a = tmp.path().join("a");
    let o = optagg(&["run", arg(&cfg), "--out", arg(&out_a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("QPSK"));
    for f in [
        "report.json",
        "constellation.csv",
        "spectrum.csv",
        "diagnostics.json",
        "manifest.json",
    ] {
        assert!(out_a.join(f).is_file(), "{f}");
    }
    let manifest = fs::read_to_string(out_a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 20240518"), "{manifest}");

    let out_b = tmp.path().join("b");
    let o = optagg(&[
        "run",
        arg(&out_a.join("manifest.json")),
        "--out",
        arg(&out_b),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.json", "constellation.csv", "spectrum.csv"] {
        assert_eq!(
            fs::read(out_a.join(f)).unwrap(),
            fs::read(out_b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_flag_overrides_scenario_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "a.json", &short("fig5a_qpsk"));
    let out = tmp.path().join("o");
    let o = optagg(&["run", arg(&cfg), "--out", arg(&out), "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 7"), "{manifest}");
}

#[test]
fn output_root_comes_from_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "a.json", &short("fig5a_qpsk"));
    let root = tmp.path().join("root");
    let o = Command::new(env!("CARGO_BIN_EXE_optagg"))
        .args(["run", arg(&cfg)])
        .env("OPTAGG_OUT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("fig5a_qpsk").join("report.json").is_file());
}

#[test]
fn grid_too_small_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let mut s = short("fig5a_qpsk");
    s.grid.sample_rate_hz = 64e9;
    let text = s.to_json();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, text).unwrap();
    let o = optagg(&["run", arg(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.sample_rate_hz"), "{}", stderr(&o));
}

#[test]
fn schema_violation_is_line_anchored() {
    let tmp = TempDir::new().unwrap();
    let text = short("fig5a_qpsk")
        .to_json()
        .replacen("\"seed\"", "\"sed\"", 1);
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, text).unwrap();
    let o = optagg(&["run", arg(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("line ") && e.contains("sed"), "{e}");
}

#[test]
fn missing_config_is_a_config_error() {
    let o = optagg(&["run", "/nonexistent/optagg.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pipeline_failure_exits_3_with_module() {
    let tmp = TempDir::new().unwrap();
    let mut s = short("fig5a_qpsk");
    s.receiver.channel = RxChannel::Parent1;
    s.link.ase = Some(AseSection {
        target_parent_evm_pct: Some(500.0),
        noise_psd: None,
        bpf_bandwidth_hz: 375e9,
        placement: NoisePlacement::AfterTransmitter,
    });
    let cfg = write_config(tmp.path(), "a.json", &s);
    let o = optagg(&["run", arg(&cfg)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("error: link:"), "{}", stderr(&o));
}

#[test]
fn sweep_writes_table_and_point_directories() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "a.json", &short("fig5a_qpsk"));
    let out = tmp.path().join("sw");
    let o = optagg(&[
        "sweep",
        arg(&cfg),
        "--param",
        "alpha",
        "--values",
        "0.8,1.0",
        "--jobs",
        "1",
        "--out",
        arg(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "value,evm_avg,evm_std,q_factor,ser");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.8,"));
    for p in ["point_000", "point_001"] {
        assert!(out.join(p).join("report.json").is_file(), "{p}");
    }
}

#[test]
fn sweep_argument_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "a.json", &short("fig5a_qpsk"));
    let o = optagg(&["sweep", arg(&cfg), "--param", "bias", "--values", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bias"));
    let o = optagg(&["sweep", arg(&cfg), "--param", "alpha", "--values"]);
    assert_eq!(o.status.code(), Some(2));
    let o = optagg(&["sweep", arg(&cfg), "--param", "alpha"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tune_writes_result_and_sensitivity() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "a.json", &short("fig5a_qpsk"));
    let out = tmp.path().join("t");
    let o = optagg(&["tune", arg(&cfg), "--out", arg(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("phi*"));
    for f in ["tune.json", "landscape.csv", "sensitivity.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let o = optagg(&["tune", arg(&cfg), "--target", "qam64"]);
    assert_eq!(o.status.code(), Some(2));
}
