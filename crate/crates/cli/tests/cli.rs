use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oamqkd::decoy::GainRecord;
use oamqkd::montecarlo::DecoyIntensities;
use oamqkd::statespace::qber_threshold_collective;
use oamqkd_cli::commands::GainFile;
use oamqkd_cli::ResultBundle;
use tempfile::TempDir;

fn oamqkd(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oamqkd"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("OAMQKD_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> ResultBundle {
    let o = oamqkd(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("result.json")).unwrap();
    ResultBundle::from_json(&text).unwrap()
}

fn csv_rows(path: PathBuf) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    r.records().map(Result::unwrap).collect()
}

fn header(path: PathBuf) -> Vec<String> {
    let mut r = csv::Reader::from_path(&path).unwrap();
    r.headers().unwrap().iter().map(str::to_string).collect()
}

#[test]
fn ideal_link_has_no_errors() {
    let tmp = TempDir::new().unwrap();
    let b = ok(&["simulate", "--preset", "ideal", "--pulses", "2e6", "--seed", "3"], tmp.path());
    assert!(!b.qber.is_empty());
    for row in &b.qber {
        assert_eq!(row.errors, 0, "{row:?}");
    }
    assert!(b.qber.iter().any(|r| r.clicks > 0));
    for name in ["tallies.csv", "qber.csv", "qber_series_2D.csv", "qber_series_2D.svg", "result.json"] {
        assert!(tmp.path().join(name).exists(), "{name} missing");
    }
}

#[test]
fn simulate_presets_cover_every_key() {
    for (preset, labels) in [
        ("paper-2d", vec!["2D"]),
        ("paper-4d", vec!["4D"]),
        ("paper-mux", vec!["MUX6", "MUX7"]),
    ] {
        let tmp = TempDir::new().unwrap();
        let b = ok(&["simulate", "--preset", preset, "--pulses", "2e6", "--seed", "1"], tmp.path());
        let sim = b.simulation.as_ref().expect("simulation recorded");
        assert_eq!(sim.n_pulses, 2_000_000);
        assert_eq!(b.provenance.seed, Some(1));
        sim.tallies.check_conservation().unwrap();
        let mut seen: Vec<_> = b.qber.iter().map(|r| r.protocol.label()).collect();
        seen.dedup();
        assert_eq!(seen, labels, "{preset}");
    }
}

#[test]
fn qber_series_columns() {
    let tmp = TempDir::new().unwrap();
    let o = oamqkd(&["simulate", "--preset", "paper-2d", "--pulses", "1e6", "--format", "csv"], tmp.path());
    assert!(o.status.success());
    assert_eq!(
        header(tmp.path().join("qber_series_2D.csv")),
        ["window_start_s", "basis", "qber", "stderr", "clicks"]
    );
    assert!(!tmp.path().join("result.json").exists());
    assert!(!tmp.path().join("qber_series_2D.svg").exists());
}

#[test]
fn event_log_is_json_lines() {
    let tmp = TempDir::new().unwrap();
    ok(&["simulate", "--preset", "paper-2d", "--pulses", "1e6", "--events"], tmp.path());
    let text = fs::read_to_string(tmp.path().join("events.jsonl")).unwrap();
    assert!(text.lines().count() > 0);
    for line in text.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn keyrate_presets_and_multiplexed_total() {
    let tmp = TempDir::new().unwrap();
    let b = ok(&["keyrate", "--preset", "paper-mux"], tmp.path());
    assert_eq!(b.key_rates.len(), 2);
    let sum: f64 = b.key_rates.iter().map(|r| r.r_bits_per_s).sum();
    assert_eq!(b.combined_key_rate_bits_per_s, Some(sum));
    assert_eq!(csv_rows(tmp.path().join("keyrate.csv")).len(), 2);

    let all = ok(&["keyrate"], tmp.path());
    assert_eq!(all.key_rates.len(), 4);
}

#[test]
fn keyrate_above_threshold_is_zero_with_warning() {
    let tmp = TempDir::new().unwrap();
    let e = qber_threshold_collective(2) + 0.05;
    let file = GainFile {
        rep_rate_hz: Some(6e8),
        f_ec: Some(1.0),
        records: vec![GainRecord::matched(2, DecoyIntensities::default(), 1.6e-4, e, e).unwrap()],
    };
    let path = tmp.path().join("gains.json");
    fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
    let out = tmp.path().join("out");
    let o = oamqkd(&["keyrate", "--gains", path.to_str().unwrap()], &out);
    assert!(o.status.success());
    let b = ResultBundle::from_json(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(b.key_rates[0].r_bits_per_s, 0.0);
    assert!(!b.key_rates[0].warnings.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn keyrate_from_simulated_tallies() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("balanced.toml");
    fs::write(
        &config,
        "[source]\np_z = 0.5\np_x = 0.5\n[source.intensities]\nmu = 0.5\nnu = 0.1\np_mu = 0.5\np_nu = 0.3\np_omega = 0.2\n",
    )
    .unwrap();
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--config", config.to_str().unwrap(), "--pulses", "2e6", "--seed", "5"], &sim);
    let out = tmp.path().join("rate");
    let b = ok(&["keyrate", "--tallies", sim.join("result.json").to_str().unwrap()], &out);
    assert_eq!(b.key_rates.len(), 1);
    assert_eq!(b.key_rates[0].dimension, 2);
}

#[test]
fn thresholds_table() {
    let tmp = TempDir::new().unwrap();
    let b = ok(&["thresholds", "--dims", "2,3,4"], tmp.path());
    let dims: Vec<u32> = b.thresholds.iter().map(|t| t.dimension).collect();
    assert_eq!(dims, [2, 3, 4]);
    assert!((b.thresholds[0].collective - 0.110).abs() < 1e-3);
    assert!((b.thresholds[2].collective - 0.189).abs() < 1e-3);
    assert!(b.thresholds[1].individual.is_none());
    assert_eq!(header(tmp.path().join("thresholds.csv")), ["dimension", "collective", "individual"]);
}

#[test]
fn arrival_times_scale_with_length() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("long.toml");
    fs::write(
        &config,
        "[fiber]\nlength_km = 2.4\ncompensation = \"none\"\n",
    )
    .unwrap();
    let b = ok(&["toa", "--config", config.to_str().unwrap()], &tmp.path().join("out"));
    let seven = b.arrival_times.iter().find(|r| r.order == 7).unwrap();
    assert!((seven.fiber_ns - 30.0).abs() < 1e-9);
    assert!((seven.compensated_ns - 30.0).abs() < 1e-9);

    let matched = ok(&["toa"], &tmp.path().join("default"));
    let seven = matched.arrival_times.iter().find(|r| r.order == 7).unwrap();
    assert!((seven.fiber_ns - 15.0).abs() < 1e-9);
    assert_eq!(seven.compensated_ns, 0.0);
}

#[test]
fn ideal_matrix_is_exact() {
    let tmp = TempDir::new().unwrap();
    let b = ok(&["matrix", "xi", "--preset", "ideal", "--pulses", "1e6"], tmp.path());
    assert_eq!(b.matrices.len(), 1);
    assert!((b.matrices[0].fidelity - 1.0).abs() < 1e-12);
    let rows = csv_rows(tmp.path().join("matrix_xi.csv"));
    assert_eq!(rows.len(), 4);
    assert!(tmp.path().join("matrix_xi_counts.csv").exists());
    assert!(tmp.path().join("matrix_xi.svg").exists());
}

#[test]
fn output_directory_from_environment() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_oamqkd"))
        .args(["thresholds"])
        .env("OAMQKD_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("thresholds.csv").exists());
}

#[test]
fn missing_config_exits_2() {
    let tmp = TempDir::new().unwrap();
    let o = oamqkd(&["simulate", "--config", "/nonexistent/scenario.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_field_names_its_path() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("bad.toml");
    fs::write(&config, "[detectors]\nefficiency = 1.5\n").unwrap();
    let o = oamqkd(&["simulate", "--config", config.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("efficiency"));

    fs::write(&config, "[fiber]\nlenght_km = 1.0\n").unwrap();
    let o = oamqkd(&["simulate", "--config", config.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = oamqkd(&["thresholds"], &blocker.join("sub"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn result_json_round_trips() {
    let tmp = TempDir::new().unwrap();
    let b = ok(&["simulate", "--preset", "paper-4d", "--pulses", "1e6", "--seed", "8"], tmp.path());
    let again = ResultBundle::from_json(&serde_json::to_string(&b).unwrap()).unwrap();
    assert_eq!(b, again);
}
