//! Subcommand implementations. Each writes its artifacts and returns the
//! bundle it wrote as `result.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use oamqkd::channel::{time_of_arrival, uncompensated_time_of_arrival};
use oamqkd::decoy::{combined_rate, gains_from_tallies, secret_key_rate, GainRecord};
use oamqkd::montecarlo::{
    detection_matrix, protocol_matrix, qber, simulate as run_simulation, write_event_log, Basis,
    DetectionReport, Intensity, QberPoint, RunOptions, SimulationOutput, TallyCounts,
};
use oamqkd::optics::StateSet;
use oamqkd::scenario::Scenario;
use oamqkd::statespace::{individual_attack_threshold, qber_threshold_collective, OamMode, Protocol};
use serde::{Deserialize, Serialize};

use crate::bundle::{ArrivalRow, Format, OutputDir, Provenance, QberRow, ResultBundle, ThresholdRow};
use crate::error::{CliError, CliResult};
use crate::svg;

pub const OUT_DIR_ENV: &str = "OAMQKD_OUT_DIR";
const DEFAULT_MATRIX_PULSES: u64 = 10_000_000;

#[derive(Debug, Parser)]
#[command(name = "oamqkd", version, about = "OAM-encoded QKD link simulator and key-rate calculator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pulse-level Monte Carlo of a scenario.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write every detection to events.jsonl.
        #[arg(long)]
        events: bool,
    },
    /// Decoy-state secret key rate from gain records, a simulation result or a preset.
    Keyrate(KeyrateArgs),
    /// Detection matrix and fidelity of a state family or protocol.
    Matrix {
        /// psi, xi, varphi, phi, 2D, 4D, MUX6 or MUX7.
        set: String,
        #[command(flatten)]
        common: Common,
    },
    /// Collective- and individual-attack QBER thresholds.
    Thresholds {
        /// Comma-separated dimensions.
        #[arg(long, value_delimiter = ',', default_value = "2,4")]
        dims: Vec<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Relative arrival times of the mode orders.
    Toa {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Built-in scenario: paper-2d, paper-4d, paper-mux or ideal.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    /// Number of pulses; accepts scientific notation such as 1e6.
    #[arg(long, value_name = "N", value_parser = parse_count)]
    pub pulses: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", env = OUT_DIR_ENV, default_value = "oamqkd-out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::All)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct KeyrateArgs {
    /// Gain records (TOML or JSON) with optional rep_rate_hz and f_ec.
    #[arg(long, value_name = "PATH", conflicts_with = "tallies")]
    pub gains: Option<PathBuf>,
    /// result.json of a previous `simulate` run.
    #[arg(long, value_name = "PATH")]
    pub tallies: Option<PathBuf>,
    /// Error-correction efficiency.
    #[arg(long)]
    pub f_ec: Option<f64>,
    #[arg(long)]
    pub rep_rate_hz: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

/// Parses a positive integer count, also in scientific notation.
pub fn parse_count(s: &str) -> Result<u64, String> {
    let cleaned = s.replace('_', "");
    if let Ok(n) = cleaned.parse::<u64>() {
        return if n > 0 { Ok(n) } else { Err("must be positive".into()) };
    }
    let v: f64 = cleaned.parse().map_err(|_| format!("not a number: {s}"))?;
    if !((1.0..=9.007_199_254_740_992e15).contains(&v) && v.fract() == 0.0) {
        return Err(format!("{s} is not a positive whole number"));
    }
    Ok(v as u64)
}

pub fn load_scenario(common: &Common) -> CliResult<Scenario> {
    let mut s = match (&common.config, &common.preset) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either --config or --preset, not both".into())),
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read scenario {}: {e}", path.display())))?;
            Scenario::from_toml_str(&text)?
        }
        (None, Some(name)) => Scenario::preset(name)?,
        (None, None) => Scenario::default(),
    };
    if let Some(seed) = common.seed {
        s.run.seed = seed;
    }
    if let Some(n) = common.pulses {
        s.run.n_pulses = Some(n);
    }
    s.validate()?;
    Ok(s)
}

pub fn run(cli: &Cli) -> CliResult<(ResultBundle, Vec<PathBuf>)> {
    match &cli.command {
        Command::Simulate { common, events } => simulate(common, *events),
        Command::Keyrate(args) => keyrate(args),
        Command::Matrix { set, common } => matrix(set, common),
        Command::Thresholds { dims, common } => thresholds(dims, common),
        Command::Toa { common } => toa(common),
    }
}

fn finish(mut out: OutputDir, bundle: ResultBundle) -> CliResult<(ResultBundle, Vec<PathBuf>)> {
    out.json("result.json", &bundle)?;
    Ok((bundle, out.written().to_vec()))
}

#[derive(Serialize)]
struct TallyCsvRow {
    protocol: Protocol,
    intensity: Intensity,
    prep_basis: Basis,
    state: usize,
    meas_basis: Basis,
    pulses: u64,
    clicks_0: u64,
    clicks_1: u64,
    clicks_2: u64,
    clicks_3: u64,
    no_click: u64,
    multi_click: u64,
}

fn tally_rows(t: &TallyCounts) -> Vec<TallyCsvRow> {
    t.iter()
        .map(|(k, v)| TallyCsvRow {
            protocol: k.protocol,
            intensity: k.intensity,
            prep_basis: k.prep_basis,
            state: k.state,
            meas_basis: k.meas_basis,
            pulses: v.counts.pulses,
            clicks_0: v.counts.clicks[0],
            clicks_1: v.counts.clicks[1],
            clicks_2: v.counts.clicks[2],
            clicks_3: v.counts.clicks[3],
            no_click: v.counts.no_click,
            multi_click: v.counts.multi_click,
        })
        .collect()
}

#[derive(Serialize)]
struct SeriesCsvRow {
    window_start_s: f64,
    basis: Basis,
    qber: Option<f64>,
    stderr: Option<f64>,
    clicks: u64,
}

#[derive(Serialize)]
struct KeyRateCsvRow<'a> {
    label: &'a str,
    dimension: u32,
    q_z: f64,
    e_z: f64,
    y0_z: f64,
    y1_z: f64,
    q1_z: f64,
    e1_x: f64,
    delta_leak: f64,
    r_bits_per_s: f64,
    r_bits_per_s_stderr: Option<f64>,
}

fn write_key_rates(out: &mut OutputDir, bundle: &ResultBundle) -> CliResult<()> {
    let rows: Vec<KeyRateCsvRow> = bundle
        .key_rates
        .iter()
        .map(|r| KeyRateCsvRow {
            label: &r.label,
            dimension: r.dimension,
            q_z: r.q_z,
            e_z: r.e_z,
            y0_z: r.y0_z,
            y1_z: r.y1_z,
            q1_z: r.q1_z,
            e1_x: r.e1_x,
            delta_leak: r.delta_leak,
            r_bits_per_s: r.r_bits_per_s,
            r_bits_per_s_stderr: r.r_bits_per_s_stderr,
        })
        .collect();
    if !rows.is_empty() {
        out.csv("keyrate.csv", &rows)?;
    }
    Ok(())
}

fn mux_total(bundle: &ResultBundle) -> Option<f64> {
    let mux: Vec<f64> = bundle
        .key_rates
        .iter()
        .filter(|r| r.label == Protocol::Mux6.label() || r.label == Protocol::Mux7.label())
        .map(|r| r.r_bits_per_s)
        .collect();
    (mux.len() == 2).then(|| combined_rate(&mux))
}

pub fn simulate(common: &Common, events: bool) -> CliResult<(ResultBundle, Vec<PathBuf>)> {
    let s = load_scenario(common)?;
    let n = s.pulses();
    let mut output = run_simulation(
        s.protocol,
        &s,
        RunOptions {
            n_pulses: n,
            seed: s.run.seed,
            window_s: Some(s.run.window_s),
            record_events: events,
        },
    )?;
    let mut out = OutputDir::create(&common.out, common.format)?;
    let mut bundle = ResultBundle::new(Provenance::new("simulate", s.to_toml_string(), Some(s.run.seed), Some(n)));

    for &protocol in s.protocol.keys() {
        for intensity in Intensity::ALL {
            for basis in Basis::ALL {
                if let Some(q) = qber(&output.tallies, protocol, intensity, basis) {
                    bundle.qber.push(QberRow {
                        protocol,
                        intensity,
                        basis,
                        errors: q.errors,
                        clicks: q.clicks,
                        qber: q.qber,
                        stderr: q.stderr,
                    });
                }
            }
        }
        match gains_from_tallies(&output.tallies, protocol, s.source.intensities)
            .and_then(|g| secret_key_rate(&g, s.source.rep_rate_hz, 1.0))
        {
            Ok(r) => bundle.key_rates.push(r),
            Err(e) => bundle.warnings.push(format!("no key rate for {protocol}: {e}")),
        }
    }
    bundle.combined_key_rate_bits_per_s = mux_total(&bundle);

    out.csv("tallies.csv", &tally_rows(&output.tallies))?;
    out.csv("qber.csv", &bundle.qber)?;
    for (protocol, points) in &output.series {
        write_series(&mut out, *protocol, points)?;
    }
    write_key_rates(&mut out, &bundle)?;
    if events {
        let path = common.out.join("events.jsonl");
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        write_event_log(&output.events, std::io::BufWriter::new(file)).map_err(|e| CliError::io(&path, e))?;
        output.events.clear();
    }
    bundle.simulation = Some(output);
    finish(out, bundle)
}

fn write_series(out: &mut OutputDir, protocol: Protocol, points: &[QberPoint]) -> CliResult<()> {
    let rows: Vec<SeriesCsvRow> = points
        .iter()
        .map(|p| SeriesCsvRow {
            window_start_s: p.window_start_s,
            basis: p.basis,
            qber: p.qber,
            stderr: p.stderr,
            clicks: p.clicks,
        })
        .collect();
    out.csv(&format!("qber_series_{}.csv", protocol.label()), &rows)?;
    let series: Vec<svg::Series> = Basis::ALL
        .iter()
        .map(|&b| svg::Series {
            name: if b == Basis::Z { "Z" } else { "X" },
            points: points
                .iter()
                .filter(|p| p.basis == b)
                .filter_map(|p| p.qber.map(|q| (p.window_start_s, 100.0 * q)))
                .collect(),
        })
        .collect();
    let d = protocol.dimension() as u32;
    let mut levels = vec![("collective limit", 100.0 * qber_threshold_collective(d))];
    if let Some(i) = individual_attack_threshold(d) {
        levels.push(("individual limit", 100.0 * i));
    }
    let doc = svg::line_chart(
        &format!("QBER over time, {protocol}"),
        "time (s)",
        "QBER (%)",
        &series,
        &levels,
    );
    out.svg(&format!("qber_series_{}.svg", protocol.label()), &doc)
}

/// Gain records and the rate parameters that go with them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rep_rate_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_ec: Option<f64>,
    pub records: Vec<GainRecord>,
}

fn read_gain_file(path: &Path) -> CliResult<GainFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read gain records {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn records_from_bundle(path: &Path) -> CliResult<(Vec<GainRecord>, f64)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let bundle = ResultBundle::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let sim: SimulationOutput = bundle
        .simulation
        .ok_or_else(|| CliError::Config(format!("{} holds no simulation tallies", path.display())))?;
    let scenario = Scenario::from_toml_str(&bundle.provenance.input)?;
    let records = sim
        .experiment
        .keys()
        .iter()
        .map(|&p| gains_from_tallies(&sim.tallies, p, scenario.source.intensities))
        .collect::<oamqkd::Result<Vec<_>>>()?;
    Ok((records, scenario.source.rep_rate_hz))
}

fn preset_records(preset: Option<&str>) -> CliResult<Vec<GainRecord>> {
    let protocols: &[Protocol] = match preset.map(str::to_ascii_lowercase).as_deref() {
        None => &Protocol::ALL,
        Some("paper-2d") => &[Protocol::TwoD],
        Some("paper-4d") => &[Protocol::FourD],
        Some("paper-mux") => &[Protocol::Mux6, Protocol::Mux7],
        Some(other) => {
            return Err(CliError::Config(format!(
                "preset {other:?} has no reported gains; use paper-2d, paper-4d or paper-mux"
            )))
        }
    };
    Ok(protocols.iter().map(|&p| GainRecord::reported(p)).collect())
}

pub fn keyrate(args: &KeyrateArgs) -> CliResult<(ResultBundle, Vec<PathBuf>)> {
    let default_rate = oamqkd::montecarlo::SourceSpec::default().rep_rate_hz;
    let (records, file_rate, file_f_ec) = if let Some(path) = &args.gains {
        let f = read_gain_file(path)?;
        (f.records, f.rep_rate_hz, f.f_ec)
    } else if let Some(path) = &args.tallies {
        let (records, rate) = records_from_bundle(path)?;
        (records, Some(rate), None)
    } else {
        (preset_records(args.common.preset.as_deref())?, None, None)
    };
    if records.is_empty() {
        return Err(CliError::Config("no gain records given".into()));
    }
    let input = GainFile {
        rep_rate_hz: Some(args.rep_rate_hz.or(file_rate).unwrap_or(default_rate)),
        f_ec: Some(args.f_ec.or(file_f_ec).unwrap_or(1.0)),
        records,
    };
    let (rate, f_ec) = (input.rep_rate_hz.unwrap_or(default_rate), input.f_ec.unwrap_or(1.0));
    let text = serde_json::to_string(&input).map_err(|e| CliError::Invariant(e.to_string()))?;
    let mut bundle = ResultBundle::new(Provenance::new("keyrate", text, None, None));
    for g in &input.records {
        let r = secret_key_rate(g, rate, f_ec)?;
        bundle.warnings.extend(r.warnings.iter().map(|w| format!("{}: {w}", r.label)));
        bundle.key_rates.push(r);
    }
    bundle.combined_key_rate_bits_per_s = mux_total(&bundle);

    let mut out = OutputDir::create(&args.common.out, args.common.format)?;
    write_key_rates(&mut out, &bundle)?;
    if bundle.key_rates.len() > 1 {
        let mut bars: Vec<(String, f64)> = bundle
            .key_rates
            .iter()
            .map(|r| (r.label.clone(), r.kbits_per_s()))
            .collect();
        if let Some(total) = bundle.combined_key_rate_bits_per_s {
            bars.push(("MUX total".into(), total / 1e3));
        }
        out.svg("keyrate.svg", &svg::bar_chart("Secret key rate", "kbit/s", &bars))?;
    }
    finish(out, bundle)
}

enum MatrixTarget {
    Set(StateSet),
    Protocol(Protocol),
}

impl FromStr for MatrixTarget {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        if let Ok(set) = s.parse::<StateSet>() {
            return Ok(MatrixTarget::Set(set));
        }
        s.parse::<Protocol>().map(MatrixTarget::Protocol).map_err(|_| {
            CliError::Config(format!("unknown set {s:?}; expected psi, xi, varphi, phi, 2D, 4D, MUX6 or MUX7"))
        })
    }
}

pub fn matrix(set: &str, common: &Common) -> CliResult<(ResultBundle, Vec<PathBuf>)> {
    let target: MatrixTarget = set.parse()?;
    let s = load_scenario(common)?;
    let n = common.pulses.unwrap_or(DEFAULT_MATRIX_PULSES);
    let seed = s.run.seed;
    let report: DetectionReport = match target {
        MatrixTarget::Set(set) => detection_matrix(set, n, &s, seed)?,
        MatrixTarget::Protocol(p) => protocol_matrix(p, n, &s, seed)?,
    };
    let mut out = OutputDir::create(&common.out, common.format)?;
    let name = format!("matrix_{}", report.label);
    let header: Vec<String> = std::iter::once("state".to_string()).chain(report.columns.iter().cloned()).collect();
    let row = |label: &String, vals: Vec<String>| std::iter::once(label.clone()).chain(vals).collect::<Vec<_>>();
    let normalized: Vec<Vec<String>> = report
        .rows
        .iter()
        .zip(&report.matrix)
        .map(|(l, r)| row(l, r.iter().map(|v| v.to_string()).collect()))
        .collect();
    let counts: Vec<Vec<String>> = report
        .rows
        .iter()
        .zip(&report.counts)
        .map(|(l, r)| row(l, r.iter().map(|v| v.to_string()).collect()))
        .collect();
    out.csv_records(&format!("{name}.csv"), &header, &normalized)?;
    out.csv_records(&format!("{name}_counts.csv"), &header, &counts)?;
    let title = format!(
        "Detection matrix {}, fidelity {:.2} ± {:.2} %",
        report.label,
        100.0 * report.fidelity,
        100.0 * report.fidelity_stderr
    );
    out.svg(&format!("{name}.svg"), &svg::heatmap(&title, &report.rows, &report.columns, &report.matrix))?;
    let mut bundle = ResultBundle::new(Provenance::new("matrix", s.to_toml_string(), Some(seed), Some(n)));
    bundle.matrices.push(report);
    finish(out, bundle)
}

pub fn thresholds(dims: &[u32], common: &Common) -> CliResult<(ResultBundle, Vec<PathBuf>)> {
    if let Some(bad) = dims.iter().find(|&&d| d < 2) {
        return Err(CliError::Config(format!("dimension {bad} must be at least 2")));
    }
    let input = dims.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    let mut bundle = ResultBundle::new(Provenance::new("thresholds", input, None, None));
    bundle.thresholds = dims
        .iter()
        .map(|&d| ThresholdRow {
            dimension: d,
            collective: qber_threshold_collective(d),
            individual: individual_attack_threshold(d),
        })
        .collect();
    let mut out = OutputDir::create(&common.out, common.format)?;
    out.csv("thresholds.csv", &bundle.thresholds)?;
    finish(out, bundle)
}

pub fn toa(common: &Common) -> CliResult<(ResultBundle, Vec<PathBuf>)> {
    let s = load_scenario(common)?;
    let mut rows = Vec::new();
    for (order, _) in s.fiber.delay_ns_per_km.iter() {
        let mode = OamMode::new(order as i32)?;
        rows.push(ArrivalRow {
            order,
            fiber_ns: uncompensated_time_of_arrival(mode, &s.fiber)?,
            compensated_ns: time_of_arrival(mode, &s.fiber)?,
        });
    }
    let mut bundle = ResultBundle::new(Provenance::new("toa", s.to_toml_string(), None, None));
    bundle.arrival_times = rows;
    let mut out = OutputDir::create(&common.out, common.format)?;
    out.csv("toa.csv", &bundle.arrival_times)?;
    let panel = |name: &str, pick: fn(&ArrivalRow) -> f64| {
        (
            name.to_string(),
            bundle
                .arrival_times
                .iter()
                .map(|r| (format!("|{}|", r.order), pick(r)))
                .collect::<Vec<_>>(),
        )
    };
    let doc = svg::pulse_trains(
        "Mode arrival times",
        &[panel("fiber only", |r| r.fiber_ns), panel("after compensation", |r| r.compensated_ns)],
        s.source.pulse_width_s * 1e9,
    );
    out.svg("toa.svg", &doc)?;
    finish(out, bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accept_scientific_notation() {
        assert_eq!(parse_count("1e6"), Ok(1_000_000));
        assert_eq!(parse_count("2.5e3"), Ok(2_500));
        assert_eq!(parse_count("1_000"), Ok(1_000));
        assert!(parse_count("0").is_err());
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
        assert!(parse_count("abc").is_err());
    }

    #[test]
    fn matrix_targets_parse() {
        assert!(matches!("ψ".parse::<MatrixTarget>(), Ok(MatrixTarget::Set(StateSet::Psi))));
        assert!(matches!("mux7".parse::<MatrixTarget>(), Ok(MatrixTarget::Protocol(Protocol::Mux7))));
        assert!("chi".parse::<MatrixTarget>().is_err());
    }

    #[test]
    fn presets_choose_reported_records() {
        assert_eq!(preset_records(None).unwrap().len(), 4);
        assert_eq!(preset_records(Some("paper-mux")).unwrap().len(), 2);
        assert!(preset_records(Some("ideal")).is_err());
    }
}
