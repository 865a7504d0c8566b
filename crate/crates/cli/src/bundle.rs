//! The JSON document every command writes, and the file writers.

use std::fs;
use std::path::{Path, PathBuf};

use oamqkd::decoy::KeyRateReport;
use oamqkd::montecarlo::{Basis, DetectionReport, Intensity, SimulationOutput};
use oamqkd::statespace::Protocol;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Enough to rerun a command and get the same numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub command: String,
    /// SHA-256 of `input`.
    pub config_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_pulses: Option<u64>,
    /// Canonical text of the scenario or gain records used.
    pub input: String,
}

impl Provenance {
    pub fn new(command: &str, input: String, seed: Option<u64>, n_pulses: Option<u64>) -> Self {
        Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256: sha256_hex(input.as_bytes()),
            seed,
            n_pulses,
            input,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QberRow {
    pub protocol: Protocol,
    pub intensity: Intensity,
    pub basis: Basis,
    pub errors: u64,
    pub clicks: u64,
    pub qber: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub dimension: u32,
    pub collective: f64,
    pub individual: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRow {
    pub order: u32,
    pub fiber_ns: f64,
    pub compensated_ns: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationOutput>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qber: Vec<QberRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub matrices: Vec<DetectionReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub key_rates: Vec<KeyRateReport>,
    /// Sum of the multiplexed key rates, when both are present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined_key_rate_bits_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<ThresholdRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arrival_times: Vec<ArrivalRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ResultBundle {
    pub fn new(provenance: Provenance) -> Self {
        ResultBundle {
            provenance,
            simulation: None,
            qber: Vec::new(),
            matrices: Vec::new(),
            key_rates: Vec::new(),
            combined_key_rate_bits_per_s: None,
            thresholds: Vec::new(),
            arrival_times: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Svg,
    #[default]
    All,
}

/// Writes the artifacts of one command into a directory, filtered by format.
pub struct OutputDir {
    dir: PathBuf,
    format: Format,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path, format: Format) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            format,
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn wants(&self, f: Format) -> bool {
        self.format == Format::All || self.format == f
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// Serializes `rows` with a header taken from the row type.
    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> CliResult<()> {
        if !self.wants(Format::Csv) {
            return Ok(());
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| CliError::Invariant(format!("csv encoding: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Invariant(format!("csv encoding: {e}")))?;
        self.write(name, &bytes)
    }

    /// CSV from a header and pre-formatted records.
    pub fn csv_records(&mut self, name: &str, header: &[String], records: &[Vec<String>]) -> CliResult<()> {
        if !self.wants(Format::Csv) {
            return Ok(());
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let enc = |e: csv::Error| CliError::Invariant(format!("csv encoding: {e}"));
        w.write_record(header).map_err(enc)?;
        for r in records {
            w.write_record(r).map_err(enc)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Invariant(format!("csv encoding: {e}")))?;
        self.write(name, &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        if !self.wants(Format::Json) {
            return Ok(());
        }
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Invariant(format!("json encoding: {e}")))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn svg(&mut self, name: &str, doc: &str) -> CliResult<()> {
        if !self.wants(Format::Svg) {
            return Ok(());
        }
        self.write(name, doc.as_bytes())
    }
}
