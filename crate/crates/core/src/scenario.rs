//! Scenario files: every physical parameter of a run in one TOML document.
//!
//! All fields are optional and default to the laboratory values; unknown
//! fields are rejected with the path of the offending key.

use serde::{Deserialize, Serialize};

use crate::channel::{FiberSpec, OrderMap};
use crate::error::{Error, Result};
use crate::montecarlo::{DetectorSpec, Experiment, SourceSpec};
use crate::optics::{ModeSorterSpec, PrepErrors, ReceiverKind, ReceiverSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Names accepted by [`Scenario::preset`].
pub const PRESETS: [&str; 4] = ["paper-2d", "paper-4d", "paper-mux", "ideal"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Receivers {
    pub psi_xi: ReceiverSpec,
    pub varphi_phi: ReceiverSpec,
}

impl Default for Receivers {
    fn default() -> Self {
        Receivers {
            psi_xi: ReceiverSpec::psi_xi(),
            varphi_phi: ReceiverSpec::varphi_phi(),
        }
    }
}

/// Length and sampling of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    /// Overrides `duration_s` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_pulses: Option<u64>,
    /// Source time simulated, seconds.
    pub duration_s: f64,
    /// Width of the QBER windows, seconds.
    pub window_s: f64,
    pub seed: u64,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            n_pulses: None,
            duration_s: 1.0,
            window_s: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub schema_version: u32,
    pub protocol: Experiment,
    pub source: SourceSpec,
    pub fiber: FiberSpec,
    pub sorter: ModeSorterSpec,
    pub receivers: Receivers,
    pub detectors: DetectorSpec,
    pub preparation: PrepErrors,
    pub run: RunSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            schema_version: SCHEMA_VERSION,
            protocol: Experiment::TwoD,
            source: SourceSpec::default(),
            fiber: FiberSpec::default(),
            sorter: ModeSorterSpec::default(),
            receivers: Receivers::default(),
            detectors: DetectorSpec::default(),
            preparation: PrepErrors::default(),
            run: RunSpec::default(),
        }
    }
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("", e.to_string()))?;
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            Error::config(path, e.into_inner().message().to_string())
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario fields are all representable in TOML")
    }

    /// Built-in scenarios: the laboratory link for each experiment, and a
    /// lossless, error-free link.
    pub fn preset(name: &str) -> Result<Scenario> {
        let protocol = match name.to_ascii_lowercase().as_str() {
            "paper-2d" => Experiment::TwoD,
            "paper-4d" => Experiment::FourD,
            "paper-mux" => Experiment::Mux,
            "ideal" => return Ok(Scenario::ideal()),
            _ => {
                return Err(Error::config(
                    "preset",
                    format!("unknown preset {name:?}; expected one of {}", PRESETS.join(", ")),
                ))
            }
        };
        Ok(Scenario {
            protocol,
            ..Scenario::default()
        })
    }

    /// Perfect optics and detectors. Extinction ratios are finite but far
    /// beyond double precision, so the file form stays plain numbers.
    pub fn ideal() -> Scenario {
        let huge = 1000.0;
        Scenario {
            fiber: FiberSpec {
                loss_db_per_km: 0.0,
                er_db: OrderMap::new([(5, huge), (6, huge), (7, huge)]),
                coupling_er_db: OrderMap::default(),
                ..FiberSpec::default()
            },
            sorter: ModeSorterSpec::PERFECT,
            receivers: Receivers {
                psi_xi: ReceiverSpec::psi_xi().lossless(),
                varphi_phi: ReceiverSpec::varphi_phi().lossless(),
            },
            detectors: DetectorSpec {
                efficiency: 1.0,
                dark_prob_per_gate: 0.0,
                n_detectors: 4,
            },
            preparation: PrepErrors::NONE,
            ..Scenario::default()
        }
    }

    pub fn receiver_for(&self, kind: ReceiverKind) -> &ReceiverSpec {
        match kind {
            ReceiverKind::PsiXi => &self.receivers.psi_xi,
            ReceiverKind::VarphiPhi => &self.receivers.varphi_phi,
        }
    }

    /// Number of pulses of the configured run.
    pub fn pulses(&self) -> u64 {
        self.run
            .n_pulses
            .unwrap_or_else(|| (self.run.duration_s * self.source.rep_rate_hz).round() as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        self.source.validate("source")?;
        self.fiber.validate("fiber")?;
        self.sorter.validate("sorter")?;
        for (name, spec, kind) in [
            ("psi_xi", &self.receivers.psi_xi, ReceiverKind::PsiXi),
            ("varphi_phi", &self.receivers.varphi_phi, ReceiverKind::VarphiPhi),
        ] {
            let path = format!("receivers.{name}");
            if spec.kind != kind {
                return Err(Error::config(format!("{path}.kind"), format!("must be {name}")));
            }
            spec.validate(&path)?;
        }
        self.detectors.validate("detectors")?;
        self.preparation.validate("preparation")?;
        if !(self.run.duration_s > 0.0) {
            return Err(Error::config("run.duration_s", "must be positive"));
        }
        if !(self.run.window_s > 0.0 && self.run.window_s < self.run.duration_s) {
            return Err(Error::config(
                "run.window_s",
                "must be positive and shorter than run.duration_s",
            ));
        }
        if self.run.n_pulses == Some(0) {
            return Err(Error::config("run.n_pulses", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(Scenario::from_toml_str("").unwrap(), Scenario::default());
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for name in PRESETS {
            let s = Scenario::preset(name).unwrap();
            let back = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
            assert_eq!(back, s, "{name}");
        }
    }

    #[test]
    fn unknown_field_reports_its_path() {
        let err = Scenario::from_toml_str("[fiber]\nlenght_km = 2.0\n").unwrap_err();
        match err {
            Error::Config { path, .. } => assert!(path.starts_with("fiber"), "{path}"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn bad_value_reports_its_path() {
        let err = Scenario::from_toml_str("[source.intensities]\np_mu = 1.5\n").unwrap_err();
        match err {
            Error::Config { path, .. } => assert!(path.starts_with("source.intensities"), "{path}"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn window_must_fit_in_the_run() {
        let err = Scenario::from_toml_str("[run]\nduration_s = 0.1\nwindow_s = 0.2\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "run.window_s"));
    }

    #[test]
    fn protocol_labels_parse() {
        let s = Scenario::from_toml_str("protocol = \"MUX\"\n").unwrap();
        assert_eq!(s.protocol, Experiment::Mux);
        assert!(Scenario::from_toml_str("protocol = \"3D\"\n").is_err());
    }
}
