//! Pulse-level Monte Carlo of the QKD link.
//!
//! Every pulse picks an intensity, a preparation basis and state, and a
//! measurement basis, draws a Poissonian photon number, pushes each photon
//! through preparation errors, fiber, sorter and receiver, and adds dark
//! counts. Pulses are processed in fixed blocks, each with its own ChaCha
//! stream, so results do not depend on the number of worker threads.

mod analysis;
mod engine;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{StateSet, TableState};
use crate::scenario::Scenario;
use crate::statespace::Protocol;

pub use analysis::{
    detection_matrix, protocol_matrix, qber, qber_series, sift, DetectionReport, QberEstimate,
    QberPoint,
};
pub use engine::{ClickEvent, EventOutcome, BLOCK_PULSES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Mu,
    Nu,
    Omega,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Mu, Intensity::Nu, Intensity::Omega];

    pub fn name(self) -> &'static str {
        match self {
            Intensity::Mu => "mu",
            Intensity::Nu => "nu",
            Intensity::Omega => "omega",
        }
    }
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Z, Basis::X];
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Z => "Z",
            Basis::X => "X",
        })
    }
}

/// Mean photon numbers of the signal and decoy intensities, with the
/// probability of sending each.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoyIntensities {
    pub mu: f64,
    pub nu: f64,
    pub omega: f64,
    pub p_mu: f64,
    pub p_nu: f64,
    pub p_omega: f64,
}

impl Default for DecoyIntensities {
    fn default() -> Self {
        DecoyIntensities {
            mu: 0.011,
            nu: 0.008,
            omega: 0.0,
            p_mu: 0.98,
            p_nu: 0.01,
            p_omega: 0.01,
        }
    }
}

impl DecoyIntensities {
    pub fn mean(&self, i: Intensity) -> f64 {
        match i {
            Intensity::Mu => self.mu,
            Intensity::Nu => self.nu,
            Intensity::Omega => self.omega,
        }
    }

    pub fn probability(&self, i: Intensity) -> f64 {
        match i {
            Intensity::Mu => self.p_mu,
            Intensity::Nu => self.p_nu,
            Intensity::Omega => self.p_omega,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.mu > self.nu && self.nu > self.omega && self.omega >= 0.0) {
            return Err(Error::config(
                format!("{path}.mu"),
                format!(
                    "intensities must satisfy mu > nu > omega >= 0 (got {}, {}, {})",
                    self.mu, self.nu, self.omega
                ),
            ));
        }
        for (name, p) in [("p_mu", self.p_mu), ("p_nu", self.p_nu), ("p_omega", self.p_omega)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{path}.{name}"), "must lie in [0, 1]"));
            }
        }
        let total = self.p_mu + self.p_nu + self.p_omega;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                format!("{path}.p_mu"),
                format!("intensity probabilities sum to {total}, not 1"),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSpec {
    pub rep_rate_hz: f64,
    pub pulse_width_s: f64,
    pub intensities: DecoyIntensities,
    /// Probability of choosing Z, used by both ends.
    pub p_z: f64,
    pub p_x: f64,
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec {
            rep_rate_hz: 6e8,
            pulse_width_s: 150e-12,
            intensities: DecoyIntensities::default(),
            p_z: 0.9,
            p_x: 0.1,
        }
    }
}

impl SourceSpec {
    pub fn basis_probability(&self, b: Basis) -> f64 {
        match b {
            Basis::Z => self.p_z,
            Basis::X => self.p_x,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.rep_rate_hz > 0.0) || !self.rep_rate_hz.is_finite() {
            return Err(Error::config(format!("{path}.rep_rate_hz"), "must be positive"));
        }
        if !(self.pulse_width_s > 0.0) {
            return Err(Error::config(format!("{path}.pulse_width_s"), "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_z) || !(0.0..=1.0).contains(&self.p_x) {
            return Err(Error::config(format!("{path}.p_z"), "basis probabilities must lie in [0, 1]"));
        }
        if (self.p_z + self.p_x - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("{path}.p_z"), "p_z + p_x must equal 1"));
        }
        self.intensities.validate(&format!("{path}.intensities"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSpec {
    pub efficiency: f64,
    pub dark_prob_per_gate: f64,
    pub n_detectors: usize,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            efficiency: 0.168,
            dark_prob_per_gate: 1.6e-7,
            n_detectors: 4,
        }
    }
}

impl DetectorSpec {
    pub fn validate(&self, path: &str) -> Result<()> {
        for (name, p) in [
            ("efficiency", self.efficiency),
            ("dark_prob_per_gate", self.dark_prob_per_gate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{path}.{name}"), "must lie in [0, 1]"));
            }
        }
        if self.n_detectors != 4 {
            return Err(Error::config(
                format!("{path}.n_detectors"),
                "both receivers have exactly four outputs",
            ));
        }
        Ok(())
    }
}

/// What a scenario runs: one protocol, or both multiplexed 2D keys at once.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Experiment {
    #[serde(rename = "2D")]
    TwoD,
    #[serde(rename = "4D")]
    FourD,
    #[serde(rename = "MUX")]
    Mux,
    #[serde(rename = "MUX6")]
    Mux6,
    #[serde(rename = "MUX7")]
    Mux7,
}

impl Experiment {
    /// Keys carried by the run. Multiplexed runs pick one uniformly per pulse.
    pub fn keys(self) -> &'static [Protocol] {
        match self {
            Experiment::TwoD => &[Protocol::TwoD],
            Experiment::FourD => &[Protocol::FourD],
            Experiment::Mux => &[Protocol::Mux6, Protocol::Mux7],
            Experiment::Mux6 => &[Protocol::Mux6],
            Experiment::Mux7 => &[Protocol::Mux7],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Experiment::TwoD => "2D",
            Experiment::FourD => "4D",
            Experiment::Mux => "MUX",
            Experiment::Mux6 => "MUX6",
            Experiment::Mux7 => "MUX7",
        }
    }
}

impl From<Protocol> for Experiment {
    fn from(p: Protocol) -> Self {
        match p {
            Protocol::TwoD => Experiment::TwoD,
            Protocol::FourD => Experiment::FourD,
            Protocol::Mux6 => Experiment::Mux6,
            Protocol::Mux7 => Experiment::Mux7,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("mux") {
            return Ok(Experiment::Mux);
        }
        s.parse::<Protocol>().map(Experiment::from)
    }
}

/// Which detectors read a basis out, and which states are sent in it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BasisLayout {
    pub detectors: StateSet,
    /// Indices (within `detectors`) of the states Alice prepares.
    pub prepared: &'static [usize],
    /// Indices of the detectors whose clicks are recorded.
    pub registered: &'static [usize],
}

impl BasisLayout {
    pub fn for_protocol(protocol: Protocol, basis: Basis) -> BasisLayout {
        const ALL: &[usize] = &[0, 1, 2, 3];
        let (detectors, prepared, registered): (StateSet, &'static [usize], &'static [usize]) =
            match (protocol, basis) {
                (Protocol::TwoD, Basis::Z) => (StateSet::Psi, &[1, 3], &[1, 3]),
                (Protocol::TwoD, Basis::X) => (StateSet::Varphi, &[2, 3], &[2, 3]),
                (Protocol::FourD, Basis::Z) => (StateSet::Psi, ALL, ALL),
                // Only three of the four Fourier states are sent.
                (Protocol::FourD, Basis::X) => (StateSet::Phi, &[0, 1, 2], ALL),
                (Protocol::Mux6, Basis::Z) => (StateSet::Psi, &[0, 1], &[0, 1]),
                (Protocol::Mux6, Basis::X) => (StateSet::Xi, &[0, 1], &[0, 1]),
                (Protocol::Mux7, Basis::Z) => (StateSet::Psi, &[2, 3], &[2, 3]),
                (Protocol::Mux7, Basis::X) => (StateSet::Xi, &[2, 3], &[2, 3]),
            };
        BasisLayout {
            detectors,
            prepared,
            registered,
        }
    }

    pub fn state(&self, index: usize) -> TableState {
        TableState {
            set: self.detectors,
            index,
        }
    }
}

/// Counter key of a protocol run. `state` indexes the detector family of the
/// preparation basis, so in a sifted key an error is any click on another
/// detector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TallyKey {
    pub protocol: Protocol,
    pub intensity: Intensity,
    pub prep_basis: Basis,
    pub state: usize,
    pub meas_basis: Basis,
}

impl TallyKey {
    pub fn is_sifted(&self) -> bool {
        self.prep_basis == self.meas_basis
    }
}

/// Outcome counts of one key. A click is exactly one registered detector
/// firing; two or more firing together count as a multi-click.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub pulses: u64,
    pub clicks: [u64; 4],
    pub no_click: u64,
    pub multi_click: u64,
}

impl OutcomeCounts {
    pub fn total_clicks(&self) -> u64 {
        self.clicks.iter().sum()
    }

    pub fn errors(&self, correct: usize) -> u64 {
        self.total_clicks() - self.clicks[correct]
    }

    pub fn is_conserved(&self) -> bool {
        self.total_clicks() + self.no_click + self.multi_click == self.pulses
    }

    fn add(&mut self, o: &OutcomeCounts) {
        self.pulses += o.pulses;
        for (a, b) in self.clicks.iter_mut().zip(o.clicks) {
            *a += b;
        }
        self.no_click += o.no_click;
        self.multi_click += o.multi_click;
    }
}

/// Counts split by emitted photon number: 0, 1, and 2 or more. Simulation
/// ground truth for the decoy bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotonClassCounts {
    pub pulses: u64,
    pub clicks: [u64; 4],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyTally {
    #[serde(flatten)]
    pub counts: OutcomeCounts,
    pub by_photon_number: [PhotonClassCounts; 3],
}

impl KeyTally {
    pub(crate) fn add(&mut self, o: &KeyTally) {
        self.counts.add(&o.counts);
        for (a, b) in self.by_photon_number.iter_mut().zip(&o.by_photon_number) {
            a.pulses += b.pulses;
            for (x, y) in a.clicks.iter_mut().zip(b.clicks) {
                *x += y;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TallyRecord {
    #[serde(flatten)]
    key: TallyKey,
    #[serde(flatten)]
    tally: KeyTally,
}

/// All counters of a protocol run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<TallyRecord>", into = "Vec<TallyRecord>")]
pub struct TallyCounts {
    map: BTreeMap<TallyKey, KeyTally>,
}

impl From<Vec<TallyRecord>> for TallyCounts {
    fn from(records: Vec<TallyRecord>) -> Self {
        let mut t = TallyCounts::default();
        for r in records {
            t.map.entry(r.key).or_default().add(&r.tally);
        }
        t
    }
}

impl From<TallyCounts> for Vec<TallyRecord> {
    fn from(t: TallyCounts) -> Self {
        t.map
            .into_iter()
            .map(|(key, tally)| TallyRecord { key, tally })
            .collect()
    }
}

impl TallyCounts {
    pub fn get(&self, key: &TallyKey) -> Option<&KeyTally> {
        self.map.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TallyKey, &KeyTally)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, key: TallyKey, tally: KeyTally) {
        self.map.entry(key).or_default().add(&tally);
    }

    pub fn merge(&mut self, other: &TallyCounts) {
        for (k, v) in &other.map {
            self.insert(*k, *v);
        }
    }

    pub fn total_pulses(&self) -> u64 {
        self.map.values().map(|t| t.counts.pulses).sum()
    }

    /// Keys of one protocol only.
    pub fn for_protocol(&self, protocol: Protocol) -> TallyCounts {
        TallyCounts {
            map: self
                .map
                .iter()
                .filter(|(k, _)| k.protocol == protocol)
                .map(|(k, v)| (*k, *v))
                .collect(),
        }
    }

    /// Sum over every key matching the filter.
    pub fn aggregate(&self, mut pred: impl FnMut(&TallyKey) -> bool) -> KeyTally {
        let mut out = KeyTally::default();
        for (k, v) in &self.map {
            if pred(k) {
                out.add(v);
            }
        }
        out
    }

    /// Every key accounts for each of its pulses exactly once.
    pub fn check_conservation(&self) -> Result<()> {
        for (k, v) in &self.map {
            if !v.counts.is_conserved() {
                return Err(Error::Invariant(format!(
                    "outcomes of {k:?} do not add up to its {} pulses",
                    v.counts.pulses
                )));
            }
            let class_pulses: u64 = v.by_photon_number.iter().map(|c| c.pulses).sum();
            if class_pulses != v.counts.pulses {
                return Err(Error::Invariant(format!(
                    "photon-number classes of {k:?} do not add up"
                )));
            }
        }
        Ok(())
    }
}

/// Options of a single simulation run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    pub n_pulses: u64,
    pub seed: u64,
    /// Width of the QBER windows, seconds of source time.
    pub window_s: Option<f64>,
    pub record_events: bool,
}

impl RunOptions {
    pub fn new(n_pulses: u64, seed: u64) -> Self {
        RunOptions {
            n_pulses,
            seed,
            window_s: None,
            record_events: false,
        }
    }
}

/// Everything one protocol run produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub experiment: Experiment,
    pub n_pulses: u64,
    pub seed: u64,
    pub tallies: TallyCounts,
    /// Windowed QBERs of each key, signal intensity, sifted events.
    pub series: BTreeMap<Protocol, Vec<QberPoint>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<ClickEvent>,
}

/// Runs `n_pulses` of one protocol and returns its counters.
pub fn run_protocol(protocol: Protocol, n_pulses: u64, scenario: &Scenario, seed: u64) -> Result<TallyCounts> {
    Ok(simulate(Experiment::from(protocol), scenario, RunOptions::new(n_pulses, seed))?.tallies)
}

/// Full run of an experiment with optional QBER windows and click log.
pub fn simulate(experiment: Experiment, scenario: &Scenario, opts: RunOptions) -> Result<SimulationOutput> {
    scenario.validate()?;
    if opts.n_pulses == 0 {
        return Err(Error::config("run.n_pulses", "must be positive"));
    }
    if let Some(w) = opts.window_s {
        if !(w > 0.0) {
            return Err(Error::config("run.window_s", "must be positive"));
        }
    }
    let plan = engine::Plan::for_experiment(experiment, scenario)?;
    let window_slots = opts
        .window_s
        .map(|w| ((w * scenario.source.rep_rate_hz).round() as u64).max(1));
    let raw = plan.run(opts.n_pulses, opts.seed, window_slots, opts.record_events);
    let tallies = plan.tallies(&raw);
    tallies.check_conservation()?;
    let series = match window_slots {
        Some(slots) => analysis::series_from_windows(
            &plan,
            &raw,
            slots as f64 / scenario.source.rep_rate_hz,
        ),
        None => BTreeMap::new(),
    };
    Ok(SimulationOutput {
        experiment,
        n_pulses: opts.n_pulses,
        seed: opts.seed,
        tallies,
        series,
        events: raw.events,
    })
}

/// Writes the click log, one JSON record per line.
pub fn write_event_log<W: Write>(events: &[ClickEvent], mut out: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
