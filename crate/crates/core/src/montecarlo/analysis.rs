use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::engine::{EntryLabel, Plan, RawRun};
use super::{simulate, Basis, BasisLayout, Experiment, Intensity, RunOptions, TallyCounts};
use crate::error::{Error, Result};
use crate::optics::{outcome_probabilities, StateSet, TableState};
use crate::scenario::Scenario;
use crate::statespace::{fidelity, ProbDist, Protocol};

/// Error count and rate of one sifted basis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QberEstimate {
    pub errors: u64,
    pub clicks: u64,
    pub qber: f64,
    /// Poissonian standard error, √errors / clicks.
    pub stderr: f64,
}

impl QberEstimate {
    pub fn from_counts(errors: u64, clicks: u64) -> Option<QberEstimate> {
        (clicks > 0).then(|| QberEstimate {
            errors,
            clicks,
            qber: errors as f64 / clicks as f64,
            stderr: (errors as f64).sqrt() / clicks as f64,
        })
    }
}

/// QBER of one basis over one time window. Windows without clicks carry no
/// estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QberPoint {
    pub window_start_s: f64,
    pub basis: Basis,
    pub qber: Option<f64>,
    pub stderr: Option<f64>,
    pub clicks: u64,
    pub errors: u64,
}

/// Keeps the keys whose preparation and measurement bases agree.
pub fn sift(tallies: &TallyCounts) -> TallyCounts {
    let mut out = TallyCounts::default();
    for (k, v) in tallies.iter().filter(|(k, _)| k.is_sifted()) {
        out.insert(*k, *v);
    }
    out
}

/// Sifted error rate of one protocol, intensity and basis; `None` without clicks.
pub fn qber(tallies: &TallyCounts, protocol: Protocol, intensity: Intensity, basis: Basis) -> Option<QberEstimate> {
    let (mut errors, mut clicks) = (0, 0);
    for (k, v) in tallies.iter() {
        if k.protocol == protocol && k.intensity == intensity && k.prep_basis == basis && k.is_sifted() {
            errors += v.counts.errors(k.state);
            clicks += v.counts.total_clicks();
        }
    }
    QberEstimate::from_counts(errors, clicks)
}

/// Runs `duration_s` of source time and returns the windowed QBER of each key.
pub fn qber_series(
    experiment: Experiment,
    duration_s: f64,
    window_s: f64,
    scenario: &Scenario,
    seed: u64,
) -> Result<BTreeMap<Protocol, Vec<QberPoint>>> {
    if !(duration_s > 0.0) {
        return Err(Error::config("run.duration_s", "must be positive"));
    }
    if !(window_s > 0.0 && window_s < duration_s) {
        return Err(Error::config(
            "run.window_s",
            format!("window {window_s} s must be positive and shorter than the run ({duration_s} s)"),
        ));
    }
    let n_pulses = (duration_s * scenario.source.rep_rate_hz).round() as u64;
    let opts = RunOptions {
        window_s: Some(window_s),
        ..RunOptions::new(n_pulses, seed)
    };
    Ok(simulate(experiment, scenario, opts)?.series)
}

pub(super) fn series_from_windows(plan: &Plan, raw: &RawRun, window_s: f64) -> BTreeMap<Protocol, Vec<QberPoint>> {
    let mut out = BTreeMap::new();
    for (slot, &protocol) in plan.series.iter().enumerate() {
        let mut points = Vec::with_capacity(2 * raw.n_windows as usize);
        for w in 0..raw.n_windows {
            let counts = raw.windows.get(&(w, slot)).copied().unwrap_or_default();
            for basis in Basis::ALL {
                let c = counts[basis as usize];
                let est = QberEstimate::from_counts(c.errors, c.clicks);
                points.push(QberPoint {
                    window_start_s: w as f64 * window_s,
                    basis,
                    qber: est.map(|e| e.qber),
                    stderr: est.map(|e| e.stderr),
                    clicks: c.clicks,
                    errors: c.errors,
                });
            }
        }
        out.insert(protocol, points);
    }
    out
}

/// Measured and ideal outcome distributions of a set of prepared states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub label: String,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    /// Row-normalized click frequencies.
    pub matrix: Vec<Vec<f64>>,
    /// Born-rule probabilities of the ideal states, normalized the same way.
    pub ideal: Vec<Vec<f64>>,
    pub row_fidelity: Vec<f64>,
    /// Mean of the row fidelities.
    pub fidelity: f64,
    pub fidelity_stderr: f64,
    pub n_pulses: u64,
    pub seed: u64,
}

impl DetectionReport {
    /// Counts of one row and column.
    pub fn count(&self, row: usize, column: usize) -> u64 {
        self.counts[row][column]
    }
}

/// Each block is a group of columns normalized separately and weighted equally.
struct Block {
    detectors: StateSet,
    columns: Vec<usize>,
}

fn ideal_block(state: TableState, block: &Block) -> Result<Vec<f64>> {
    let probs = outcome_probabilities(state.ideal_ket(), block.detectors.kets(), 0.0)?;
    Ok(block.columns.iter().map(|&j| probs[j]).collect())
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let s: f64 = v.iter().sum();
    (s > 0.0).then(|| v.iter().map(|x| x / s).collect())
}

fn build_report(
    label: String,
    rows: &[TableState],
    blocks: &[Block],
    plan: &Plan,
    raw: &RawRun,
    n_pulses: u64,
    seed: u64,
) -> Result<DetectionReport> {
    let n_blocks = blocks.len() as f64;
    let width: usize = blocks.iter().map(|b| b.columns.len()).sum();
    let mut counts = vec![vec![0u64; width]; rows.len()];
    for (entry, tally) in plan.entries.iter().zip(&raw.per_entry) {
        if let EntryLabel::Matrix { row, block } = entry.label {
            let offset: usize = blocks[..block].iter().map(|b| b.columns.len()).sum();
            for (c, &j) in blocks[block].columns.iter().enumerate() {
                counts[row][offset + c] += tally.counts.clicks[j];
            }
        }
    }

    let mut matrix = Vec::with_capacity(rows.len());
    let mut ideal = Vec::with_capacity(rows.len());
    let mut row_fidelity = Vec::with_capacity(rows.len());
    let mut variance = 0.0;
    for (state, row_counts) in rows.iter().zip(&counts) {
        let (mut m_row, mut i_row) = (Vec::with_capacity(width), Vec::with_capacity(width));
        let mut f_row = 0.0;
        let mut offset = 0;
        for block in blocks {
            let n = block.columns.len();
            let c: Vec<f64> = row_counts[offset..offset + n].iter().map(|&x| x as f64).collect();
            let total: f64 = c.iter().sum();
            let m = normalized(&c).ok_or_else(|| Error::MissingKey(format!("no clicks for {state}")))?;
            let r = normalized(&ideal_block(*state, block)?)
                .ok_or_else(|| Error::Invariant(format!("{state} has no ideal support on {}", block.detectors)))?;
            let f = fidelity(&ProbDist::new(m.clone())?, &ProbDist::new(r.clone())?)?;
            f_row += f / n_blocks;
            variance += (1.0 - f * f) / (4.0 * total) / (n_blocks * n_blocks);
            m_row.extend(m.iter().map(|x| x / n_blocks));
            i_row.extend(r.iter().map(|x| x / n_blocks));
            offset += n;
        }
        matrix.push(m_row);
        ideal.push(i_row);
        row_fidelity.push(f_row);
    }
    let n_rows = rows.len() as f64;
    Ok(DetectionReport {
        label,
        rows: rows.iter().map(|s| s.label()).collect(),
        columns: blocks
            .iter()
            .flat_map(|b| b.columns.iter().map(|&j| TableState { set: b.detectors, index: j }.label()))
            .collect(),
        counts,
        matrix,
        ideal,
        fidelity: row_fidelity.iter().sum::<f64>() / n_rows,
        row_fidelity,
        fidelity_stderr: variance.sqrt() / n_rows,
        n_pulses,
        seed,
    })
}

fn check_run(scenario: &Scenario, n_pulses: u64) -> Result<()> {
    scenario.validate()?;
    if n_pulses == 0 {
        return Err(Error::config("run.n_pulses", "must be positive"));
    }
    Ok(())
}

/// Sends the four states of `set` at the signal intensity and reads each out
/// on the matching detectors.
pub fn detection_matrix(set: StateSet, n_pulses: u64, scenario: &Scenario, seed: u64) -> Result<DetectionReport> {
    check_run(scenario, n_pulses)?;
    let plan = Plan::for_state_set(set, scenario)?;
    let raw = plan.run(n_pulses, seed, None, false);
    let rows: Vec<TableState> = (0..4).map(|index| TableState { set, index }).collect();
    let blocks = [Block {
        detectors: set,
        columns: vec![0, 1, 2, 3],
    }];
    build_report(set.name().to_string(), &rows, &blocks, &plan, &raw, n_pulses, seed)
}

/// Sends every state of both protocol bases, measures each half the time in
/// either basis, and weighs the two column blocks equally.
pub fn protocol_matrix(protocol: Protocol, n_pulses: u64, scenario: &Scenario, seed: u64) -> Result<DetectionReport> {
    check_run(scenario, n_pulses)?;
    let (plan, rows) = Plan::for_protocol_matrix(protocol, scenario)?;
    let raw = plan.run(n_pulses, seed, None, false);
    let blocks: Vec<Block> = Basis::ALL
        .iter()
        .map(|&b| {
            let l = BasisLayout::for_protocol(protocol, b);
            Block {
                detectors: l.detectors,
                columns: l.registered.to_vec(),
            }
        })
        .collect();
    build_report(protocol.label().to_string(), &rows, &blocks, &plan, &raw, n_pulses, seed)
}
