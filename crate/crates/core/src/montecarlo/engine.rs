use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use super::{Basis, BasisLayout, Experiment, Intensity, KeyTally, TallyCounts, TallyKey};
use crate::channel::Channel;
use crate::error::Result;
use crate::optics::{
    outcome_probabilities, sample_index, ModeSorterSpec, PrepErrors, ReceiverSpec, StateSet,
    TableState,
};
use crate::scenario::Scenario;
use crate::statespace::{ModeSet, OamKet, Protocol};

/// Pulses per RNG block. Block `b` always draws from stream `b` of the seed.
pub const BLOCK_PULSES: u64 = 1 << 20;

const MAX_PHOTONS: u32 = 64;

/// One registered detection, for the optional click log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickEvent {
    pub slot: u64,
    pub protocol: Protocol,
    pub intensity: Intensity,
    pub prep_basis: Basis,
    pub state: usize,
    pub meas_basis: Basis,
    pub outcome: EventOutcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventOutcome {
    Click(usize),
    MultiClick,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum EntryLabel {
    Key(TallyKey),
    /// Row of a detection matrix, and which measurement block it feeds.
    Matrix { row: usize, block: usize },
}

#[derive(Clone, Debug)]
pub(crate) struct Entry {
    pub label: EntryLabel,
    pub weight: f64,
    pub mean_photons: f64,
    vacuum_prob: f64,
    ket: OamKet,
    receiver: ReceiverSpec,
    receiver_transmittance: f64,
    pub detectors: StateSet,
    pub registered: SmallVec<[usize; 4]>,
    is_registered: [bool; 4],
    /// Probability that at least one registered detector fires in the dark.
    dark_any: f64,
    /// Series slot and basis fed by this entry, for signal-intensity sifted keys.
    window: Option<(usize, Basis)>,
    pub correct: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub(crate) struct WindowCounts {
    pub clicks: u64,
    pub errors: u64,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct RawRun {
    pub per_entry: Vec<KeyTally>,
    /// (window index, series slot) → Z and X counts.
    pub windows: BTreeMap<(u64, usize), [WindowCounts; 2]>,
    pub n_windows: u64,
    pub events: Vec<ClickEvent>,
}

impl RawRun {
    fn merge(&mut self, other: RawRun) {
        if self.per_entry.is_empty() {
            self.per_entry = other.per_entry;
        } else {
            for (a, b) in self.per_entry.iter_mut().zip(&other.per_entry) {
                a.add(b);
            }
        }
        for (k, v) in other.windows {
            let slot = self.windows.entry(k).or_default();
            for (a, b) in slot.iter_mut().zip(v) {
                a.clicks += b.clicks;
                a.errors += b.errors;
            }
        }
        self.events.extend(other.events);
    }
}

pub(crate) struct Plan {
    pub entries: Vec<Entry>,
    cumulative: Vec<f64>,
    pub series: Vec<Protocol>,
    channel: Channel,
    sorter: ModeSorterSpec,
    prep: PrepErrors,
    efficiency: f64,
    dark_prob: f64,
    rep_rate_hz: f64,
}

impl Plan {
    fn empty(scenario: &Scenario) -> Result<Plan> {
        Ok(Plan {
            entries: Vec::new(),
            cumulative: Vec::new(),
            series: Vec::new(),
            channel: Channel::new(&scenario.fiber, &ModeSet::canonical(), scenario.source.pulse_width_s)?,
            sorter: scenario.sorter,
            prep: scenario.preparation,
            efficiency: scenario.detectors.efficiency,
            dark_prob: scenario.detectors.dark_prob_per_gate,
            rep_rate_hz: scenario.source.rep_rate_hz,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        scenario: &Scenario,
        label: EntryLabel,
        weight: f64,
        mean_photons: f64,
        prepared: TableState,
        detectors: StateSet,
        registered: &[usize],
        window: Option<(usize, Basis)>,
    ) {
        if weight <= 0.0 {
            return;
        }
        let receiver = *scenario.receiver_for(detectors.receiver_kind());
        let mut is_registered = [false; 4];
        registered.iter().for_each(|&i| is_registered[i] = true);
        let k = registered.len() as f64;
        self.entries.push(Entry {
            label,
            weight,
            mean_photons,
            vacuum_prob: (-mean_photons).exp(),
            ket: self.prep.prepared_ket(prepared),
            receiver_transmittance: receiver.transmittance(),
            receiver,
            detectors,
            registered: registered.iter().copied().collect(),
            is_registered,
            dark_any: -(k * (-self.dark_prob).ln_1p()).exp_m1(),
            window,
            correct: prepared.index,
        });
    }

    fn finish(mut self) -> Plan {
        let total: f64 = self.entries.iter().map(|e| e.weight).sum();
        let mut acc = 0.0;
        self.cumulative = self
            .entries
            .iter()
            .map(|e| {
                acc += e.weight / total;
                acc
            })
            .collect();
        if let Some(last) = self.cumulative.last_mut() {
            *last = 1.0;
        }
        self
    }

    /// Every (key, intensity, prepared basis and state, measured basis)
    /// combination with its probability.
    pub fn for_experiment(experiment: Experiment, scenario: &Scenario) -> Result<Plan> {
        let mut plan = Plan::empty(scenario)?;
        let keys = experiment.keys();
        let src = &scenario.source;
        for (series, &protocol) in keys.iter().enumerate() {
            plan.series.push(protocol);
            for intensity in Intensity::ALL {
                for prep_basis in Basis::ALL {
                    let prep = BasisLayout::for_protocol(protocol, prep_basis);
                    for &state in prep.prepared {
                        for meas_basis in Basis::ALL {
                            let meas = BasisLayout::for_protocol(protocol, meas_basis);
                            let weight = src.intensities.probability(intensity)
                                * src.basis_probability(prep_basis)
                                * src.basis_probability(meas_basis)
                                / (prep.prepared.len() * keys.len()) as f64;
                            let key = TallyKey {
                                protocol,
                                intensity,
                                prep_basis,
                                state,
                                meas_basis,
                            };
                            let window = (intensity == Intensity::Mu && prep_basis == meas_basis)
                                .then_some((series, prep_basis));
                            plan.push(
                                scenario,
                                EntryLabel::Key(key),
                                weight,
                                src.intensities.mean(intensity),
                                prep.state(state),
                                meas.detectors,
                                meas.registered,
                                window,
                            );
                        }
                    }
                }
            }
        }
        Ok(plan.finish())
    }

    /// The four states of a family, each read out on its own detectors.
    pub fn for_state_set(set: StateSet, scenario: &Scenario) -> Result<Plan> {
        let mut plan = Plan::empty(scenario)?;
        let mu = scenario.source.intensities.mu;
        for index in 0..4 {
            plan.push(
                scenario,
                EntryLabel::Matrix { row: index, block: 0 },
                0.25,
                mu,
                TableState { set, index },
                set,
                &[0, 1, 2, 3],
                None,
            );
        }
        Ok(plan.finish())
    }

    /// Every state of both protocol bases, measured half the time in each.
    pub fn for_protocol_matrix(protocol: Protocol, scenario: &Scenario) -> Result<(Plan, Vec<TableState>)> {
        let mut plan = Plan::empty(scenario)?;
        let mu = scenario.source.intensities.mu;
        let rows: Vec<TableState> = Basis::ALL
            .iter()
            .flat_map(|&b| {
                let l = BasisLayout::for_protocol(protocol, b);
                l.registered.iter().map(move |&i| l.state(i))
            })
            .collect();
        for (row, state) in rows.iter().enumerate() {
            for (block, &meas_basis) in Basis::ALL.iter().enumerate() {
                let meas = BasisLayout::for_protocol(protocol, meas_basis);
                plan.push(
                    scenario,
                    EntryLabel::Matrix { row, block },
                    0.5 / rows.len() as f64,
                    mu,
                    *state,
                    meas.detectors,
                    meas.registered,
                    None,
                );
            }
        }
        Ok((plan.finish(), rows))
    }

    pub fn tallies(&self, raw: &RawRun) -> TallyCounts {
        let mut t = TallyCounts::default();
        for (e, tally) in self.entries.iter().zip(&raw.per_entry) {
            if let EntryLabel::Key(k) = e.label {
                t.insert(k, *tally);
            }
        }
        t
    }

    pub fn run(&self, n_pulses: u64, seed: u64, window_slots: Option<u64>, record_events: bool) -> RawRun {
        let n_blocks = n_pulses.div_ceil(BLOCK_PULSES);
        let blocks: Vec<RawRun> = (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let start = b * BLOCK_PULSES;
                let len = BLOCK_PULSES.min(n_pulses - start);
                self.run_block(b, start, len, seed, window_slots, record_events)
            })
            .collect();
        let mut out = RawRun {
            per_entry: vec![KeyTally::default(); self.entries.len()],
            n_windows: window_slots.map_or(0, |w| n_pulses.div_ceil(w)),
            ..RawRun::default()
        };
        for b in blocks {
            out.merge(b);
        }
        out
    }

    /// Picks the entry for a uniform draw and returns the draw rescaled to
    /// [0, 1) inside that entry's interval, which is again uniform.
    fn pick(&self, u: f64) -> (usize, f64) {
        let i = self
            .cumulative
            .partition_point(|c| *c <= u)
            .min(self.entries.len() - 1);
        let lo = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        let hi = self.cumulative[i];
        (i, unit((u - lo) / (hi - lo)))
    }

    fn run_block(
        &self,
        block: u64,
        start: u64,
        len: u64,
        seed: u64,
        window_slots: Option<u64>,
        record_events: bool,
    ) -> RawRun {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(block);
        let mut out = RawRun {
            per_entry: vec![KeyTally::default(); self.entries.len()],
            ..RawRun::default()
        };
        for slot in start..start + len {
            // One draw settles the entry, the photon number and whether any
            // dark count occurs; each choice reuses the rescaled remainder.
            let (idx, r) = self.pick(rng.random::<f64>());
            let entry = &self.entries[idx];
            let (n, r) = photon_number(r, entry.mean_photons, entry.vacuum_prob);

            let mut fired: u8 = 0;
            if r < entry.dark_any {
                fired |= self.dark_mask(entry, r, &mut rng);
            }
            for _ in 0..n {
                if let Some(d) = self.detect_photon(entry, slot, &mut rng) {
                    fired |= 1 << d;
                }
            }

            let tally = &mut out.per_entry[idx];
            tally.counts.pulses += 1;
            let class = &mut tally.by_photon_number[n.min(2) as usize];
            class.pulses += 1;
            let outcome = match fired.count_ones() {
                0 => {
                    tally.counts.no_click += 1;
                    continue;
                }
                1 => {
                    let d = fired.trailing_zeros() as usize;
                    tally.counts.clicks[d] += 1;
                    class.clicks[d] += 1;
                    if let (Some((series, basis)), Some(w)) = (entry.window, window_slots) {
                        let counts = out.windows.entry((slot / w, series)).or_default();
                        let c = &mut counts[basis as usize];
                        c.clicks += 1;
                        c.errors += u64::from(d != entry.correct);
                    }
                    EventOutcome::Click(d)
                }
                _ => {
                    tally.counts.multi_click += 1;
                    EventOutcome::MultiClick
                }
            };
            if record_events {
                if let EntryLabel::Key(k) = entry.label {
                    out.events.push(ClickEvent {
                        slot,
                        protocol: k.protocol,
                        intensity: k.intensity,
                        prep_basis: k.prep_basis,
                        state: k.state,
                        meas_basis: k.meas_basis,
                        outcome,
                    });
                }
            }
        }
        out
    }

    /// Dark counts given that at least one occurs. `r` is uniform on
    /// [0, dark_any): its position fixes the first dark detector, later
    /// detectors fire independently.
    fn dark_mask(&self, entry: &Entry, r: f64, rng: &mut ChaCha8Rng) -> u8 {
        let log_keep = (-self.dark_prob).ln_1p();
        let k = entry.registered.len();
        let first = (0..k)
            .find(|&j| r < -(((j + 1) as f64) * log_keep).exp_m1())
            .unwrap_or(k - 1);
        let mut mask = 1u8 << entry.registered[first];
        for &d in &entry.registered[first + 1..] {
            if rng.random::<f64>() < self.dark_prob {
                mask |= 1 << d;
            }
        }
        mask
    }

    fn detect_photon(&self, entry: &Entry, slot: u64, rng: &mut ChaCha8Rng) -> Option<usize> {
        let ket = self.prep.perturb(entry.ket.clone(), rng);
        let (ket, arrival_s) = self.channel.transmit_ket(&ket, rng)?;
        let ket = self.sorter.route(&ket, rng);
        if rng.random::<f64>() >= entry.receiver_transmittance {
            return None;
        }
        let t = slot as f64 / self.rep_rate_hz + arrival_s;
        let probs = outcome_probabilities(&ket, entry.detectors.kets(), entry.receiver.phase_at(t)).ok()?;
        let d = sample_index(&probs, rng.random::<f64>())?;
        if !entry.is_registered[d] || rng.random::<f64>() >= self.efficiency {
            return None;
        }
        Some(d)
    }
}

fn unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0 - f64::EPSILON / 2.0)
}

/// Inverse-CDF Poisson draw. Returns the photon number and the draw
/// rescaled inside that number's interval.
fn photon_number(r: f64, mean: f64, vacuum_prob: f64) -> (u32, f64) {
    if r < vacuum_prob {
        return (0, unit(r / vacuum_prob));
    }
    let mut p = vacuum_prob;
    let mut cdf = vacuum_prob;
    let mut n = 0;
    loop {
        n += 1;
        let prev = cdf;
        p *= mean / n as f64;
        cdf += p;
        if r < cdf || n >= MAX_PHOTONS || p == 0.0 {
            let rest = if p > 0.0 { (r - prev) / p } else { 0.0 };
            return (n, unit(rest));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_inverse_cdf_matches_pmf() {
        let mean = 0.7;
        let p0 = (-mean as f64).exp();
        let n = 200_000;
        let mut counts = [0u32; 6];
        for i in 0..n {
            let r = (i as f64 + 0.5) / n as f64;
            let (k, rest) = photon_number(r, mean, p0);
            assert!((0.0..1.0).contains(&rest));
            counts[(k as usize).min(5)] += 1;
        }
        let mut pmf = p0;
        for (k, c) in counts.iter().take(5).enumerate() {
            if k > 0 {
                pmf *= mean / k as f64;
            }
            assert!((*c as f64 / n as f64 - pmf).abs() < 1e-4, "k={k}");
        }
    }

    #[test]
    fn zero_mean_never_emits() {
        for i in 0..1000 {
            assert_eq!(photon_number(i as f64 / 1000.0, 0.0, 1.0).0, 0);
        }
    }
}
