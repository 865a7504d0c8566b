//! The air-core fiber link: loss, extinction-ratio crosstalk and the group
//! delay between mode orders.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::optics::PhotonState;
use crate::statespace::{Amps, ModeSet, OamKet, OamMode};

/// Speed of light in vacuum, m/ns.
pub const LIGHT_M_PER_NS: f64 = 0.299_792_458;

/// Values keyed by mode order |ℓ|. Serialized with string keys so the map can
/// live in TOML and JSON alike.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct OrderMap(BTreeMap<u32, f64>);

impl OrderMap {
    pub fn new(entries: impl IntoIterator<Item = (u32, f64)>) -> Self {
        OrderMap(entries.into_iter().collect())
    }

    pub fn get(&self, order: u32) -> Option<f64> {
        self.0.get(&order).copied()
    }

    pub fn insert(&mut self, order: u32, value: f64) {
        self.0.insert(order, value);
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }
}

impl TryFrom<BTreeMap<String, f64>> for OrderMap {
    type Error = String;
    fn try_from(m: BTreeMap<String, f64>) -> std::result::Result<Self, String> {
        m.into_iter()
            .map(|(k, v)| {
                k.trim()
                    .parse::<u32>()
                    .map(|k| (k, v))
                    .map_err(|_| format!("`{k}` is not a mode order"))
            })
            .collect::<std::result::Result<_, _>>()
            .map(OrderMap)
    }
}

impl From<OrderMap> for BTreeMap<String, f64> {
    fn from(m: OrderMap) -> Self {
        m.0.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// How the |6|/|7| group delay is undone before detection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayCompensation {
    None,
    /// A delay line cut to cancel the fiber delay exactly.
    #[default]
    Matched,
    /// A free-space delay line of the given length.
    FreeSpace { length_m: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiberSpec {
    pub length_km: f64,
    pub loss_db_per_km: f64,
    /// In-fiber extinction ratio per mode order, dB.
    pub er_db: OrderMap,
    /// Extra extinction ratio of the launch optics, dB; leaks into the
    /// same-sign mode of the neighbouring order. Orders without an entry do
    /// not leak.
    pub coupling_er_db: OrderMap,
    /// Group delay per km for each order, ns/km.
    pub delay_ns_per_km: OrderMap,
    pub compensation: DelayCompensation,
}

impl Default for FiberSpec {
    fn default() -> Self {
        FiberSpec {
            length_km: 1.2,
            loss_db_per_km: 1.0,
            er_db: OrderMap::new([(5, 17.8), (6, 18.4), (7, 18.7)]),
            coupling_er_db: OrderMap::new([(6, 15.0), (7, 16.9)]),
            delay_ns_per_km: OrderMap::new([(6, 0.0), (7, 12.5)]),
            compensation: DelayCompensation::Matched,
        }
    }
}

impl FiberSpec {
    pub fn survival_probability(&self) -> f64 {
        10f64.powf(-self.loss_db_per_km * self.length_km / 10.0)
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.length_km >= 0.0) || !self.length_km.is_finite() {
            return Err(Error::config(format!("{path}.length_km"), "must be a finite length >= 0"));
        }
        if !(self.loss_db_per_km >= 0.0) || !self.loss_db_per_km.is_finite() {
            return Err(Error::config(format!("{path}.loss_db_per_km"), "must be >= 0"));
        }
        for (name, map) in [("er_db", &self.er_db), ("coupling_er_db", &self.coupling_er_db)] {
            for (order, v) in map.iter() {
                if !(v > 0.0) {
                    return Err(Error::config(
                        format!("{path}.{name}.{order}"),
                        "extinction ratio must be positive",
                    ));
                }
            }
        }
        for (order, v) in self.delay_ns_per_km.iter() {
            if !v.is_finite() {
                return Err(Error::config(format!("{path}.delay_ns_per_km.{order}"), "must be finite"));
            }
        }
        if let DelayCompensation::FreeSpace { length_m } = self.compensation {
            if !(length_m >= 0.0) {
                return Err(Error::config(format!("{path}.compensation.free_space.length_m"), "must be >= 0"));
            }
        }
        Ok(())
    }

    fn fiber_delay_ns(&self, order: u32) -> Result<f64> {
        self.delay_ns_per_km
            .get(order)
            .map(|d| d * self.length_km)
            .ok_or(Error::UnknownMode(order as i32))
    }
}

/// Row-stochastic power routing matrix. Rows are source modes, columns
/// destinations, both in mode-set order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkMatrix {
    modes: Vec<i32>,
    m: Vec<Vec<f64>>,
}

impl CrosstalkMatrix {
    pub fn identity(modes: &ModeSet) -> Self {
        let n = modes.len();
        CrosstalkMatrix {
            modes: modes.modes().iter().map(|m| m.ell()).collect(),
            m: (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn modes(&self) -> &[i32] {
        &self.modes
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn get(&self, src: usize, dst: usize) -> f64 {
        self.m[src][dst]
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Largest |row sum − 1|.
    pub fn stochasticity_error(&self) -> f64 {
        self.m
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Routing through `self`, then through `next`.
    pub fn then(&self, next: &CrosstalkMatrix) -> Result<CrosstalkMatrix> {
        if self.modes != next.modes {
            return Err(Error::Dimension("crosstalk matrices over different modes".into()));
        }
        let n = self.len();
        let m = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| self.m[i][k] * next.m[k][j]).sum())
                    .collect()
            })
            .collect();
        Ok(CrosstalkMatrix {
            modes: self.modes.clone(),
            m,
        })
    }

    /// Samples one branch of the incoherent routing. The unscattered branch
    /// keeps the superposition, weighting each amplitude by √M_ℓℓ; a scatter
    /// from ℓ to m leaves the photon in |m⟩.
    pub fn scatter<R: Rng + ?Sized>(&self, ket: &OamKet, rng: &mut R) -> OamKet {
        let amps = ket.amplitudes();
        let stay: f64 = amps
            .iter()
            .enumerate()
            .map(|(i, a)| a.norm_sqr() * self.m[i][i])
            .sum();
        let total: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        let mut u = rng.random::<f64>() * total;
        if u < stay {
            let out: Amps = amps
                .iter()
                .enumerate()
                .map(|(i, a)| a * self.m[i][i].sqrt())
                .collect();
            return OamKet::from_raw(ket.modes().clone(), out)
                .normalized()
                .unwrap_or_else(|| ket.clone());
        }
        u -= stay;
        let n = self.len();
        let mut last = None;
        for (i, a) in amps.iter().enumerate() {
            let w = a.norm_sqr();
            if w == 0.0 {
                continue;
            }
            for j in (0..n).filter(|&j| j != i) {
                let p = w * self.m[i][j];
                if p > 0.0 {
                    last = Some(j);
                    if u < p {
                        return basis_ket(ket.modes(), j);
                    }
                    u -= p;
                }
            }
        }
        // Rounding at the top of the range.
        last.map(|j| basis_ket(ket.modes(), j))
            .unwrap_or_else(|| ket.clone())
    }
}

fn basis_ket(modes: &ModeSet, index: usize) -> OamKet {
    let mut amps: Amps = SmallVec::from_elem(Complex64::new(0.0, 0.0), modes.len());
    amps[index] = Complex64::new(1.0, 0.0);
    OamKet::from_raw(modes.clone(), amps)
}

impl fmt::Display for CrosstalkMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (ell, row) in self.modes.iter().zip(&self.m) {
            write!(f, "{ell:+3}:")?;
            for v in row {
                write!(f, " {v:.5}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// In-fiber crosstalk: the leakage 10^(−ER/10) of each source mode is shared
/// equally by every other mode in the set.
pub fn crosstalk_from_er(spec: &FiberSpec, modes: &ModeSet) -> Result<CrosstalkMatrix> {
    let n = modes.len();
    let mut out = CrosstalkMatrix::identity(modes);
    for (i, mode) in modes.modes().iter().enumerate() {
        let er = spec.er_db.get(mode.order()).ok_or_else(|| {
            Error::config(
                format!("fiber.er_db.{}", mode.order()),
                format!("no extinction ratio for mode {mode}"),
            )
        })?;
        let x = 10f64.powf(-er / 10.0);
        let denom = 1.0 + (n as f64 - 1.0) * x;
        for j in 0..n {
            out.m[i][j] = if i == j { 1.0 / denom } else { x / denom };
        }
    }
    Ok(out)
}

/// Launch-optics crosstalk into the same-sign neighbouring order.
pub fn coupling_crosstalk(spec: &FiberSpec, modes: &ModeSet) -> CrosstalkMatrix {
    let mut out = CrosstalkMatrix::identity(modes);
    for (i, mode) in modes.modes().iter().enumerate() {
        let (Some(er), Some(j)) = (
            spec.coupling_er_db.get(mode.order()),
            modes.parity_partner(*mode).and_then(|p| modes.index_of(p)),
        ) else {
            continue;
        };
        let x = 10f64.powf(-er / 10.0);
        let leak = x / (1.0 + x);
        out.m[i][i] = 1.0 - leak;
        out.m[i][j] = leak;
    }
    out
}

/// Arrival time of `mode` relative to the earliest order in the delay map.
pub fn time_of_arrival(mode: OamMode, spec: &FiberSpec) -> Result<f64> {
    let arrivals = arrival_times(spec)?;
    arrivals
        .get(&mode.order())
        .copied()
        .ok_or(Error::UnknownMode(mode.ell()))
}

/// Fiber-only arrival time, compensation ignored.
pub fn uncompensated_time_of_arrival(mode: OamMode, spec: &FiberSpec) -> Result<f64> {
    let fiber = spec.fiber_delay_ns(mode.order())?;
    let earliest = spec
        .delay_ns_per_km
        .iter()
        .map(|(_, d)| d * spec.length_km)
        .fold(f64::INFINITY, f64::min);
    Ok(fiber - earliest)
}

/// Relative arrival time of every order in the delay map, ns. The
/// compensation line holds back every order except the slowest one.
pub fn arrival_times(spec: &FiberSpec) -> Result<BTreeMap<u32, f64>> {
    let raw: BTreeMap<u32, f64> = spec
        .delay_ns_per_km
        .iter()
        .map(|(o, d)| (o, d * spec.length_km))
        .collect();
    let Some(slowest) = raw
        .iter()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(o, _)| *o)
    else {
        return Ok(raw);
    };
    let comp = match spec.compensation {
        DelayCompensation::None => 0.0,
        DelayCompensation::FreeSpace { length_m } => length_m / LIGHT_M_PER_NS,
        DelayCompensation::Matched => {
            let t_slow = raw[&slowest];
            let next = raw
                .iter()
                .filter(|(o, _)| **o != slowest)
                .map(|(_, t)| *t)
                .fold(f64::NEG_INFINITY, f64::max);
            if next.is_finite() {
                t_slow - next
            } else {
                0.0
            }
        }
    };
    let shifted: BTreeMap<u32, f64> = raw
        .iter()
        .map(|(o, t)| (*o, if *o == slowest { *t } else { t + comp }))
        .collect();
    let earliest = shifted.values().copied().fold(f64::INFINITY, f64::min);
    Ok(shifted.into_iter().map(|(o, t)| (o, t - earliest)).collect())
}

/// A fiber instantiated for a mode set and pulse width.
#[derive(Clone, Debug)]
pub struct Channel {
    modes: ModeSet,
    survival: f64,
    coupling: CrosstalkMatrix,
    fiber: CrosstalkMatrix,
    /// Arrival time per mode, in mode-set order, seconds.
    arrival_s: SmallVec<[f64; 4]>,
    /// Orders separated by more than a pulse width lose their mutual coherence.
    dephasing: bool,
}

impl Channel {
    pub fn new(spec: &FiberSpec, modes: &ModeSet, pulse_width_s: f64) -> Result<Self> {
        spec.validate("fiber")?;
        let arrivals = arrival_times(spec)?;
        let arrival_s: SmallVec<[f64; 4]> = modes
            .modes()
            .iter()
            .map(|m| arrivals.get(&m.order()).copied().unwrap_or(0.0) * 1e-9)
            .collect();
        let spread = arrival_s.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - arrival_s.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Channel {
            modes: modes.clone(),
            survival: spec.survival_probability(),
            coupling: coupling_crosstalk(spec, modes),
            fiber: crosstalk_from_er(spec, modes)?,
            arrival_s,
            dephasing: spread > pulse_width_s,
        })
    }

    pub fn survival_probability(&self) -> f64 {
        self.survival
    }

    /// Net power routing, launch optics followed by the fiber.
    pub fn total_crosstalk(&self) -> CrosstalkMatrix {
        self.coupling
            .then(&self.fiber)
            .expect("both matrices share the channel mode set")
    }

    pub fn fiber_crosstalk(&self) -> &CrosstalkMatrix {
        &self.fiber
    }

    pub fn dephases(&self) -> bool {
        self.dephasing
    }

    /// Loss, crosstalk and delay on the bare OAM ket. `None` means the photon
    /// was absorbed. The returned time is the arrival offset in seconds.
    pub fn transmit_ket<R: Rng + ?Sized>(&self, ket: &OamKet, rng: &mut R) -> Option<(OamKet, f64)> {
        if self.survival < 1.0 && rng.random::<f64>() >= self.survival {
            return None;
        }
        let ket = self.coupling.scatter(ket, rng);
        let mut ket = self.fiber.scatter(&ket, rng);
        if self.dephasing {
            ket = self.dephase(ket, rng);
        }
        let t = ket
            .amplitudes()
            .iter()
            .zip(&self.arrival_s)
            .filter(|(a, _)| a.norm_sqr() > 0.0)
            .map(|(_, t)| *t)
            .fold(f64::INFINITY, f64::min);
        Some((ket, if t.is_finite() { t } else { 0.0 }))
    }

    /// Collapses onto one arrival-time group, chosen by weight.
    fn dephase<R: Rng + ?Sized>(&self, ket: OamKet, rng: &mut R) -> OamKet {
        let mut groups: SmallVec<[(f64, f64); 4]> = SmallVec::new();
        for (a, t) in ket.amplitudes().iter().zip(&self.arrival_s) {
            match groups.iter_mut().find(|(gt, _)| gt == t) {
                Some(g) => g.1 += a.norm_sqr(),
                None => groups.push((*t, a.norm_sqr())),
            }
        }
        if groups.iter().filter(|g| g.1 > 0.0).count() < 2 {
            return ket;
        }
        let total: f64 = groups.iter().map(|g| g.1).sum();
        let mut u = rng.random::<f64>() * total;
        let mut chosen = groups[groups.len() - 1].0;
        for (t, w) in &groups {
            if u < *w {
                chosen = *t;
                break;
            }
            u -= w;
        }
        let amps: Amps = ket
            .amplitudes()
            .iter()
            .zip(&self.arrival_s)
            .map(|(a, t)| if *t == chosen { *a } else { Complex64::new(0.0, 0.0) })
            .collect();
        OamKet::from_raw(self.modes.clone(), amps)
            .normalized()
            .unwrap_or(ket)
    }

    /// Photon-level transmission. `None` means the photon was lost.
    pub fn transmit<R: Rng + ?Sized>(&self, s: &PhotonState, rng: &mut R) -> Result<Option<PhotonState>> {
        let ket = s.oam_ket(&self.modes)?;
        match self.transmit_ket(&ket, rng) {
            None => Ok(None),
            Some((out, t)) => Ok(Some(
                PhotonState::from_oam_ket(&out).with_time_offset(s.time_offset_s() + t)?,
            )),
        }
    }
}
