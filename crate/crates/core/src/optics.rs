//! Optical elements between the laser and the detectors: circular
//! polarization states, vortex plates, the parity mode sorter and the two
//! polarization-resolving receivers.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::statespace::{overlap, Amps, ModeSet, OamKet, OamMode, RENORM_TOL};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const H: Complex64 = Complex64::new(FRAC_1_SQRT_2, 0.0);

/// Circular polarization handedness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pol {
    L,
    R,
}

impl Pol {
    pub fn flipped(self) -> Pol {
        match self {
            Pol::L => Pol::R,
            Pol::R => Pol::L,
        }
    }

    /// Handedness carried by a spin-orbit antialigned mode: positive ℓ rides on
    /// R, negative ℓ on L.
    pub fn antialigned_with(ell: i32) -> Pol {
        if ell > 0 {
            Pol::R
        } else {
            Pol::L
        }
    }
}

/// Jones vector in the (L, R) circular basis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolState {
    pub l: Complex64,
    pub r: Complex64,
}

impl PolState {
    pub const L: PolState = PolState { l: ONE, r: ZERO };
    pub const R: PolState = PolState { l: ZERO, r: ONE };
    pub const D: PolState = PolState { l: H, r: H };
    pub const A: PolState = PolState {
        l: H,
        r: Complex64::new(-FRAC_1_SQRT_2, 0.0),
    };

    pub fn new(l: Complex64, r: Complex64) -> Result<Self> {
        let norm = (l.norm_sqr() + r.norm_sqr()).sqrt();
        if (norm - 1.0).abs() > RENORM_TOL {
            return Err(Error::Normalization { norm });
        }
        Ok(PolState {
            l: l / norm,
            r: r / norm,
        })
    }

    pub fn component(&self, pol: Pol) -> Complex64 {
        match pol {
            Pol::L => self.l,
            Pol::R => self.r,
        }
    }
}

/// Joint polarization ⊗ OAM state of a single photon. ℓ = 0 marks the
/// Gaussian mode before the vortex plates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonState {
    amps: BTreeMap<(i32, Pol), Complex64>,
    time_offset_s: f64,
}

impl PhotonState {
    pub fn new(components: impl IntoIterator<Item = ((i32, Pol), Complex64)>) -> Result<Self> {
        let mut amps = BTreeMap::new();
        for (k, a) in components {
            *amps.entry(k).or_insert(ZERO) += a;
        }
        let state = PhotonState {
            amps,
            time_offset_s: 0.0,
        };
        let norm = state.norm_sqr().sqrt();
        if (norm - 1.0).abs() > RENORM_TOL {
            return Err(Error::Normalization { norm });
        }
        Ok(state.scaled(1.0 / norm).pruned())
    }

    /// A Gaussian-mode photon with the given polarization.
    pub fn gaussian(pol: PolState) -> Self {
        PhotonState {
            amps: [((0, Pol::L), pol.l), ((0, Pol::R), pol.r)].into_iter().collect(),
            time_offset_s: 0.0,
        }
        .pruned()
    }

    /// Tags every OAM component with its antialigned polarization.
    pub fn from_oam_ket(ket: &OamKet) -> Self {
        let amps = ket
            .modes()
            .modes()
            .iter()
            .zip(ket.amplitudes())
            .map(|(m, a)| ((m.ell(), Pol::antialigned_with(m.ell())), *a))
            .collect();
        PhotonState {
            amps,
            time_offset_s: 0.0,
        }
        .pruned()
    }

    fn pruned(mut self) -> Self {
        self.amps.retain(|_, a| a.norm_sqr() > 0.0);
        self
    }

    fn scaled(mut self, k: f64) -> Self {
        self.amps.values_mut().for_each(|a| *a *= k);
        self
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn amplitude(&self, ell: i32, pol: Pol) -> Complex64 {
        self.amps.get(&(ell, pol)).copied().unwrap_or(ZERO)
    }

    pub fn components(&self) -> impl Iterator<Item = (i32, Pol, Complex64)> + '_ {
        self.amps.iter().map(|(&(l, p), &a)| (l, p, a))
    }

    pub fn time_offset_s(&self) -> f64 {
        self.time_offset_s
    }

    pub fn with_time_offset(mut self, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("negative time offset {t}")));
        }
        self.time_offset_s = t;
        Ok(self)
    }

    /// The OAM qudit carried by an antialigned state. Fails on Gaussian
    /// components or on aligned polarization tags.
    pub fn oam_ket(&self, modes: &ModeSet) -> Result<OamKet> {
        let mut amps = vec![ZERO; modes.len()];
        for (&(ell, pol), &a) in &self.amps {
            if ell == 0 || pol != Pol::antialigned_with(ell) {
                return Err(Error::NotAntialigned { ell });
            }
            let i = modes
                .index_of(OamMode::new(ell)?)
                .ok_or(Error::ModeOverflow { ell })?;
            amps[i] = a;
        }
        OamKet::new(modes.clone(), &amps)
    }

    /// Reduced OAM distribution, polarization traced out.
    pub fn oam_marginal(&self) -> BTreeMap<i32, f64> {
        let mut out = BTreeMap::new();
        for (&(ell, _), a) in &self.amps {
            *out.entry(ell).or_insert(0.0) += a.norm_sqr();
        }
        out
    }
}

/// A vortex plate of topological charge q, stored as the integer 2q.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VortexPlateSpec {
    twice_q: i32,
}

impl VortexPlateSpec {
    /// q = +3, producing |ℓ| = 6.
    pub const Q1: VortexPlateSpec = VortexPlateSpec { twice_q: 6 };
    /// q = +7/2, producing |ℓ| = 7.
    pub const Q2: VortexPlateSpec = VortexPlateSpec { twice_q: 7 };

    pub fn from_twice_charge(twice_q: i32) -> Result<Self> {
        if twice_q == 0 {
            return Err(Error::Domain("vortex plate charge must be nonzero".into()));
        }
        Ok(VortexPlateSpec { twice_q })
    }

    pub fn from_charge(q: f64) -> Result<Self> {
        let twice = 2.0 * q;
        if (twice - twice.round()).abs() > 1e-12 || twice.abs() > i32::MAX as f64 {
            return Err(Error::Domain(format!("2q = {twice} is not an integer")));
        }
        VortexPlateSpec::from_twice_charge(twice.round() as i32)
    }

    pub fn twice_q(self) -> i32 {
        self.twice_q
    }

    pub fn q(self) -> f64 {
        self.twice_q as f64 / 2.0
    }
}

/// |L, ℓ⟩ → |R, ℓ + 2q⟩ and |R, ℓ⟩ → |L, ℓ − 2q⟩.
///
/// Output modes must be the Gaussian marker or lie in `modes`.
pub fn vortex_transform(
    s: &PhotonState,
    plate: VortexPlateSpec,
    modes: &ModeSet,
) -> Result<PhotonState> {
    let mut amps = BTreeMap::new();
    for (&(ell, pol), &a) in &s.amps {
        let out_ell = match pol {
            Pol::L => ell + plate.twice_q,
            Pol::R => ell - plate.twice_q,
        };
        if out_ell != 0 && !modes.contains(OamMode::new(out_ell)?) {
            return Err(Error::ModeOverflow { ell: out_ell });
        }
        *amps.entry((out_ell, pol.flipped())).or_insert(ZERO) += a;
    }
    Ok(PhotonState {
        amps,
        time_offset_s: s.time_offset_s,
    }
    .pruned())
}

/// The four families of prepared states, each an orthonormal basis of the
/// four-mode space. Each receiver detector set realizes one family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateSet {
    /// Single modes.
    Psi,
    /// Same-|ℓ| superpositions of opposite sign.
    Xi,
    /// Same-sign superpositions of |6| and |7|.
    Varphi,
    /// Four-mode Fourier states.
    Phi,
}

impl StateSet {
    pub const ALL: [StateSet; 4] = [StateSet::Psi, StateSet::Xi, StateSet::Varphi, StateSet::Phi];

    pub fn name(self) -> &'static str {
        match self {
            StateSet::Psi => "psi",
            StateSet::Xi => "xi",
            StateSet::Varphi => "varphi",
            StateSet::Phi => "phi",
        }
    }

    /// Receiver that reads this family out.
    pub fn receiver_kind(self) -> ReceiverKind {
        match self {
            StateSet::Psi | StateSet::Xi => ReceiverKind::PsiXi,
            StateSet::Varphi | StateSet::Phi => ReceiverKind::VarphiPhi,
        }
    }

    /// Ideal kets of the family on the canonical mode set.
    pub fn kets(self) -> &'static [OamKet; 4] {
        static KETS: OnceLock<[[OamKet; 4]; 4]> = OnceLock::new();
        let all = KETS.get_or_init(|| {
            StateSet::ALL.map(|set| {
                [0, 1, 2, 3].map(|i| {
                    let pairs: Vec<(i32, Complex64)> = table_amplitudes(set, i)
                        .iter()
                        .map(|&(l, a)| (l, Complex64::new(a, 0.0)))
                        .collect();
                    OamKet::canonical(&pairs).expect("table states are normalized")
                })
            })
        });
        &all[self as usize]
    }
}

impl fmt::Display for StateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StateSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "psi" | "ψ" => Ok(StateSet::Psi),
            "xi" | "ξ" => Ok(StateSet::Xi),
            "varphi" | "φ" => Ok(StateSet::Varphi),
            "phi" | "ϕ" => Ok(StateSet::Phi),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

fn table_amplitudes(set: StateSet, index: usize) -> &'static [(i32, f64)] {
    const H: f64 = FRAC_1_SQRT_2;
    const TABLE: [[&[(i32, f64)]; 4]; 4] = [
        [&[(6, 1.0)], &[(-6, 1.0)], &[(7, 1.0)], &[(-7, 1.0)]],
        [
            &[(6, H), (-6, H)],
            &[(6, H), (-6, -H)],
            &[(7, H), (-7, H)],
            &[(7, H), (-7, -H)],
        ],
        [
            &[(6, H), (7, H)],
            &[(6, H), (7, -H)],
            &[(-6, H), (-7, H)],
            &[(-6, H), (-7, -H)],
        ],
        [
            &[(6, 0.5), (-6, 0.5), (7, 0.5), (-7, 0.5)],
            &[(6, 0.5), (-6, 0.5), (7, -0.5), (-7, -0.5)],
            &[(6, 0.5), (-6, -0.5), (7, 0.5), (-7, -0.5)],
            &[(6, 0.5), (-6, -0.5), (7, -0.5), (-7, 0.5)],
        ],
    ];
    TABLE[set as usize][index]
}

/// One of the sixteen prepared states, e.g. `ξ₃`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableState {
    pub set: StateSet,
    /// Zero-based position within the family.
    pub index: usize,
}

impl TableState {
    pub fn new(set: StateSet, index: usize) -> Result<Self> {
        if index >= 4 {
            return Err(Error::UnknownLabel(format!("{set}{}", index + 1)));
        }
        Ok(TableState { set, index })
    }

    pub fn all() -> impl Iterator<Item = TableState> {
        StateSet::ALL
            .into_iter()
            .flat_map(|set| (0..4).map(move |index| TableState { set, index }))
    }

    pub fn ideal_ket(self) -> &'static OamKet {
        &self.set.kets()[self.index]
    }

    /// How the state is made: input polarization, then either one plate or a
    /// balanced split over both plates with a relative sign on the q₂ arm.
    pub fn recipe(self) -> Recipe {
        let i = self.index;
        match self.set {
            StateSet::Psi => Recipe {
                input: if i.is_multiple_of(2) { PolState::L } else { PolState::R },
                paths: if i < 2 { Paths::Single(VortexPlateSpec::Q1) } else { Paths::Single(VortexPlateSpec::Q2) },
            },
            StateSet::Xi => Recipe {
                input: if i.is_multiple_of(2) { PolState::D } else { PolState::A },
                paths: if i < 2 { Paths::Single(VortexPlateSpec::Q1) } else { Paths::Single(VortexPlateSpec::Q2) },
            },
            StateSet::Varphi => Recipe {
                input: if i < 2 { PolState::L } else { PolState::R },
                paths: Paths::Dual { sign: if i.is_multiple_of(2) { 1.0 } else { -1.0 } },
            },
            StateSet::Phi => Recipe {
                input: if i < 2 { PolState::D } else { PolState::A },
                paths: Paths::Dual { sign: if i.is_multiple_of(2) { 1.0 } else { -1.0 } },
            },
        }
    }

    pub fn label(self) -> String {
        format!("{}{}", self.set, self.index + 1)
    }
}

impl fmt::Display for TableState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for TableState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownLabel(s.to_string());
        let s_trim = s.trim();
        let split = s_trim
            .char_indices()
            .find(|(_, c)| c.is_ascii_digit() || ('₀'..='₉').contains(c))
            .map(|(i, _)| i)
            .ok_or_else(unknown)?;
        let (name, digits) = s_trim.split_at(split);
        let digit: String = digits
            .chars()
            .map(|c| match c {
                '₀'..='₉' => char::from_digit(c as u32 - '₀' as u32, 10).unwrap_or('x'),
                other => other,
            })
            .collect();
        let n: usize = digit.parse().map_err(|_| unknown())?;
        let set: StateSet = name.parse().map_err(|_| unknown())?;
        if !(1..=4).contains(&n) {
            return Err(unknown());
        }
        TableState::new(set, n - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Paths {
    Single(VortexPlateSpec),
    Dual { sign: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Recipe {
    pub input: PolState,
    pub paths: Paths,
}

/// Builds a Table state from its optical recipe.
pub fn prepare_state(label: &str) -> Result<PhotonState> {
    prepare_table_state(label.parse()?, 0.0)
}

/// As [`prepare_state`], with an extra phase (radians) on the q₂ arm of the
/// dual-path states. Single-plate states ignore it.
pub fn prepare_table_state(state: TableState, arm_phase: f64) -> Result<PhotonState> {
    let modes = ModeSet::canonical();
    let recipe = state.recipe();
    let input = PhotonState::gaussian(recipe.input);
    match recipe.paths {
        Paths::Single(plate) => vortex_transform(&input, plate, &modes),
        Paths::Dual { sign } => {
            let a = vortex_transform(&input, VortexPlateSpec::Q1, &modes)?;
            let b = vortex_transform(&input, VortexPlateSpec::Q2, &modes)?;
            let phase = Complex64::from_polar(sign, arm_phase);
            let mut amps = BTreeMap::new();
            for (k, v) in a.amps {
                *amps.entry(k).or_insert(ZERO) += v * FRAC_1_SQRT_2;
            }
            for (k, v) in b.amps {
                *amps.entry(k).or_insert(ZERO) += v * phase * FRAC_1_SQRT_2;
            }
            Ok(PhotonState {
                amps,
                time_offset_s: 0.0,
            }
            .pruned())
        }
    }
}

/// Imperfections of the state preparation stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepErrors {
    /// Probability that the circular polarization comes out with the wrong
    /// handedness, sending ℓ → −ℓ.
    pub polarization_flip_prob: f64,
    /// Probability of a π error between the L and R components, which negates
    /// the amplitudes of negative ℓ.
    pub polarization_phase_error_prob: f64,
    /// Residual phase of the preparation interferometer, on the q₂ arm.
    pub interferometer_phase_rad: f64,
}

impl Default for PrepErrors {
    fn default() -> Self {
        PrepErrors {
            polarization_flip_prob: 0.071,
            polarization_phase_error_prob: 0.077,
            interferometer_phase_rad: 0.48,
        }
    }
}

impl PrepErrors {
    pub const NONE: PrepErrors = PrepErrors {
        polarization_flip_prob: 0.0,
        polarization_phase_error_prob: 0.0,
        interferometer_phase_rad: 0.0,
    };

    pub fn validate(&self, path: &str) -> Result<()> {
        for (name, p) in [
            ("polarization_flip_prob", self.polarization_flip_prob),
            ("polarization_phase_error_prob", self.polarization_phase_error_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{path}.{name}"), "must lie in [0, 1]"));
            }
        }
        if !self.interferometer_phase_rad.is_finite() {
            return Err(Error::config(
                format!("{path}.interferometer_phase_rad"),
                "must be finite",
            ));
        }
        Ok(())
    }

    /// OAM ket prepared for `state`, before random errors.
    pub fn prepared_ket(&self, state: TableState) -> OamKet {
        prepare_table_state(state, self.interferometer_phase_rad)
            .and_then(|s| s.oam_ket(&ModeSet::canonical()))
            .expect("table recipes stay in the canonical antialigned space")
    }

    /// Applies one random draw of the flip and phase errors.
    pub fn perturb<R: Rng + ?Sized>(&self, ket: OamKet, rng: &mut R) -> OamKet {
        let mut ket = ket;
        if self.polarization_flip_prob > 0.0 && rng.random::<f64>() < self.polarization_flip_prob {
            ket = ket.sign_flipped().expect("canonical set is symmetric");
        }
        if self.polarization_phase_error_prob > 0.0
            && rng.random::<f64>() < self.polarization_phase_error_prob
        {
            ket = ket.with_phase_on(Complex64::new(-1.0, 0.0), |m| m.ell() < 0);
        }
        ket
    }
}

/// Output port of the parity sorter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Port {
    Even,
    Odd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeSorterSpec {
    pub visibility_even: f64,
    pub visibility_odd: f64,
}

impl Default for ModeSorterSpec {
    fn default() -> Self {
        ModeSorterSpec {
            visibility_even: 0.97,
            visibility_odd: 0.98,
        }
    }
}

impl ModeSorterSpec {
    pub const PERFECT: ModeSorterSpec = ModeSorterSpec {
        visibility_even: 1.0,
        visibility_odd: 1.0,
    };

    pub fn validate(&self, path: &str) -> Result<()> {
        for (name, v) in [
            ("visibility_even", self.visibility_even),
            ("visibility_odd", self.visibility_odd),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{path}.{name}"), "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn visibility(&self, even: bool) -> f64 {
        if even {
            self.visibility_even
        } else {
            self.visibility_odd
        }
    }

    /// Probability of leaving through the even and odd ports.
    pub fn port_probabilities(&self, ket: &OamKet) -> [f64; 2] {
        let we = ket.parity_weight(true);
        let wo = ket.parity_weight(false);
        let ve = self.visibility_even;
        let vo = self.visibility_odd;
        let even = we * (1.0 + ve) / 2.0 + wo * (1.0 - vo) / 2.0;
        let odd = we * (1.0 - ve) / 2.0 + wo * (1.0 + vo) / 2.0;
        let total = even + odd;
        [even / total, odd / total]
    }

    /// Samples one routing branch and returns the post-sorter ket.
    ///
    /// Correct routing scales each parity class by √((1+V)/2) and keeps the
    /// superposition intact. Misrouting of class P (probability
    /// w_P (1−V_P)/2) projects onto P and relabels each mode to its
    /// same-sign partner of the other parity.
    pub fn route<R: Rng + ?Sized>(&self, ket: &OamKet, rng: &mut R) -> OamKet {
        let modes = ket.modes().clone();
        let we = ket.parity_weight(true);
        let wo = ket.parity_weight(false);
        let wrong_even = we * (1.0 - self.visibility_even) / 2.0;
        let wrong_odd = wo * (1.0 - self.visibility_odd) / 2.0;
        let total = we + wo;
        let u = rng.random::<f64>() * total;
        let misrouted = if u < wrong_even {
            Some(true)
        } else if u < wrong_even + wrong_odd {
            Some(false)
        } else {
            None
        };
        let amps: Amps = match misrouted {
            None => modes
                .modes()
                .iter()
                .zip(ket.amplitudes())
                .map(|(m, a)| a * ((1.0 + self.visibility(m.is_even())) / 2.0).sqrt())
                .collect(),
            Some(parity) => {
                let mut out: Amps = SmallVec::from_elem(ZERO, modes.len());
                for (m, a) in modes.modes().iter().zip(ket.amplitudes()) {
                    if m.is_even() != parity {
                        continue;
                    }
                    // A mode with no partner in the set is lost from the qudit space.
                    if let Some(j) = modes.parity_partner(*m).and_then(|p| modes.index_of(p)) {
                        out[j] += *a;
                    }
                }
                out
            }
        };
        OamKet::from_raw(modes, amps)
            .normalized()
            .unwrap_or_else(|| ket.clone())
    }
}

/// Routes through the sorter, then reads which port the photon left by.
pub fn sort_parity<R: Rng + ?Sized>(
    s: &PhotonState,
    sorter: &ModeSorterSpec,
    rng: &mut R,
) -> Result<(Port, PhotonState)> {
    let modes = ModeSet::canonical();
    let routed = sorter.route(&s.oam_ket(&modes)?, rng);
    let even = routed.parity_weight(true);
    let port = if rng.random::<f64>() < even { Port::Even } else { Port::Odd };
    let keep_even = port == Port::Even;
    let collapsed = routed
        .with_phase_on(ZERO, |m| m.is_even() != keep_even)
        .normalized()
        .ok_or_else(|| Error::Invariant("empty sorter port selected".into()))?;
    Ok((
        port,
        PhotonState::from_oam_ket(&collapsed).with_time_offset(s.time_offset_s)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiverKind {
    /// Polarization analysis after the sorter; reads ψ and ξ.
    PsiXi,
    /// Adds the Mach-Zehnder that interferes the two sorter ports; reads φ and ϕ.
    VarphiPhi,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverSpec {
    pub kind: ReceiverKind,
    pub insertion_loss_db: f64,
    /// Static offset of the receiver interferometer (varphi_phi only).
    #[serde(default)]
    pub mz_phase_rad: f64,
    /// Amplitude of a sinusoidal drift on top of the static offset.
    #[serde(default)]
    pub mz_drift_amplitude_rad: f64,
    #[serde(default = "default_drift_period")]
    pub mz_drift_period_s: f64,
}

fn default_drift_period() -> f64 {
    10.0
}

impl ReceiverSpec {
    pub fn psi_xi() -> Self {
        ReceiverSpec {
            kind: ReceiverKind::PsiXi,
            insertion_loss_db: 9.0,
            mz_phase_rad: 0.0,
            mz_drift_amplitude_rad: 0.0,
            mz_drift_period_s: default_drift_period(),
        }
    }

    pub fn varphi_phi() -> Self {
        ReceiverSpec {
            kind: ReceiverKind::VarphiPhi,
            insertion_loss_db: 10.0,
            ..ReceiverSpec::psi_xi()
        }
    }

    pub fn lossless(mut self) -> Self {
        self.insertion_loss_db = 0.0;
        self
    }

    pub fn transmittance(&self) -> f64 {
        10f64.powf(-self.insertion_loss_db / 10.0)
    }

    /// Interferometer phase at time `t_s` into the run.
    pub fn phase_at(&self, t_s: f64) -> f64 {
        match self.kind {
            ReceiverKind::PsiXi => 0.0,
            ReceiverKind::VarphiPhi => {
                let drift = if self.mz_drift_amplitude_rad != 0.0 {
                    self.mz_drift_amplitude_rad
                        * (std::f64::consts::TAU * t_s / self.mz_drift_period_s).sin()
                } else {
                    0.0
                };
                self.mz_phase_rad + drift
            }
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.insertion_loss_db >= 0.0) || !self.insertion_loss_db.is_finite() {
            return Err(Error::config(
                format!("{path}.insertion_loss_db"),
                "must be a finite non-negative number of dB",
            ));
        }
        if !self.mz_phase_rad.is_finite() || !self.mz_drift_amplitude_rad.is_finite() {
            return Err(Error::config(format!("{path}.mz_phase_rad"), "must be finite"));
        }
        if !(self.mz_drift_period_s > 0.0) {
            return Err(Error::config(
                format!("{path}.mz_drift_period_s"),
                "must be positive",
            ));
        }
        Ok(())
    }
}

/// Born probabilities of `ket` on each outcome ket, after the receiver
/// interferometer adds `mz_phase` to the odd-|ℓ| arm.
pub fn outcome_probabilities(ket: &OamKet, outcomes: &[OamKet], mz_phase: f64) -> Result<SmallVec<[f64; 4]>> {
    let shifted;
    let ket = if mz_phase != 0.0 {
        shifted = ket.with_phase_on(Complex64::from_polar(1.0, mz_phase), |m| !m.is_even());
        &shifted
    } else {
        ket
    };
    outcomes
        .iter()
        .map(|b| overlap(b, ket).map(|c| c.norm_sqr()))
        .collect()
}

/// Insertion loss as a Bernoulli trial, then a Born-rule outcome draw.
///
/// `outcomes` lists the detector kets; probability not covered by them
/// (an incomplete basis) is returned as no click, like the loss.
pub fn measure_receiver<R: Rng + ?Sized>(
    s: &PhotonState,
    spec: &ReceiverSpec,
    outcomes: &[OamKet],
    rng: &mut R,
) -> Result<Option<usize>> {
    let modes = outcomes
        .first()
        .map(|k| k.modes().clone())
        .unwrap_or_else(ModeSet::canonical);
    let ket = s.oam_ket(&modes)?;
    if rng.random::<f64>() >= spec.transmittance() {
        return Ok(None);
    }
    let probs = outcome_probabilities(&ket, outcomes, spec.phase_at(s.time_offset_s))?;
    Ok(sample_index(&probs, rng.random::<f64>()))
}

pub(crate) fn sample_index(probs: &[f64], u: f64) -> Option<usize> {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Some(i);
        }
    }
    None
}

/// (n_max − n_min)/(n_max + n_min).
pub fn visibility(n_max: u64, n_min: u64) -> Result<f64> {
    if n_max == 0 && n_min == 0 {
        return Err(Error::UndefinedVisibility);
    }
    if n_min > n_max {
        return Err(Error::Domain(format!("n_min {n_min} exceeds n_max {n_max}")));
    }
    Ok((n_max - n_min) as f64 / (n_max + n_min) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn plate_examples() {
        let modes = ModeSet::canonical();
        let out = vortex_transform(&PhotonState::gaussian(PolState::L), VortexPlateSpec::Q1, &modes).unwrap();
        assert_eq!(out.amplitude(6, Pol::R), ONE);
        assert_eq!(out.components().count(), 1);

        let out = vortex_transform(&PhotonState::gaussian(PolState::R), VortexPlateSpec::Q2, &modes).unwrap();
        assert_eq!(out.amplitude(-7, Pol::L), ONE);

        let out = vortex_transform(&PhotonState::gaussian(PolState::D), VortexPlateSpec::Q1, &modes).unwrap();
        assert!((out.amplitude(6, Pol::R) - H).norm() < 1e-15);
        assert!((out.amplitude(-6, Pol::L) - H).norm() < 1e-15);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plate_overflow_is_reported() {
        let modes = ModeSet::canonical();
        let s = PhotonState::new([((6, Pol::L), ONE)]).unwrap();
        assert_eq!(
            vortex_transform(&s, VortexPlateSpec::Q1, &modes),
            Err(Error::ModeOverflow { ell: 12 })
        );
        assert!(VortexPlateSpec::from_charge(1.25).is_err());
        assert_eq!(VortexPlateSpec::from_charge(3.5).unwrap(), VortexPlateSpec::Q2);
    }

    #[test]
    fn prepared_examples() {
        let modes = ModeSet::canonical();
        let psi2 = prepare_state("psi2").unwrap().oam_ket(&modes).unwrap();
        assert_eq!(psi2, OamKet::canonical(&[(-6, ONE)]).unwrap());
        let xi3 = prepare_state("ξ3").unwrap().oam_ket(&modes).unwrap();
        assert!((xi3.amplitude(OamMode::PLUS_7) - H).norm() < 1e-15);
        assert!((xi3.amplitude(OamMode::MINUS_7) - H).norm() < 1e-15);
        let phi4 = prepare_state("phi4").unwrap().oam_ket(&modes).unwrap();
        let expect = [(6, 0.5), (-6, -0.5), (7, -0.5), (-7, 0.5)];
        for (l, a) in expect {
            assert!((phi4.amplitude(OamMode::new(l).unwrap()) - c(a)).norm() < 1e-15);
        }
        assert!(matches!(prepare_state("chi1"), Err(Error::UnknownLabel(_))));
        assert!(matches!(prepare_state("psi5"), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn labels_round_trip() {
        for s in TableState::all() {
            assert_eq!(s.label().parse::<TableState>().unwrap(), s);
        }
        assert_eq!("ϕ₂".parse::<TableState>().unwrap(), TableState::new(StateSet::Phi, 1).unwrap());
        assert_eq!("φ₄".parse::<TableState>().unwrap(), TableState::new(StateSet::Varphi, 3).unwrap());
    }

    #[test]
    fn aligned_state_is_not_an_oam_qudit() {
        let s = PhotonState::new([((6, Pol::L), ONE)]).unwrap();
        assert_eq!(
            s.oam_ket(&ModeSet::canonical()),
            Err(Error::NotAntialigned { ell: 6 })
        );
    }

    #[test]
    fn every_family_is_an_orthonormal_basis() {
        for set in StateSet::ALL {
            assert!(crate::statespace::gram_error(set.kets()) < 1e-12, "{set}");
        }
    }

    #[test]
    fn ideal_receiver_reproduces_identity() {
        let mut rng = rng();
        for state in TableState::all() {
            let s = prepare_state(&state.label()).unwrap();
            let spec = ReceiverSpec {
                kind: state.set.receiver_kind(),
                ..ReceiverSpec::psi_xi().lossless()
            };
            for _ in 0..50 {
                let out = measure_receiver(&s, &spec, state.set.kets(), &mut rng).unwrap();
                assert_eq!(out, Some(state.index), "{state}");
            }
        }
    }

    #[test]
    fn measure_examples() {
        let mut rng = rng();
        let z = crate::statespace::build_mubs(crate::statespace::Protocol::TwoD);
        let s = PhotonState::from_oam_ket(&z.z_basis[0]);
        let spec = ReceiverSpec::psi_xi().lossless();
        for _ in 0..100 {
            assert_eq!(measure_receiver(&s, &spec, &z.z_basis, &mut rng).unwrap(), Some(0));
        }
        let xi1 = prepare_state("xi1").unwrap();
        let mux6 = crate::statespace::build_mubs(crate::statespace::Protocol::Mux6);
        let p = outcome_probabilities(&xi1.oam_ket(&ModeSet::canonical()).unwrap(), &mux6.x_basis, 0.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12);

        let lossy = ReceiverSpec::varphi_phi();
        assert!((lossy.transmittance() - 0.1).abs() < 1e-15);
        let n = 200_000;
        let clicks = (0..n)
            .filter(|_| measure_receiver(&s, &lossy, &z.z_basis, &mut rng).unwrap().is_some())
            .count() as f64;
        let se = (0.1 * 0.9 / n as f64).sqrt();
        assert!((clicks / n as f64 - 0.1).abs() < 4.0 * se);
    }

    #[test]
    fn mz_phase_moves_varphi_outcomes() {
        let ket = StateSet::Varphi.kets()[0].clone();
        let p = outcome_probabilities(&ket, StateSet::Varphi.kets(), std::f64::consts::PI).unwrap();
        assert!((p[1] - 1.0).abs() < 1e-12);
        let spec = ReceiverSpec {
            mz_phase_rad: 0.1,
            mz_drift_amplitude_rad: 0.2,
            mz_drift_period_s: 4.0,
            ..ReceiverSpec::varphi_phi()
        };
        assert!((spec.phase_at(1.0) - 0.3).abs() < 1e-12);
        assert_eq!(ReceiverSpec::psi_xi().phase_at(1.0), 0.0);
    }

    #[test]
    fn sorter_examples() {
        let perfect = ModeSorterSpec::PERFECT;
        let p7 = StateSet::Psi.kets()[2].clone();
        assert_eq!(perfect.port_probabilities(&p7), [0.0, 1.0]);

        let real = ModeSorterSpec::default();
        let p6 = StateSet::Psi.kets()[0].clone();
        let [even, _] = real.port_probabilities(&p6);
        assert!((even - 0.985).abs() < 1e-12);

        // Brute force: collapse onto a parity class, then route it.
        let phi1 = StateSet::Phi.kets()[0].clone();
        let brute: f64 = 0.5 * (1.0 + 0.97) / 2.0 + 0.5 * (1.0 - 0.98) / 2.0;
        assert!((brute - 0.4975).abs() < 1e-12);
        assert!((real.port_probabilities(&phi1)[0] - brute).abs() < 1e-12);

        let mut rng = rng();
        let n = 400_000;
        let s = PhotonState::from_oam_ket(&phi1);
        let evens = (0..n)
            .filter(|_| sort_parity(&s, &real, &mut rng).unwrap().0 == Port::Even)
            .count() as f64;
        let se = (brute * (1.0 - brute) / n as f64).sqrt();
        assert!((evens / n as f64 - brute).abs() < 4.0 * se);
    }

    #[test]
    fn misrouted_photon_moves_to_partner_mode() {
        let sorter = ModeSorterSpec {
            visibility_even: 0.0,
            visibility_odd: 1.0,
        };
        let mut rng = rng();
        let p6 = StateSet::Psi.kets()[0].clone();
        let mut moved = 0;
        for _ in 0..2000 {
            let out = sorter.route(&p6, &mut rng);
            if out.amplitude(OamMode::PLUS_7).norm_sqr() > 0.99 {
                moved += 1;
            } else {
                assert!(out.amplitude(OamMode::PLUS_6).norm_sqr() > 0.99);
            }
        }
        assert!((800..1200).contains(&moved), "{moved}");
    }

    #[test]
    fn visibility_examples() {
        assert_eq!(visibility(100, 0).unwrap(), 1.0);
        assert!((visibility(197, 3).unwrap() - 0.97).abs() < 1e-12);
        assert_eq!(visibility(1, 1).unwrap(), 0.0);
        assert_eq!(visibility(0, 0), Err(Error::UndefinedVisibility));
        assert!(visibility(1, 2).is_err());
    }

    #[test]
    fn prep_errors_flip_and_dephase() {
        let mut rng = rng();
        let always = PrepErrors {
            polarization_flip_prob: 1.0,
            polarization_phase_error_prob: 1.0,
            interferometer_phase_rad: 0.0,
        };
        let xi1 = StateSet::Xi.kets()[0].clone();
        let out = always.perturb(xi1, &mut rng);
        // Flip keeps ξ₁, the phase error turns it into ξ₂.
        assert!((overlap(&StateSet::Xi.kets()[1], &out).unwrap().norm() - 1.0).abs() < 1e-12);
        let phase = PrepErrors {
            interferometer_phase_rad: 0.3,
            ..PrepErrors::NONE
        };
        let k = phase.prepared_ket(TableState::new(StateSet::Varphi, 0).unwrap());
        let rel = k.amplitude(OamMode::PLUS_7) / k.amplitude(OamMode::PLUS_6);
        assert!((rel.arg() - 0.3).abs() < 1e-12);
    }

    fn arb_photon() -> impl Strategy<Value = PhotonState> {
        let keys = [(0, Pol::L), (0, Pol::R), (6, Pol::R), (-6, Pol::L)];
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4)
            .prop_filter("nonzero", |v| v.iter().map(|(a, b)| a * a + b * b).sum::<f64>() > 1e-3)
            .prop_map(move |v| {
                let n: f64 = v.iter().map(|(a, b)| a * a + b * b).sum::<f64>().sqrt();
                PhotonState::new(
                    keys.iter()
                        .zip(v)
                        .map(|(k, (a, b))| (*k, Complex64::new(a / n, b / n))),
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn plate_is_unitary_and_an_involution(s in arb_photon()) {
            let modes = ModeSet::canonical();
            let once = vortex_transform(&s, VortexPlateSpec::Q1, &modes).unwrap();
            prop_assert!((once.norm_sqr() - s.norm_sqr()).abs() < 1e-12);
            let twice = vortex_transform(&once, VortexPlateSpec::Q1, &modes).unwrap();
            for (l, p, a) in s.components() {
                prop_assert!((twice.amplitude(l, p) - a).norm() < 1e-12);
            }
        }

        #[test]
        fn sorter_ports_sum_to_one(v in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4),
                                   ve in 0.0f64..=1.0, vo in 0.0f64..=1.0) {
            let n: f64 = v.iter().map(|(a, b)| a * a + b * b).sum::<f64>().sqrt();
            prop_assume!(n > 1e-3);
            let amps: Vec<_> = v.iter().map(|(a, b)| Complex64::new(a / n, b / n)).collect();
            let ket = OamKet::new(ModeSet::canonical(), &amps).unwrap();
            let sorter = ModeSorterSpec { visibility_even: ve, visibility_odd: vo };
            let [e, o] = sorter.port_probabilities(&ket);
            prop_assert!((e + o - 1.0).abs() < 1e-12);
            prop_assert!(e >= 0.0 && o >= 0.0);
        }
    }
}
