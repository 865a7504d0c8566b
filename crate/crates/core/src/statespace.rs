//! Complex-amplitude algebra for OAM qudits.
//!
//! Vectors and matrices over the default mode set always use the layout
//! `(-7, -6, +6, +7)`. Everything here is an immutable value.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Tolerance for an already-normalized ket or distribution.
pub const NORM_TOL: f64 = 1e-9;
/// Inputs whose norm deviates by at most this much are silently renormalized.
pub const RENORM_TOL: f64 = 1e-6;

/// Orbital angular momentum quantum number ℓ (in units of ħ). Never zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct OamMode(i32);

impl OamMode {
    pub const MINUS_7: OamMode = OamMode(-7);
    pub const MINUS_6: OamMode = OamMode(-6);
    pub const PLUS_6: OamMode = OamMode(6);
    pub const PLUS_7: OamMode = OamMode(7);

    pub fn new(ell: i32) -> Result<Self> {
        if ell == 0 {
            return Err(Error::Domain(
                "ell = 0 is the Gaussian mode, not an OAM qudit level".into(),
            ));
        }
        Ok(OamMode(ell))
    }

    pub const fn ell(self) -> i32 {
        self.0
    }

    pub const fn order(self) -> u32 {
        self.0.unsigned_abs()
    }

    pub const fn is_even(self) -> bool {
        self.0 % 2 == 0
    }

    pub const fn flipped(self) -> OamMode {
        OamMode(-self.0)
    }
}

impl TryFrom<i32> for OamMode {
    type Error = Error;
    fn try_from(ell: i32) -> Result<Self> {
        OamMode::new(ell)
    }
}

impl From<OamMode> for i32 {
    fn from(m: OamMode) -> i32 {
        m.0
    }
}

impl fmt::Display for OamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.0)
    }
}

/// An ordered set of distinct, nonzero OAM modes (ascending ℓ).
#[derive(Clone, Debug)]
pub struct ModeSet(Arc<[OamMode]>);

impl ModeSet {
    pub fn new(mut modes: Vec<OamMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Dimension("mode set is empty".into()));
        }
        modes.sort();
        if modes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Dimension("mode set has duplicate entries".into()));
        }
        Ok(ModeSet(modes.into()))
    }

    /// The four modes used throughout: (-7, -6, +6, +7).
    pub fn canonical() -> ModeSet {
        static CANONICAL: OnceLock<ModeSet> = OnceLock::new();
        CANONICAL
            .get_or_init(|| {
                ModeSet(Arc::from(
                    &[
                        OamMode::MINUS_7,
                        OamMode::MINUS_6,
                        OamMode::PLUS_6,
                        OamMode::PLUS_7,
                    ][..],
                ))
            })
            .clone()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn modes(&self) -> &[OamMode] {
        &self.0
    }

    pub fn index_of(&self, mode: OamMode) -> Option<usize> {
        self.0.binary_search(&mode).ok()
    }

    pub fn contains(&self, mode: OamMode) -> bool {
        self.index_of(mode).is_some()
    }

    /// Same-sign mode of opposite parity whose order differs by one, if present.
    /// This is where a photon ends up when the parity sorter sends it to the wrong port.
    pub fn parity_partner(&self, mode: OamMode) -> Option<OamMode> {
        let sign = mode.ell().signum();
        [mode.order() + 1, mode.order().saturating_sub(1)]
            .into_iter()
            .filter(|&o| o > 0)
            .map(|o| OamMode(sign * o as i32))
            .find(|m| self.contains(*m))
    }
}

impl PartialEq for ModeSet {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

pub(crate) type Amps = SmallVec<[Complex64; 4]>;

/// A pure OAM qudit state: one complex amplitude per mode of its [`ModeSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct OamKet {
    modes: ModeSet,
    amps: Amps,
}

impl OamKet {
    /// Builds a normalized ket. Norms within [`RENORM_TOL`] of one are rescaled,
    /// anything further off is rejected.
    pub fn new(modes: ModeSet, amplitudes: &[Complex64]) -> Result<Self> {
        if amplitudes.len() != modes.len() {
            return Err(Error::Dimension(format!(
                "{} amplitudes for {} modes",
                amplitudes.len(),
                modes.len()
            )));
        }
        let ket = OamKet {
            modes,
            amps: amplitudes.iter().copied().collect(),
        };
        let norm = ket.norm_sqr().sqrt();
        if (norm - 1.0).abs() <= NORM_TOL {
            Ok(ket)
        } else if (norm - 1.0).abs() <= RENORM_TOL {
            Ok(ket.scaled(1.0 / norm))
        } else {
            Err(Error::Normalization { norm })
        }
    }

    /// Ket on the canonical mode set from `(ell, amplitude)` pairs.
    pub fn canonical(pairs: &[(i32, Complex64)]) -> Result<Self> {
        let modes = ModeSet::canonical();
        let mut amps = vec![Complex64::new(0.0, 0.0); modes.len()];
        for &(ell, a) in pairs {
            let m = OamMode::new(ell)?;
            let i = modes.index_of(m).ok_or(Error::ModeOverflow { ell })?;
            amps[i] += a;
        }
        OamKet::new(modes, &amps)
    }

    pub fn basis_state(modes: ModeSet, mode: OamMode) -> Result<Self> {
        let i = modes
            .index_of(mode)
            .ok_or(Error::ModeOverflow { ell: mode.ell() })?;
        let mut amps: Amps = SmallVec::from_elem(Complex64::new(0.0, 0.0), modes.len());
        amps[i] = Complex64::new(1.0, 0.0);
        Ok(OamKet { modes, amps })
    }

    pub(crate) fn from_raw(modes: ModeSet, amps: Amps) -> Self {
        debug_assert_eq!(modes.len(), amps.len());
        OamKet { modes, amps }
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitude(&self, mode: OamMode) -> Complex64 {
        self.modes
            .index_of(mode)
            .map(|i| self.amps[i])
            .unwrap_or_default()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub(crate) fn scaled(mut self, k: f64) -> Self {
        for a in self.amps.iter_mut() {
            *a *= k;
        }
        self
    }

    /// Rescales to unit norm. Returns `None` for the zero vector.
    pub(crate) fn normalized(self) -> Option<Self> {
        let n = self.norm_sqr();
        if n <= 0.0 {
            None
        } else {
            Some(self.scaled(1.0 / n.sqrt()))
        }
    }

    /// Squared norm of the components of the given parity.
    pub fn parity_weight(&self, even: bool) -> f64 {
        self.modes
            .modes()
            .iter()
            .zip(&self.amps)
            .filter(|(m, _)| m.is_even() == even)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// ℓ → −ℓ on every component (a swap of the circular polarization tag for
    /// antialigned states). Fails if the mode set is not symmetric.
    pub fn sign_flipped(&self) -> Result<Self> {
        let mut amps: Amps = SmallVec::from_elem(Complex64::new(0.0, 0.0), self.amps.len());
        for (m, a) in self.modes.modes().iter().zip(&self.amps) {
            let j = self
                .modes
                .index_of(m.flipped())
                .ok_or(Error::ModeOverflow { ell: -m.ell() })?;
            amps[j] = *a;
        }
        Ok(OamKet::from_raw(self.modes.clone(), amps))
    }

    /// Multiplies the amplitude of every mode selected by `pred` by `phase`.
    pub fn with_phase_on(&self, phase: Complex64, pred: impl Fn(OamMode) -> bool) -> Self {
        let amps = self
            .modes
            .modes()
            .iter()
            .zip(&self.amps)
            .map(|(m, a)| if pred(*m) { a * phase } else { *a })
            .collect();
        OamKet::from_raw(self.modes.clone(), amps)
    }
}

/// ⟨a|b⟩.
pub fn overlap(a: &OamKet, b: &OamKet) -> Result<Complex64> {
    if a.modes != b.modes {
        return Err(Error::Dimension("kets live on different mode sets".into()));
    }
    Ok(a.amps
        .iter()
        .zip(&b.amps)
        .map(|(x, y)| x.conj() * y)
        .sum())
}

/// Protocols and their mutually unbiased bases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "2D")]
    TwoD,
    #[serde(rename = "4D")]
    FourD,
    #[serde(rename = "MUX6")]
    Mux6,
    #[serde(rename = "MUX7")]
    Mux7,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::TwoD,
        Protocol::FourD,
        Protocol::Mux6,
        Protocol::Mux7,
    ];

    pub fn dimension(self) -> usize {
        match self {
            Protocol::FourD => 4,
            _ => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Protocol::TwoD => "2D",
            Protocol::FourD => "4D",
            Protocol::Mux6 => "MUX6",
            Protocol::Mux7 => "MUX7",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "2D" => Ok(Protocol::TwoD),
            "4D" => Ok(Protocol::FourD),
            "MUX6" => Ok(Protocol::Mux6),
            "MUX7" => Ok(Protocol::Mux7),
            _ => Err(Error::config("protocol", format!("unknown protocol `{s}`"))),
        }
    }
}

/// Computational (Z) and Fourier (X) bases of one protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct MubPair {
    pub protocol: Protocol,
    pub dimension: usize,
    pub z_basis: Vec<OamKet>,
    pub x_basis: Vec<OamKet>,
}

impl MubPair {
    /// Largest deviation of |⟨z_i|x_j⟩|² from 1/D.
    pub fn unbiasedness_error(&self) -> f64 {
        let target = 1.0 / self.dimension as f64;
        let mut worst: f64 = 0.0;
        for z in &self.z_basis {
            for x in &self.x_basis {
                let p = overlap(z, x).map(|c| c.norm_sqr()).unwrap_or(f64::INFINITY);
                worst = worst.max((p - target).abs());
            }
        }
        worst
    }

    /// Largest deviation of the Gram matrix from the identity, over both bases.
    pub fn orthonormality_error(&self) -> f64 {
        [&self.z_basis, &self.x_basis]
            .iter()
            .map(|basis| gram_error(basis))
            .fold(0.0, f64::max)
    }
}

pub(crate) fn gram_error(basis: &[OamKet]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            let c = overlap(a, b).unwrap_or(Complex64::new(f64::INFINITY, 0.0));
            worst = worst.max((c - target).norm());
        }
    }
    worst
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn ket(pairs: &[(i32, f64)]) -> OamKet {
    let pairs: Vec<_> = pairs.iter().map(|&(l, a)| (l, c(a))).collect();
    OamKet::canonical(&pairs).expect("basis kets are normalized by construction")
}

pub fn build_mubs(protocol: Protocol) -> MubPair {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (z, x) = match protocol {
        Protocol::TwoD => (
            vec![ket(&[(-6, 1.0)]), ket(&[(-7, 1.0)])],
            vec![ket(&[(-6, h), (-7, h)]), ket(&[(-6, h), (-7, -h)])],
        ),
        Protocol::FourD => (
            vec![
                ket(&[(6, 1.0)]),
                ket(&[(-6, 1.0)]),
                ket(&[(7, 1.0)]),
                ket(&[(-7, 1.0)]),
            ],
            // Sign pattern of the Fourier states as they are prepared (φ-type
            // superpositions of ±6 and ±7); this is the orthonormal choice.
            vec![
                ket(&[(6, 0.5), (-6, 0.5), (7, 0.5), (-7, 0.5)]),
                ket(&[(6, 0.5), (-6, 0.5), (7, -0.5), (-7, -0.5)]),
                ket(&[(6, 0.5), (-6, -0.5), (7, 0.5), (-7, -0.5)]),
                ket(&[(6, 0.5), (-6, -0.5), (7, -0.5), (-7, 0.5)]),
            ],
        ),
        Protocol::Mux6 => (
            vec![ket(&[(6, 1.0)]), ket(&[(-6, 1.0)])],
            vec![ket(&[(6, h), (-6, h)]), ket(&[(6, h), (-6, -h)])],
        ),
        Protocol::Mux7 => (
            vec![ket(&[(7, 1.0)]), ket(&[(-7, 1.0)])],
            vec![ket(&[(7, h), (-7, h)]), ket(&[(7, h), (-7, -h)])],
        ),
    };
    MubPair {
        protocol,
        dimension: protocol.dimension(),
        z_basis: z,
        x_basis: x,
    }
}

/// Parses a protocol label and builds its bases.
pub fn build_mubs_by_label(label: &str) -> Result<MubPair> {
    Ok(build_mubs(label.parse()?))
}

/// A discrete probability distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Dimension("empty distribution".into()));
        }
        if entries.iter().any(|p| !p.is_finite() || *p < -NORM_TOL) {
            return Err(Error::Domain("probabilities must be finite and non-negative".into()));
        }
        let mut entries: Vec<f64> = entries.into_iter().map(|p| p.max(0.0)).collect();
        let total: f64 = entries.iter().sum();
        if (total - 1.0).abs() > RENORM_TOL {
            return Err(Error::Normalization { norm: total });
        }
        if (total - 1.0).abs() > NORM_TOL {
            entries.iter_mut().for_each(|p| *p /= total);
        }
        Ok(ProbDist(entries))
    }

    /// Normalizes non-negative weights (e.g. event counts).
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("weights sum to zero".into()));
        }
        ProbDist::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ProbDist {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbDist::new(v)
    }
}

impl From<ProbDist> for Vec<f64> {
    fn from(p: ProbDist) -> Vec<f64> {
        p.0
    }
}

/// Classical fidelity F(p, r) = Σ √(p_i r_i).
pub fn fidelity(p: &ProbDist, r: &ProbDist) -> Result<f64> {
    if p.len() != r.len() {
        return Err(Error::Dimension(format!(
            "distributions of length {} and {}",
            p.len(),
            r.len()
        )));
    }
    let f: f64 = p.0.iter().zip(&r.0).map(|(a, b)| (a * b).sqrt()).sum();
    Ok(f.min(1.0))
}

/// h_D(x) = −x log₂(x/(D−1)) − (1−x) log₂(1−x), with h_D(0) = 0.
pub fn entropy_d(x: f64, d: u32) -> Result<f64> {
    if d < 2 {
        return Err(Error::Domain(format!("dimension {d} < 2")));
    }
    let upper = (d as f64 - 1.0) / d as f64;
    if !(x >= 0.0 && x <= upper + 1e-12) {
        return Err(Error::Domain(format!(
            "h_{d}({x}) undefined outside [0, {upper}]"
        )));
    }
    Ok(entropy_d_unchecked(x.min(upper), d))
}

pub(crate) fn entropy_d_unchecked(x: f64, d: u32) -> f64 {
    let xlogx = |p: f64, q: f64| if p <= 0.0 { 0.0 } else { p * (p / q).log2() };
    -xlogx(x, d as f64 - 1.0) - xlogx(1.0 - x, 1.0)
}

/// Collective-attack QBER threshold: the root of h_D(e) = ½ log₂ D on (0, (D−1)/D).
///
/// Bisection runs until the bracket stops shrinking, so the result is exact to
/// double precision (well inside the required 1e-6).
pub fn qber_threshold_collective(d: u32) -> f64 {
    assert!(d >= 2, "dimension must be at least 2");
    let target = 0.5 * (d as f64).log2();
    let (mut lo, mut hi) = (0.0_f64, (d as f64 - 1.0) / d as f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if entropy_d_unchecked(mid, d) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Individual-attack QBER limits quoted for the implemented dimensions.
/// No derivation is attempted; other dimensions return `None`.
pub fn individual_attack_threshold(d: u32) -> Option<f64> {
    match d {
        2 => Some(0.146),
        4 => Some(0.240),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn two_d_bases_match_definition() {
        let m = build_mubs(Protocol::TwoD);
        assert_eq!(m.z_basis[0], ket(&[(-6, 1.0)]));
        assert_eq!(m.z_basis[1], ket(&[(-7, 1.0)]));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.x_basis[0].amplitude(OamMode::MINUS_7).re - h).abs() < 1e-15);
        assert!((m.x_basis[1].amplitude(OamMode::MINUS_7).re + h).abs() < 1e-15);
    }

    #[test]
    fn every_protocol_is_mutually_unbiased() {
        for p in Protocol::ALL {
            let m = build_mubs(p);
            assert_eq!(m.z_basis.len(), m.dimension);
            assert_eq!(m.x_basis.len(), m.dimension);
            assert!(m.orthonormality_error() < 1e-12, "{p}");
            assert!(m.unbiasedness_error() < 1e-12, "{p}");
            for z in &m.z_basis {
                let total: f64 = m.x_basis.iter().map(|x| overlap(z, x).unwrap().norm_sqr()).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unknown_protocol_label_is_config_error() {
        assert!(matches!(build_mubs_by_label("8D"), Err(Error::Config { .. })));
        assert_eq!(build_mubs_by_label("mux6").unwrap().protocol, Protocol::Mux6);
    }

    #[test]
    fn fidelity_examples() {
        let u = dist(&[0.25; 4]);
        assert!((fidelity(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        let one = dist(&[1.0, 0.0, 0.0, 0.0]);
        assert!((fidelity(&one, &u).unwrap() - 0.5).abs() < 1e-15);
        let f = fidelity(&dist(&[0.9, 0.1]), &dist(&[1.0, 0.0])).unwrap();
        assert!((f - 0.9_f64.sqrt()).abs() < 1e-15);
        assert!((f - 0.9487).abs() < 1e-4);
        assert!(matches!(fidelity(&u, &one.clone()), Ok(_)));
        assert!(matches!(fidelity(&u, &dist(&[1.0])), Err(Error::Dimension(_))));
    }

    #[test]
    fn prob_dist_normalization_rules() {
        let p = ProbDist::new(vec![0.5, 0.5 + 5e-7]).unwrap();
        assert!((p.entries().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(matches!(
            ProbDist::new(vec![0.5, 0.6]),
            Err(Error::Normalization { .. })
        ));
        assert!(ProbDist::new(vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn ket_normalization_rules() {
        let modes = ModeSet::canonical();
        let z = Complex64::new(0.0, 0.0);
        assert!(OamKet::new(modes.clone(), &[c(1.0 + 5e-7), z, z, z]).is_ok());
        assert!(matches!(
            OamKet::new(modes.clone(), &[c(1.1), z, z, z]),
            Err(Error::Normalization { .. })
        ));
        assert!(matches!(
            OamKet::new(modes, &[c(1.0)]),
            Err(Error::Dimension(_))
        ));
        assert!(OamMode::new(0).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_d(0.5, 2).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(entropy_d(0.0, 4).unwrap(), 0.0);
        assert!((entropy_d(0.189, 4).unwrap() - 1.0).abs() < 2e-3);
        assert!(entropy_d(0.8, 4).is_err());
        assert!(entropy_d(-0.1, 2).is_err());
        assert!(entropy_d(0.1, 1).is_err());
    }

    #[test]
    fn collective_thresholds() {
        let t2 = qber_threshold_collective(2);
        let t4 = qber_threshold_collective(4);
        assert!((t2 - 0.110).abs() <= 0.001, "{t2}");
        assert!((t4 - 0.189).abs() <= 0.001, "{t4}");
        assert!((entropy_d(t2, 2).unwrap() - 0.5).abs() < 1e-5);
        let ts: Vec<f64> = [2, 3, 4, 8].iter().map(|&d| qber_threshold_collective(d)).collect();
        assert!(ts.windows(2).all(|w| w[0] < w[1]), "{ts:?}");
    }

    #[test]
    fn individual_thresholds_are_quoted_constants() {
        assert_eq!(individual_attack_threshold(2), Some(0.146));
        assert_eq!(individual_attack_threshold(4), Some(0.240));
        assert_eq!(individual_attack_threshold(3), None);
    }

    #[test]
    fn overlap_examples() {
        let p6 = ket(&[(6, 1.0)]);
        let m6 = ket(&[(-6, 1.0)]);
        assert!((overlap(&p6, &p6).unwrap() - 1.0).norm() < 1e-15);
        assert!(overlap(&p6, &m6).unwrap().norm() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let xi1 = ket(&[(6, h), (-6, h)]);
        assert!((overlap(&xi1, &p6).unwrap() - h).norm() < 1e-15);
        let other = OamKet::basis_state(
            ModeSet::new(vec![OamMode::new(5).unwrap()]).unwrap(),
            OamMode::new(5).unwrap(),
        )
        .unwrap();
        assert!(matches!(overlap(&p6, &other), Err(Error::Dimension(_))));
    }

    #[test]
    fn parity_partner_in_canonical_set() {
        let m = ModeSet::canonical();
        assert_eq!(m.parity_partner(OamMode::PLUS_6), Some(OamMode::PLUS_7));
        assert_eq!(m.parity_partner(OamMode::MINUS_7), Some(OamMode::MINUS_6));
    }

    fn arb_dist(n: usize) -> impl Strategy<Value = ProbDist> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero", |w| {
            ProbDist::from_weights(&w).ok()
        })
    }

    proptest! {
        #[test]
        fn fidelity_is_symmetric_and_bounded(p in arb_dist(4), r in arb_dist(4)) {
            let a = fidelity(&p, &r).unwrap();
            let b = fidelity(&r, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-14);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn fidelity_with_itself_is_one(p in arb_dist(6)) {
            prop_assert!((fidelity(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_is_concave_and_bounded_on_grid() {
        for d in [2u32, 3, 4, 8] {
            let upper = (d as f64 - 1.0) / d as f64;
            let n = 2000;
            let xs: Vec<f64> = (0..=n).map(|i| upper * i as f64 / n as f64).collect();
            let hs: Vec<f64> = xs.iter().map(|&x| entropy_d(x, d).unwrap()).collect();
            for h in &hs {
                assert!(*h <= (d as f64).log2() + 1e-12);
            }
            for w in hs.windows(3) {
                assert!(w[0] + w[2] <= 2.0 * w[1] + 1e-12, "d={d}");
            }
        }
    }
}
