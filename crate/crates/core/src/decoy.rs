//! Decoy-state bounds and asymptotic secret key rate.
//!
//! The chain runs vacuum yield → single-photon yield → single-photon gain →
//! single-photon phase error → key rate. Every clamp that engages is named
//! in the report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montecarlo::{Basis, DecoyIntensities, Intensity, TallyCounts};
use crate::statespace::{entropy_d_unchecked, qber_threshold_collective, Protocol};

/// Relative size below which the final rate difference is treated as zero.
const ROUNDOFF: f64 = 1e-9;

/// One number per intensity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerIntensity {
    pub mu: f64,
    pub nu: f64,
    pub omega: f64,
}

impl PerIntensity {
    pub fn uniform(v: f64) -> Self {
        PerIntensity { mu: v, nu: v, omega: v }
    }

    pub fn get(&self, i: Intensity) -> f64 {
        match i {
            Intensity::Mu => self.mu,
            Intensity::Nu => self.nu,
            Intensity::Omega => self.omega,
        }
    }

    pub fn get_mut(&mut self, i: Intensity) -> &mut f64 {
        match i {
            Intensity::Mu => &mut self.mu,
            Intensity::Nu => &mut self.nu,
            Intensity::Omega => &mut self.omega,
        }
    }
}

/// Gains and error rates measured in one basis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisGains {
    pub gain: PerIntensity,
    pub error: PerIntensity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_stderr: Option<PerIntensity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_stderr: Option<PerIntensity>,
}

/// Everything the decoy analysis needs about one key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainRecord {
    #[serde(default)]
    pub label: String,
    pub dimension: u32,
    #[serde(default)]
    pub intensities: DecoyIntensities,
    pub z: BasisGains,
    pub x: BasisGains,
}

impl GainRecord {
    pub fn basis(&self, b: Basis) -> &BasisGains {
        match b {
            Basis::Z => &self.z,
            Basis::X => &self.x,
        }
    }

    fn basis_mut(&mut self, b: Basis) -> &mut BasisGains {
        match b {
            Basis::Z => &mut self.z,
            Basis::X => &mut self.x,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::Domain(format!("dimension {} < 2", self.dimension)));
        }
        self.intensities.validate("intensities")?;
        for b in Basis::ALL {
            let g = self.basis(b);
            for i in Intensity::ALL {
                for (what, v) in [("gain", g.gain.get(i)), ("error", g.error.get(i))] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Domain(format!("{b} {what} at {i} is {v}, outside [0, 1]")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Link figures reported for the laboratory setup: signal, decoy and
    /// vacuum gains shared by every protocol, and the mean QBERs of each key.
    /// Vacuum error rates are not reported and are set to zero.
    pub fn reported(protocol: Protocol) -> GainRecord {
        let (e_z, e_x) = match protocol {
            Protocol::TwoD => (0.067, 0.079),
            Protocol::FourD => (0.141, 0.181),
            Protocol::Mux6 => (0.078, 0.090),
            Protocol::Mux7 => (0.088, 0.083),
        };
        let gain = PerIntensity {
            mu: 1.6e-4,
            nu: 1.4e-4,
            omega: 3.2e-7,
        };
        let basis = |e: f64| BasisGains {
            gain,
            error: PerIntensity { mu: e, nu: e, omega: 0.0 },
            gain_stderr: None,
            error_stderr: None,
        };
        GainRecord {
            label: protocol.label().to_string(),
            dimension: protocol.dimension() as u32,
            intensities: DecoyIntensities::default(),
            z: basis(e_z),
            x: basis(e_x),
        }
    }

    /// Gains of an ideal Poisson channel with vacuum intensity zero, tuned so
    /// the decoy bounds are tight: the single-photon gain equals `q_mu` and
    /// the single-photon error equals `e_x`. Both bases share the gains.
    pub fn matched(dimension: u32, intensities: DecoyIntensities, q_mu: f64, e_z: f64, e_x: f64) -> Result<GainRecord> {
        let DecoyIntensities { mu, nu, omega, .. } = intensities;
        if omega != 0.0 {
            return Err(Error::Domain("matched gains need a zero vacuum intensity".into()));
        }
        let c = photon_weight(&intensities);
        let y1 = q_mu / c;
        let q_omega = q_mu * (mu.exp() - mu / c);
        if q_omega < 0.0 {
            return Err(Error::Domain("intensity probabilities admit no matched vacuum gain".into()));
        }
        let gain = PerIntensity {
            mu: q_mu,
            nu: (nu * y1 + q_omega) * (-nu).exp(),
            omega: q_omega,
        };
        let basis = |e: f64| BasisGains {
            gain,
            error: PerIntensity::uniform(e),
            gain_stderr: None,
            error_stderr: None,
        };
        let g = GainRecord {
            label: format!("matched-{dimension}D"),
            dimension,
            intensities,
            z: basis(e_z),
            x: basis(e_x),
        };
        g.validate()?;
        Ok(g)
    }

    /// All gains multiplied by `s`; error rates untouched.
    pub fn scaled(&self, s: f64) -> GainRecord {
        let mut g = self.clone();
        for b in Basis::ALL {
            let bg = g.basis_mut(b);
            for i in Intensity::ALL {
                *bg.gain.get_mut(i) *= s;
                if let Some(se) = bg.gain_stderr.as_mut() {
                    *se.get_mut(i) *= s;
                }
            }
        }
        g
    }
}

/// Σ p_α α e^α over the three intensities.
fn photon_weight(i: &DecoyIntensities) -> f64 {
    Intensity::ALL
        .iter()
        .map(|&a| {
            let m = i.mean(a);
            i.probability(a) * m * m.exp()
        })
        .sum()
}

fn vacuum_yield(g: &BasisGains, i: &DecoyIntensities) -> Result<(f64, bool)> {
    let (nu, omega) = (i.nu, i.omega);
    if nu == omega {
        return Err(Error::DegenerateDecoy("nu equals omega".into()));
    }
    let raw = (nu * g.gain.omega * omega.exp() - omega * g.gain.nu * nu.exp()) / (nu - omega);
    Ok((raw.max(0.0), raw < 0.0))
}

fn one_photon_yield(g: &BasisGains, i: &DecoyIntensities, y0: f64) -> Result<(f64, bool)> {
    let (mu, nu, omega) = (i.mu, i.nu, i.omega);
    let denom = mu * nu - mu * omega - nu * nu + omega * omega;
    if denom == 0.0 || mu == 0.0 {
        return Err(Error::DegenerateDecoy("single-photon yield denominator vanishes".into()));
    }
    let bracket = g.gain.nu * nu.exp()
        - g.gain.omega * omega.exp()
        - (nu * nu - omega * omega) / (mu * mu) * (g.gain.mu * mu.exp() - y0);
    let raw = mu / denom * bracket;
    let clamped = raw.clamp(0.0, 1.0);
    Ok((clamped, clamped != raw))
}

/// Lower bound on the vacuum yield of the Z basis.
pub fn zero_photon_yield(g: &GainRecord) -> Result<f64> {
    Ok(vacuum_yield(&g.z, &g.intensities)?.0)
}

/// Lower bound on the single-photon yield of the Z basis, given its vacuum yield.
pub fn single_photon_yield(g: &GainRecord, y0: f64) -> Result<f64> {
    Ok(one_photon_yield(&g.z, &g.intensities, y0)?.0)
}

/// Single-photon yield bound of either basis, with its own vacuum bound.
pub fn basis_single_photon_yield(g: &GainRecord, basis: Basis) -> Result<f64> {
    let b = g.basis(basis);
    let (y0, _) = vacuum_yield(b, &g.intensities)?;
    Ok(one_photon_yield(b, &g.intensities, y0)?.0)
}

/// Single-photon share of the signal-averaged gain.
pub fn single_photon_gain(g: &GainRecord, y1: f64) -> f64 {
    photon_weight(&g.intensities) * y1
}

fn one_photon_error(g: &GainRecord, y1_x: f64) -> Result<(f64, bool)> {
    let i = &g.intensities;
    if i.nu == i.omega {
        return Err(Error::DegenerateDecoy("nu equals omega".into()));
    }
    if !(y1_x > 0.0) {
        return Err(Error::UndefinedErrorRate);
    }
    let raw = (g.x.error.nu * g.z.gain.nu * i.nu.exp() - g.x.error.omega * g.z.gain.omega * i.omega.exp())
        / ((i.nu - i.omega) * y1_x);
    let upper = (g.dimension as f64 - 1.0) / g.dimension as f64;
    let clamped = raw.clamp(0.0, upper);
    Ok((clamped, clamped != raw))
}

/// Upper bound on the single-photon error rate of the X basis.
pub fn single_photon_error(g: &GainRecord, y1_x: f64) -> Result<f64> {
    Ok(one_photon_error(g, y1_x)?.0)
}

/// Outcome of the full decoy chain for one key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub label: String,
    pub dimension: u32,
    pub y0_z: f64,
    pub y1_z: f64,
    pub y0_x: f64,
    pub y1_x: f64,
    pub q1_z: f64,
    pub e1_x: f64,
    /// Signal gain and error rate of the sifted Z key.
    pub q_z: f64,
    pub e_z: f64,
    pub delta_leak: f64,
    pub r_per_pulse: f64,
    pub r_bits_per_s: f64,
    /// First-order propagated uncertainty, when the record carries errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_bits_per_s_stderr: Option<f64>,
    pub threshold_collective: f64,
    pub f_ec: f64,
    pub rep_rate_hz: f64,
    /// Quantities that were pushed back into their physical range.
    #[serde(default)]
    pub clamped: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl KeyRateReport {
    pub fn kbits_per_s(&self) -> f64 {
        self.r_bits_per_s / 1e3
    }
}

/// Runs the decoy chain and the asymptotic key-rate formula. The leak term
/// is `f_ec · h_D` of the signal Z error rate.
pub fn secret_key_rate(g: &GainRecord, rep_rate_hz: f64, f_ec: f64) -> Result<KeyRateReport> {
    g.validate()?;
    if !(f_ec >= 1.0) {
        return Err(Error::Domain(format!("f_ec = {f_ec} must be at least 1")));
    }
    if !(rep_rate_hz > 0.0) {
        return Err(Error::Domain("repetition rate must be positive".into()));
    }
    let d = g.dimension;
    let upper = (d as f64 - 1.0) / d as f64;
    let mut clamped = Vec::new();
    let mut note = |hit: bool, what: &str| {
        if hit {
            clamped.push(what.to_string());
        }
    };

    let (y0_z, c) = vacuum_yield(&g.z, &g.intensities)?;
    note(c, "y0_z");
    let (y1_z, c) = one_photon_yield(&g.z, &g.intensities, y0_z)?;
    note(c, "y1_z");
    let (y0_x, c) = vacuum_yield(&g.x, &g.intensities)?;
    note(c, "y0_x");
    let (y1_x, c) = one_photon_yield(&g.x, &g.intensities, y0_x)?;
    note(c, "y1_x");
    let q1_z = single_photon_gain(g, y1_z);
    let (e1_x, c) = one_photon_error(g, y1_x)?;
    note(c, "e1_x");

    let q_z = g.z.gain.mu;
    let e_z = g.z.error.mu;
    note(e_z > upper, "e_z");
    let delta_leak = f_ec * entropy_d_unchecked(e_z.min(upper), d);

    let secure = q1_z * ((d as f64).log2() - entropy_d_unchecked(e1_x, d));
    let leak = q_z * delta_leak;
    let raw = secure - leak;
    let r_per_pulse = if raw <= ROUNDOFF * secure.abs().max(leak.abs()) {
        note(raw < 0.0, "r_per_pulse");
        0.0
    } else {
        raw
    };

    let threshold = qber_threshold_collective(d);
    let mut warnings = Vec::new();
    if e_z >= threshold {
        warnings.push(format!(
            "Z error rate {:.2}% is at or above the collective-attack threshold {:.2}%",
            100.0 * e_z,
            100.0 * threshold
        ));
    }
    if e1_x >= threshold {
        warnings.push(format!(
            "single-photon X error bound {:.2}% is at or above the collective-attack threshold {:.2}%",
            100.0 * e1_x,
            100.0 * threshold
        ));
    }
    if r_per_pulse == 0.0 {
        warnings.push("no secret key can be distilled".into());
    }

    let mut report = KeyRateReport {
        label: g.label.clone(),
        dimension: d,
        y0_z,
        y1_z,
        y0_x,
        y1_x,
        q1_z,
        e1_x,
        q_z,
        e_z,
        delta_leak,
        r_per_pulse,
        r_bits_per_s: r_per_pulse * rep_rate_hz,
        r_bits_per_s_stderr: None,
        threshold_collective: threshold,
        f_ec,
        rep_rate_hz,
        clamped,
        warnings,
    };
    report.r_bits_per_s_stderr = propagate_stderr(g, rep_rate_hz, f_ec, report.r_bits_per_s);
    Ok(report)
}

/// Linear error propagation by one-sided finite differences of size σ.
fn propagate_stderr(g: &GainRecord, rep_rate_hz: f64, f_ec: f64, base: f64) -> Option<f64> {
    let rate = |h: &GainRecord| -> f64 {
        secret_key_rate_bits(h, rep_rate_hz, f_ec).unwrap_or(base)
    };
    let mut var = 0.0;
    let mut any = false;
    for b in Basis::ALL {
        let bg = g.basis(b);
        for (sigmas, is_gain) in [(bg.gain_stderr, true), (bg.error_stderr, false)] {
            let Some(sigmas) = sigmas else { continue };
            any = true;
            for i in Intensity::ALL {
                let s = sigmas.get(i);
                if s <= 0.0 {
                    continue;
                }
                let mut h = g.clone();
                let field = if is_gain {
                    h.basis_mut(b).gain.get_mut(i)
                } else {
                    h.basis_mut(b).error.get_mut(i)
                };
                *field = (*field + s).min(1.0);
                let delta = rate(&h) - base;
                var += delta * delta;
            }
        }
    }
    any.then(|| var.sqrt())
}

fn secret_key_rate_bits(g: &GainRecord, rep_rate_hz: f64, f_ec: f64) -> Result<f64> {
    let mut h = g.clone();
    for b in Basis::ALL {
        h.basis_mut(b).gain_stderr = None;
        h.basis_mut(b).error_stderr = None;
    }
    Ok(secret_key_rate(&h, rep_rate_hz, f_ec)?.r_bits_per_s)
}

/// Total rate of independently distilled keys, e.g. the two multiplexed keys.
pub fn combined_rate(rates: &[f64]) -> f64 {
    rates.iter().sum()
}

/// Factor by which all gains of `g` must be multiplied to reach `target_bits_per_s`.
/// The rate is linear in the gains as long as no clamp switches.
pub fn gain_scale_for_rate(g: &GainRecord, target_bits_per_s: f64, rep_rate_hz: f64, f_ec: f64) -> Result<f64> {
    let r = secret_key_rate(g, rep_rate_hz, f_ec)?.r_bits_per_s;
    if r <= 0.0 {
        return Err(Error::Domain("record yields no key; no gain scale reaches a positive rate".into()));
    }
    Ok(target_bits_per_s / r)
}

/// Gains, error rates and Poissonian standard errors of one protocol's
/// sifted counters.
pub fn gains_from_tallies(t: &TallyCounts, protocol: Protocol, intensities: DecoyIntensities) -> Result<GainRecord> {
    let mut g = GainRecord {
        label: protocol.label().to_string(),
        dimension: protocol.dimension() as u32,
        intensities,
        z: BasisGains::default(),
        x: BasisGains::default(),
    };
    for b in Basis::ALL {
        let mut gain_se = PerIntensity::default();
        let mut error_se = PerIntensity::default();
        for i in Intensity::ALL {
            let (mut pulses, mut clicks, mut errors) = (0u64, 0u64, 0u64);
            for (k, v) in t.iter() {
                if k.protocol == protocol && k.intensity == i && k.prep_basis == b && k.is_sifted() {
                    pulses += v.counts.pulses;
                    clicks += v.counts.total_clicks();
                    errors += v.counts.errors(k.state);
                }
            }
            if pulses == 0 {
                return Err(Error::MissingKey(format!("{protocol} {b} {i}")));
            }
            let bg = g.basis_mut(b);
            *bg.gain.get_mut(i) = clicks as f64 / pulses as f64;
            *gain_se.get_mut(i) = (clicks as f64).sqrt() / pulses as f64;
            if clicks > 0 {
                *bg.error.get_mut(i) = errors as f64 / clicks as f64;
                *error_se.get_mut(i) = (errors as f64).sqrt() / clicks as f64;
            }
        }
        let bg = g.basis_mut(b);
        bg.gain_stderr = Some(gain_se);
        bg.error_stderr = Some(error_se);
    }
    Ok(g)
}
