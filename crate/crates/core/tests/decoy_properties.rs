use oamqkd::decoy::{gains_from_tallies, secret_key_rate, GainRecord, PerIntensity};
use oamqkd::montecarlo::{run_protocol, DecoyIntensities, Intensity};
use oamqkd::scenario::Scenario;
use oamqkd::statespace::{entropy_d, qber_threshold_collective, Protocol};
use proptest::prelude::*;

const REP: f64 = 6e8;

fn with_errors(g: &GainRecord, e_z: f64, e_x: f64) -> GainRecord {
    let mut g = g.clone();
    g.z.error = PerIntensity { mu: e_z, nu: e_z, omega: g.z.error.omega };
    g.x.error = PerIntensity { mu: e_x, nu: e_x, omega: g.x.error.omega };
    g
}

#[test]
fn rate_never_increases_with_either_error_rate() {
    for protocol in [Protocol::TwoD, Protocol::FourD] {
        let base = GainRecord::reported(protocol);
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.005).collect();
        for &fixed in &grid {
            let mut last_z = f64::INFINITY;
            let mut last_x = f64::INFINITY;
            for &e in &grid {
                let rz = secret_key_rate(&with_errors(&base, e, fixed), REP, 1.0).unwrap().r_bits_per_s;
                let rx = secret_key_rate(&with_errors(&base, fixed, e), REP, 1.0).unwrap().r_bits_per_s;
                assert!(rz <= last_z + 1e-9, "{protocol} E_Z={e} e_X={fixed}");
                assert!(rx <= last_x + 1e-9, "{protocol} E_Z={fixed} e_X={e}");
                last_z = rz;
                last_x = rx;
            }
        }
    }
}

#[test]
fn dimension_comparison_follows_entropy_balance() {
    // With matched gains Q1 = Q and e1 = e_X, so the rate per pulse is
    // Q·[log2 D − h_D(e_X) − h_D(E_Z)].
    let q = 1.6e-4;
    for i in 0..=20 {
        for j in 0..=20 {
            let (e_z, e_x) = (i as f64 * 0.01, j as f64 * 0.01);
            let rate = |d: u32| {
                let g = GainRecord::matched(d, DecoyIntensities::default(), q, e_z, e_x).unwrap();
                secret_key_rate(&g, REP, 1.0).unwrap().r_per_pulse
            };
            let balance = |d: u32| {
                let v = (d as f64).log2() - entropy_d(e_x, d).unwrap() - entropy_d(e_z, d).unwrap();
                (q * v).max(0.0)
            };
            for d in [2, 4] {
                assert!((rate(d) - balance(d)).abs() < 1e-12, "D={d} E_Z={e_z} e_X={e_x}");
            }
            let (r2, r4) = (rate(2), rate(4));
            assert_eq!(r4 > r2, balance(4) > balance(2), "E_Z={e_z} e_X={e_x}");
        }
    }
}

#[test]
fn threshold_errors_leave_no_key() {
    for d in [2u32, 4] {
        let t = qber_threshold_collective(d);
        let at = GainRecord::matched(d, DecoyIntensities::default(), 1.6e-4, t, t).unwrap();
        assert_eq!(secret_key_rate(&at, REP, 1.0).unwrap().r_bits_per_s, 0.0);
        let below = GainRecord::matched(d, DecoyIntensities::default(), 1.6e-4, t - 0.02, t - 0.02).unwrap();
        assert!(secret_key_rate(&below, REP, 1.0).unwrap().r_bits_per_s > 0.0);
    }
}

#[test]
fn gains_from_simulated_tallies() {
    let s = Scenario::default();
    let t = run_protocol(Protocol::TwoD, 50_000_000, &s, 21).unwrap();
    let g = gains_from_tallies(&t, Protocol::TwoD, s.source.intensities).unwrap();
    assert!((g.z.gain.mu / 1.6e-4 - 1.0).abs() < 0.1, "{}", g.z.gain.mu);
    assert!(g.z.gain_stderr.unwrap().mu > 0.0);
    assert!(g.z.error.mu > 0.0 && g.z.error.mu < 0.11);
    assert!(gains_from_tallies(&t, Protocol::FourD, s.source.intensities).is_err());
}

#[test]
fn error_free_tallies_have_zero_error_rates() {
    let mut s = Scenario::ideal();
    s.source.intensities = DecoyIntensities { mu: 0.5, nu: 0.1, omega: 0.0, p_mu: 0.6, p_nu: 0.2, p_omega: 0.2 };
    let t = run_protocol(Protocol::FourD, 500_000, &s, 2).unwrap();
    let g = gains_from_tallies(&t, Protocol::FourD, s.source.intensities).unwrap();
    for i in Intensity::ALL {
        assert_eq!(g.z.error.get(i), 0.0);
        assert_eq!(g.x.error.get(i), 0.0);
    }
    assert_eq!(g.z.gain.omega, 0.0);
}

proptest! {
    #[test]
    fn reports_stay_in_physical_ranges(
        q_mu in 1e-6f64..1e-2,
        q_nu_frac in 0.1f64..2.0,
        q_om_frac in 0.0f64..0.5,
        e_z in 0.0f64..0.5,
        e_x in 0.0f64..0.5,
    ) {
        let mut g = GainRecord::reported(Protocol::TwoD);
        for b in [&mut g.z, &mut g.x] {
            b.gain = PerIntensity { mu: q_mu, nu: q_mu * q_nu_frac, omega: q_mu * q_om_frac };
        }
        let g = with_errors(&g, e_z, e_x);
        let r = match secret_key_rate(&g, REP, 1.0) {
            Err(oamqkd::Error::UndefinedErrorRate) => return Ok(()),
            r => r.unwrap(),
        };
        for v in [r.y0_z, r.y1_z, r.y0_x, r.y1_x] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((0.0..=0.5).contains(&r.e1_x));
        prop_assert!(r.r_bits_per_s >= 0.0);
    }
}
