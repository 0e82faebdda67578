//! Simulated fiber channel and coding-rate model used to generate honest data.

use serde::{Deserialize, Serialize};

use crate::decomposition::{multiphoton_yield, IntensityProfile, DEFAULT_SERIES_TOL};
use crate::error::{invalid, AbortReason, Error, Result};
use crate::estimation::ObservedData;
use crate::keysize::hbar;
use crate::params::{ProtocolParams, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    /// Fiber loss `a_1` in dB/km.
    pub fiber_loss_db_per_km: f64,
    /// Receiver loss `a_0` in dB.
    pub receiver_loss_db: f64,
    pub detector_efficiency: f64,
    pub distance_km: f64,
    /// Detection probability of the vacuum.
    pub p0: f64,
    pub p_dark: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            fiber_loss_db_per_km: 0.17,
            receiver_loss_db: 5.0,
            detector_efficiency: 0.1,
            distance_km: 20.0,
            p0: 4.0e-7,
            p_dark: 4.0e-7,
        }
    }
}

impl ChannelParams {
    pub fn at_distance(distance_km: f64) -> Self {
        ChannelParams {
            distance_km,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("fiber_loss_db_per_km", self.fiber_loss_db_per_km),
            ("receiver_loss_db", self.receiver_loss_db),
            ("detector_efficiency", self.detector_efficiency),
            ("distance_km", self.distance_km),
            ("p0", self.p0),
            ("p_dark", self.p_dark),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("channel parameter {name} = {v} must be nonnegative")));
            }
        }
        if self.detector_efficiency > 1.0 || self.p0 > 1.0 || self.p_dark > 1.0 {
            return Err(invalid("detector efficiency and detection probabilities must not exceed 1"));
        }
        Ok(())
    }
}

/// `alpha = eta_det 10^(-(a_1 L + a_0) / 10)`.
pub fn transmittance(ch: &ChannelParams) -> f64 {
    let loss_db = ch.fiber_loss_db_per_km * ch.distance_km + ch.receiver_loss_db;
    ch.detector_efficiency * 10f64.powf(-loss_db / 10.0)
}

/// `1 - e^(-alpha mu) + p_0`, capped at 1.
pub fn detection_prob(mu: f64, ch: &ChannelParams) -> f64 {
    (signal_click(mu, ch) + ch.p0).min(1.0)
}

fn signal_click(mu: f64, ch: &ChannelParams) -> f64 {
    -(-transmittance(ch) * mu).exp_m1()
}

/// Fraction of detections in the common basis that are errors, for a pulse of intensity `mu`.
pub fn error_fraction(mu: f64, ch: &ChannelParams, p_sys: f64) -> f64 {
    let p = detection_prob(mu, ch);
    if p <= 0.0 {
        return 0.0;
    }
    (signal_click(mu, ch) * p_sys + ch.p_dark / 2.0) / p
}

/// Rounded expected counts of every pulse kind on the honest channel.
pub fn expected_observations(
    profile: &IntensityProfile,
    ch: &ChannelParams,
    params: &ProtocolParams,
) -> Result<ObservedData> {
    profile.validate()?;
    ch.validate()?;
    let k = profile.k();
    if k != params.k {
        return Err(invalid(format!("profile has k = {k}, protocol expects {}", params.k)));
    }
    let kinds = 2 * k + 1;
    let mut obs = ObservedData {
        a: vec![0.0; kinds],
        c: vec![0.0; kinds],
        e: vec![0.0; kinds],
        h: vec![0.0; kinds],
    };
    for i in 0..kinds {
        let a = (profile.send_probs[i] * params.n_sent as f64).round();
        let c = (a * detection_prob(profile.mu_of_kind(i), ch)).round();
        obs.a[i] = a;
        obs.c[i] = c;
        obs.e[i] = (c / 2.0).round();
    }
    let n = params.n();
    let signals = [params.i0, params.signal_plus()];
    if signals.iter().any(|&i| obs.e[i] <= n) {
        return Err(Error::Abort(AbortReason::InsufficientCheckBits));
    }
    // Errors of the signal kinds are counted on the check bits only.
    for i in 1..kinds {
        let checks = if signals.contains(&i) { obs.e[i] - n } else { obs.e[i] };
        let p_sys = if i <= k { params.p_sys } else { params.p_sys_plus };
        obs.h[i] = (checks * error_fraction(profile.mu_of_kind(i), ch, p_sys)).round().min(checks);
    }
    obs.validate()?;
    Ok(obs)
}

/// Per-state detection ratios `q^j` and error ratios `r^j` of the honest channel.
///
/// Single photons arrive with probability `alpha` and carry no phase error beyond the
/// system error; multi-photon states share the aggregate yield and err at `p_S`.
/// In the forward variant dark counts are folded into every ratio except those of state 1.
pub fn honest_truth(profile: &IntensityProfile, ch: &ChannelParams, params: &ProtocolParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = profile.k();
    let alpha = transmittance(ch);
    let mut q = vec![0.0; 2 * k + 2];
    q[1] = alpha;
    for l in 2..=k + 1 {
        let y = multiphoton_yield(l, &profile.mus, alpha, DEFAULT_SERIES_TOL)?;
        q[l] = y;
        q[l + k] = y;
    }
    let mut r = vec![params.p_sys_plus; 2 * k + 2];
    r[0] = 0.5;
    r[1] = 0.0;
    for rj in &mut r[2..=k + 1] {
        *rj = params.p_sys;
    }
    if params.variant == Variant::Forward {
        let d = params.p_dark;
        q[0] = d;
        for j in 2..2 * k + 2 {
            // Dark counts err half the time.
            r[j] = (q[j] * r[j] + 0.5 * d) / (q[j] + d);
            q[j] = (q[j] + d).min(1.0);
        }
    }
    Ok((q, r))
}

/// `eta(e) = max(floor, 1 - f hbar(e))`, clipped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodingRateModel {
    pub efficiency_factor: f64,
    pub floor: f64,
    /// Efficiency factors for particular code sizes, overriding the default.
    pub per_code_size: Vec<(u64, f64)>,
}

impl Default for CodingRateModel {
    fn default() -> Self {
        CodingRateModel {
            efficiency_factor: 0.25 / hbar(0.03),
            floor: 0.0,
            per_code_size: Vec::new(),
        }
    }
}

impl CodingRateModel {
    pub fn validate(&self) -> Result<()> {
        let factors = std::iter::once(self.efficiency_factor).chain(self.per_code_size.iter().map(|p| p.1));
        for f in factors {
            if !(f >= 1.0 && f.is_finite()) {
                return Err(invalid(format!("efficiency factor {f} must be at least 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.floor) {
            return Err(invalid(format!("coding-rate floor {} must lie in [0, 1]", self.floor)));
        }
        Ok(())
    }

    pub fn factor_for(&self, n_code: u64) -> f64 {
        self.per_code_size
            .iter()
            .find(|(n, _)| *n == n_code)
            .map_or(self.efficiency_factor, |(_, f)| *f)
    }

    pub fn rate(&self, e: f64, n_code: u64) -> f64 {
        rate_with(e, self.factor_for(n_code), self.floor)
    }
}

/// Coding rate of the default efficiency factor of `model`.
pub fn coding_rate(e: f64, model: &CodingRateModel) -> f64 {
    rate_with(e, model.efficiency_factor, model.floor)
}

fn rate_with(e: f64, f: f64, floor: f64) -> f64 {
    (1.0 - f * hbar(e.clamp(0.0, 1.0))).max(floor).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::decomposition::build_decomposition;
    use crate::estimation::linear_estimate;

    fn params(k: usize, n_sent: u64, n_code: u64) -> ProtocolParams {
        ProtocolParams {
            n_code,
            n_sent,
            n_max: n_code,
            n_min: 1,
            k,
            i0: k,
            p_dark: 4e-7,
            p_sys: 0.03,
            p_sys_plus: 0.03,
            delta: 9.0,
            variant: Variant::Reverse,
            delta_rule: Default::default(),
        }
    }

    #[test]
    fn transmittance_values() {
        let alpha = transmittance(&ChannelParams::default());
        assert!((alpha - 0.1 * 10f64.powf(-0.84)).abs() < 1e-15);
        assert!((alpha - 1.4454e-2).abs() < 1e-6);
        let ideal = ChannelParams {
            distance_km: 0.0,
            receiver_loss_db: 0.0,
            detector_efficiency: 1.0,
            ..Default::default()
        };
        assert_eq!(transmittance(&ideal), 1.0);
    }

    #[test]
    fn detection_probability_values() {
        let ch = ChannelParams::default();
        let p = detection_prob(0.5, &ch);
        assert!((p / 7.2e-3 - 1.0).abs() < 0.02, "p = {p}");
        assert_eq!(detection_prob(0.0, &ch), 4.0e-7);
        assert_eq!(detection_prob(1e9, &ChannelParams { distance_km: 0.0, ..ch }), 1.0);
        // The formula gives 3.2e-4 at 100 km.
        let far = detection_prob(0.5, &ChannelParams::at_distance(100.0));
        assert!((far / 3.2e-4 - 1.0).abs() < 0.02, "p = {far}");
    }

    #[test]
    fn error_rates_at_reference_distances() {
        for (l, target) in [(20.0, 0.0300), (100.0, 0.0306)] {
            let e = error_fraction(0.5, &ChannelParams::at_distance(l), 0.03);
            assert!((e - target).abs() < 2e-4, "L = {l}: e = {e}");
        }
    }

    #[test]
    fn noiseless_channel_has_no_errors() {
        let ch = ChannelParams {
            p_dark: 0.0,
            p0: 0.0,
            ..Default::default()
        };
        let mut p = params(3, 10_000_000, 1_000);
        p.p_sys = 0.0;
        p.p_sys_plus = 0.0;
        p.p_dark = 0.0;
        let profile = IntensityProfile::with_signal_weight(vec![0.0, 0.1, 0.2, 0.5], 3, 0.7).unwrap();
        let obs = expected_observations(&profile, &ch, &p).unwrap();
        assert!(obs.h.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn observations_are_rounded_expectations() {
        let ch = ChannelParams::default();
        let p = params(3, 10_000_000, 10_000);
        let profile = IntensityProfile::with_signal_weight(vec![0.0, 0.1, 0.2, 0.5], 3, 0.7).unwrap();
        let obs = expected_observations(&profile, &ch, &p).unwrap();
        obs.validate().unwrap();
        for i in 0..7 {
            assert_eq!(obs.a[i], (profile.send_probs[i] * 1e7).round());
            assert_eq!(obs.c[i], (obs.a[i] * detection_prob(profile.mu_of_kind(i), &ch)).round());
            assert_eq!(obs.e[i], (obs.c[i] / 2.0).round());
            let checks = if i == 3 || i == 6 { obs.e[i] - 1e4 } else { obs.e[i] };
            if i > 0 {
                assert_eq!(obs.h[i], (checks * error_fraction(profile.mu_of_kind(i), &ch, 0.03)).round());
            }
            assert!(obs.a[i].fract() == 0.0 && obs.h[i].fract() == 0.0);
        }
        assert_eq!(obs.h[0], 0.0);
    }

    #[test]
    fn too_few_detections_abort() {
        let profile = IntensityProfile::with_signal_weight(vec![0.0, 0.1, 0.2, 0.5], 3, 0.7).unwrap();
        let p = params(3, 1_000_000, 10_000);
        let err = expected_observations(&profile, &ChannelParams::default(), &p).unwrap_err();
        assert_eq!(err, Error::Abort(AbortReason::InsufficientCheckBits));
    }

    #[test]
    fn vacuum_ratio_is_recovered_as_zero() {
        let profile = IntensityProfile::with_signal_weight(vec![0.0, 0.1, 0.2, 0.5], 3, 0.7).unwrap();
        let decomp = build_decomposition(&profile).unwrap();
        let p = params(3, 1_000_000_000, 10_000);
        let ch = ChannelParams::default();
        let obs = expected_observations(&profile, &ch, &p).unwrap();
        let (q, _) = honest_truth(&profile, &ch, &p).unwrap();
        let est = linear_estimate(&obs, &decomp, &p, std::f64::consts::FRAC_1_SQRT_2 * (q[4] + q[7]), 0.03).unwrap();
        assert!(est.q_hat[0].abs() < 1e-6, "q0 = {}", est.q_hat[0]);
        assert!((est.q_hat[1] / q[1] - 1.0).abs() < 0.01);
    }

    #[test]
    fn honest_truth_reproduces_aggregate_detection() {
        let profile = IntensityProfile::with_signal_weight(vec![0.0, 0.1, 0.2, 0.5], 3, 0.7).unwrap();
        let decomp = build_decomposition(&profile).unwrap();
        let ch = ChannelParams::default();
        let p = params(3, 1, 1);
        let (q, _) = honest_truth(&profile, &ch, &p).unwrap();
        for i in 1..=3 {
            let total: f64 = (0..=4).map(|j| decomp.p(i, j) * q[j]).sum();
            let expected = detection_prob(profile.mus[i], &ch) - ch.p0;
            assert!((total / expected - 1.0).abs() < 1e-9, "kind {i}");
        }
    }

    #[test]
    fn coding_rate_model() {
        let m = CodingRateModel::default();
        assert!((coding_rate(0.03, &m) - 0.75).abs() < 1e-12);
        assert_eq!(coding_rate(0.0, &m), 1.0);
        assert_eq!(coding_rate(0.5, &m), m.floor);
        let floored = CodingRateModel { floor: 0.1, ..m.clone() };
        assert_eq!(coding_rate(0.5, &floored), 0.1);
        let table = CodingRateModel {
            per_code_size: vec![(10_000, 2.0)],
            ..m
        };
        assert_eq!(table.rate(0.03, 10_000), 1.0 - 2.0 * hbar(0.03));
        assert!((table.rate(0.03, 1_000_000) - 0.75).abs() < 1e-12);
        table.validate().unwrap();
    }

    proptest! {
        #[test]
        fn detection_is_monotone(mu in 0.0f64..2.0, dmu in 0.0f64..1.0, l in 0.0f64..300.0, dl in 0.0f64..50.0) {
            let ch = ChannelParams::at_distance(l);
            prop_assert!(detection_prob(mu + dmu, &ch) >= detection_prob(mu, &ch));
            prop_assert!(detection_prob(mu, &ChannelParams::at_distance(l + dl)) <= detection_prob(mu, &ch));
            prop_assert!(transmittance(&ChannelParams::at_distance(l + dl + 1e-3)) < transmittance(&ch));
        }

        #[test]
        fn error_fraction_decreases_with_intensity(mu in 0.05f64..1.0, dmu in 0.0f64..0.5, l in 0.0f64..200.0) {
            let ch = ChannelParams::at_distance(l);
            let hi = (mu + dmu).min(1.0);
            prop_assert!(error_fraction(hi, &ch, 0.03) <= error_fraction(mu, &ch, 0.03) * (1.0 + 1e-12));
        }
    }
}
