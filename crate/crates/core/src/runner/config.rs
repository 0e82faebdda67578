use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{detection_prob, ChannelParams, CodingRateModel};
use crate::decomposition::IntensityProfile;
use crate::error::{Error, Result};
use crate::keysize::GridSpec;
use crate::params::{Basis, DeltaRule, ProtocolParams, Variant};

/// A complete scenario, read from a TOML file. Every section is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub protocol: ProtocolConfig,
    pub channel: ChannelParams,
    /// Fixed intensities; required by `keysize` and `mc-validate`, ignored by the optimiser.
    pub profile: Option<ProfileConfig>,
    pub optimizer: OptimizerConfig,
    pub coding: CodingRateModel,
    pub sweep: SweepConfig,
    /// Resolution of the worst-case `(x, y)` search.
    pub search: GridSpec,
    pub mc: McConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub n_code: u64,
    /// Pulses sent; chosen from the detection rate of the signal when absent.
    pub n_sent: Option<u64>,
    /// Defaults to `n_code`.
    pub n_max: Option<u64>,
    pub n_min: u64,
    pub k: usize,
    /// Defaults to `k`, the strongest intensity.
    pub i0: Option<usize>,
    /// Defaults to the channel's dark-count probability.
    pub p_dark: Option<f64>,
    pub p_sys: f64,
    pub p_sys_plus: f64,
    pub delta: f64,
    pub variant: Variant,
    pub delta_rule: DeltaRule,
    /// Basis whose key is reported.
    pub basis: Basis,
    /// Safety factor of the automatic choice of `n_sent`.
    pub n_sent_safety: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            n_code: 1_000_000,
            n_sent: None,
            n_max: None,
            n_min: 1,
            k: 3,
            i0: None,
            p_dark: None,
            p_sys: 0.03,
            p_sys_plus: 0.03,
            delta: 9.0,
            variant: Variant::Reverse,
            delta_rule: DeltaRule::Proof,
            basis: Basis::Plus,
            n_sent_safety: 1.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub mus: Vec<f64>,
    /// Per-kind sending probabilities; when absent `signal_weight` is split over the two
    /// signal kinds and the rest shared evenly.
    #[serde(default)]
    pub send_probs: Option<Vec<f64>>,
    #[serde(default = "default_signal_weight")]
    pub signal_weight: f64,
}

fn default_signal_weight() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Admissible nonzero intensities.
    pub mu_values: Vec<f64>,
    /// Candidate total probabilities of the two signal kinds.
    pub signal_weights: Vec<f64>,
    /// Search every sending-probability vector on a grid of step `send_step` instead.
    pub full_send_grid: bool,
    pub send_step: f64,
    /// Coarse `(x, y)` search used to rank candidates.
    pub screen: GridSpec,
    /// Number of best-ranked candidates re-evaluated with the full search.
    pub finalists: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            mu_values: (1..=20).map(|i| i as f64 * 0.05).collect(),
            signal_weights: vec![0.15, 0.3, 0.5, 0.7, 0.9],
            full_send_grid: false,
            send_step: 0.05,
            screen: GridSpec {
                nx: 3,
                ny: 2,
                rounds: 0,
                iterations: 0,
            },
            finalists: 8,
        }
    }
}

/// Axis of a sweep; exactly one list may be given.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub distances_km: Option<Vec<f64>>,
    pub deltas: Option<Vec<f64>>,
    pub code_sizes: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Distance,
    Delta,
    CodeSize,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Distance => "distance_km",
            SweepAxis::Delta => "delta",
            SweepAxis::CodeSize => "n_code",
        }
    }
}

impl SweepConfig {
    pub fn axis(&self) -> Result<Option<(SweepAxis, Vec<f64>)>> {
        let mut given = vec![];
        if let Some(v) = &self.distances_km {
            given.push((SweepAxis::Distance, v.clone()));
        }
        if let Some(v) = &self.deltas {
            given.push((SweepAxis::Delta, v.clone()));
        }
        if let Some(v) = &self.code_sizes {
            given.push((SweepAxis::CodeSize, v.iter().map(|&n| n as f64).collect()));
        }
        match given.len() {
            0 => Ok(None),
            1 => {
                let (axis, values) = given.pop().unwrap();
                if values.is_empty() {
                    return Err(config_error(format!("sweep list `{}` is empty", axis.name())));
                }
                if values.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(config_error(format!("sweep list `{}` must be strictly ascending", axis.name())));
                }
                Ok(Some((axis, values)))
            }
            _ => Err(config_error("more than one sweep axis given")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub trials: u64,
    pub seed: u64,
    /// Tail budgets `(d1, d2, d3)` used for the coverage study.
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            trials: 2000,
            seed: 1,
            d1: 5.0,
            d2: 5.0,
            d3: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
}

pub(crate) fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::InvalidParameter(m) => Error::Config(m),
            other => other,
        };
        self.channel.validate().map_err(as_config)?;
        self.coding.validate().map_err(as_config)?;
        self.sweep.axis()?;
        let p = &self.protocol;
        if p.k == 0 {
            return Err(config_error("protocol.k must be at least 1"));
        }
        if !(p.n_sent_safety >= 1.0) {
            return Err(config_error("protocol.n_sent_safety must be at least 1"));
        }
        let o = &self.optimizer;
        if o.mu_values.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(config_error("optimizer.mu_values must be positive"));
        }
        if o.signal_weights.iter().any(|&w| !(w > 0.0 && w < 1.0)) {
            return Err(config_error("optimizer.signal_weights must lie in (0, 1)"));
        }
        if o.full_send_grid && !(o.send_step > 0.0 && o.send_step < 0.5) {
            return Err(config_error("optimizer.send_step must lie in (0, 1/2)"));
        }
        if o.finalists == 0 {
            return Err(config_error("optimizer.finalists must be at least 1"));
        }
        if self.search.nx == 0 || self.search.ny == 0 || o.screen.nx == 0 || o.screen.ny == 0 {
            return Err(config_error("search grids need at least one point per axis"));
        }
        if let Some(profile) = &self.profile {
            self.intensity_profile(profile).map_err(as_config)?;
        }
        self.protocol_params(None).map(|_| ()).map_err(as_config)
    }

    pub fn intensity_profile(&self, p: &ProfileConfig) -> Result<IntensityProfile> {
        if p.mus.len() != self.protocol.k + 1 {
            return Err(config_error(format!(
                "profile.mus has {} entries, protocol.k = {} needs {}",
                p.mus.len(),
                self.protocol.k,
                self.protocol.k + 1
            )));
        }
        match &p.send_probs {
            Some(probs) => IntensityProfile::new(p.mus.clone(), probs.clone()),
            None => IntensityProfile::with_signal_weight(p.mus.clone(), self.i0(), p.signal_weight),
        }
    }

    pub fn fixed_profile(&self) -> Result<IntensityProfile> {
        let p = self
            .profile
            .as_ref()
            .ok_or_else(|| config_error("this command needs a [profile] section"))?;
        self.intensity_profile(p)
    }

    pub fn i0(&self) -> usize {
        self.protocol.i0.unwrap_or(self.protocol.k)
    }

    /// Protocol constants; `n_sent` falls back to [`desk_n_sent`] for `profile` when not configured.
    pub fn protocol_params(&self, profile: Option<&IntensityProfile>) -> Result<ProtocolParams> {
        let p = &self.protocol;
        let n_sent = match (p.n_sent, profile) {
            (Some(n), _) => n,
            (None, Some(prof)) => desk_n_sent(prof, &self.channel, p.n_code, self.i0(), p.n_sent_safety),
            (None, None) => 0,
        };
        let params = ProtocolParams {
            n_code: p.n_code,
            n_sent,
            n_max: p.n_max.unwrap_or(p.n_code),
            n_min: p.n_min,
            k: p.k,
            i0: self.i0(),
            p_dark: p.p_dark.unwrap_or(self.channel.p_dark),
            p_sys: p.p_sys,
            p_sys_plus: p.p_sys_plus,
            delta: p.delta,
            variant: p.variant,
            delta_rule: p.delta_rule,
        };
        params.validate()?;
        Ok(params)
    }
}

/// `N' = safety * N / (p(mu_i0) * 1/2 * p_{i0+k})`: enough pulses for the plus-basis
/// signal to yield about `safety * N` sifted bits.
pub fn desk_n_sent(profile: &IntensityProfile, ch: &ChannelParams, n_code: u64, i0: usize, safety: f64) -> u64 {
    let k = profile.k();
    let p = detection_prob(profile.mus[i0], ch);
    let frac = profile.send_probs[i0 + k];
    (safety * n_code as f64 / (p * 0.5 * frac)).ceil() as u64
}
