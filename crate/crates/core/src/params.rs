//! Static protocol constants shared by every stage of the analysis.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Direction of the error-correction syndrome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Bob sends the syndrome-masked message (the default analysis).
    #[default]
    Reverse,
    /// Alice sends it; dark counts are folded into the per-state detection ratios.
    Forward,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "reverse" => Ok(Variant::Reverse),
            "forward" => Ok(Variant::Forward),
            other => Err(format!("unknown variant `{other}` (expected reverse|forward)")),
        }
    }
}

/// Basis in which the final key is distilled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    #[default]
    Plus,
    Times,
}

impl std::str::FromStr for Basis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "plus" => Ok(Basis::Plus),
            "times" => Ok(Basis::Times),
            other => Err(format!("unknown basis `{other}` (expected plus|times)")),
        }
    }
}

/// How the overall security parameter is split into the three tail budgets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum DeltaRule {
    /// `d1 = delta + d' + 1`, `d2 = d3 = delta + d' + 2`.
    #[default]
    Proof,
    /// `d1 = d3 = delta + d' + 2`, `d2 = delta + d' + 1` (the assignment used for the simulations).
    Simulation,
    /// Fixed budgets, used by Monte-Carlo coverage studies where the events must be observable.
    Explicit { d1: f64, d2: f64, d3: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Code size `N` (raw key bits per basis).
    pub n_code: u64,
    /// Number of pulses sent `N'`.
    pub n_sent: u64,
    /// Maximum final key size.
    pub n_max: u64,
    /// Minimum final key size; smaller keys abort.
    pub n_min: u64,
    /// Number of non-vacuum intensities.
    pub k: usize,
    /// Signal intensity index, `1..=k`.
    pub i0: usize,
    pub p_dark: f64,
    /// System error probability of the times basis.
    pub p_sys: f64,
    /// System error probability of the plus basis.
    pub p_sys_plus: f64,
    /// Security parameter: Eve's average information is bounded by `2^-delta`.
    pub delta: f64,
    pub variant: Variant,
    pub delta_rule: DeltaRule,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if self.i0 < 1 || self.i0 > self.k {
            return Err(invalid(format!("i0 = {} must lie in 1..={}", self.i0, self.k)));
        }
        if self.n_min > self.n_max {
            return Err(invalid("n_min must not exceed n_max"));
        }
        if self.n_max == 0 {
            return Err(invalid("n_max must be at least 1"));
        }
        for (name, p) in [
            ("p_dark", self.p_dark),
            ("p_sys", self.p_sys),
            ("p_sys_plus", self.p_sys_plus),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} = {p} is not a probability")));
            }
        }
        if self.p_sys >= 0.5 || self.p_sys_plus >= 0.5 {
            return Err(invalid("system error probabilities must be below 1/2"));
        }
        if !(self.delta >= 0.0) {
            return Err(invalid("delta must be nonnegative"));
        }
        Ok(())
    }

    /// Index of the plus-basis signal kind, `i0 + k`.
    pub fn signal_plus(&self) -> usize {
        self.i0 + self.k
    }

    pub fn n(&self) -> f64 {
        self.n_code as f64
    }
}
