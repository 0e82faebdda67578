use super::deltas::deltas_for;
use super::sacrifice::{worst_case_sacrifice, GridSpec, SacrificeBreakdown, SacrificeOptions};
use crate::decomposition::DecompositionMatrix;
use crate::error::{AbortReason, Error, Result};
use crate::estimation::ObservedData;
use crate::params::{Basis, ProtocolParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyOutcome {
    pub n_final: u64,
    /// `N eta(e) - m` before flooring and capping.
    pub raw: f64,
    /// Error rate of the key's check bits.
    pub error_rate: f64,
    pub coding_rate: f64,
    /// The key was limited to `n_max` by raising the sacrifice.
    pub capped: bool,
    pub breakdown: SacrificeBreakdown,
}

/// Data and constants with the two bases exchanged, for the times-basis key.
pub fn swapped(obs: &ObservedData, params: &ProtocolParams) -> (ObservedData, ProtocolParams) {
    let mut p = params.clone();
    std::mem::swap(&mut p.p_sys, &mut p.p_sys_plus);
    (obs.swap_bases(), p)
}

/// Final key size of one basis, or the reason the protocol aborts.
pub fn final_key_size(
    obs: &ObservedData,
    params: &ProtocolParams,
    decomp: &DecompositionMatrix,
    coding_rate: &dyn Fn(f64) -> f64,
    basis: Basis,
    grid: &GridSpec,
    options: &SacrificeOptions,
) -> Result<KeyOutcome> {
    params.validate()?;
    let n = params.n();
    if obs.e[params.i0] <= n || obs.e[params.signal_plus()] <= n {
        return Err(Error::Abort(AbortReason::InsufficientCheckBits));
    }
    let (obs, params) = match basis {
        Basis::Plus => (obs.clone(), params.clone()),
        Basis::Times => swapped(obs, params),
    };
    let s = params.signal_plus();
    let error_rate = obs.h[s] / (obs.e[s] - n);
    let eta = coding_rate(error_rate);
    let deltas = deltas_for(&params);
    let mut breakdown = worst_case_sacrifice(&obs, &params, decomp, &deltas, grid, options)?;
    let available = n * eta;
    let raw = available - breakdown.m;
    let cap = params.n_max as f64;
    let capped = raw > cap;
    if capped {
        breakdown.m = available - cap;
    }
    let kept = raw.min(cap);
    if !(kept >= params.n_min as f64) || kept < 1.0 {
        return Err(Error::Abort(AbortReason::BelowMinimum));
    }
    Ok(KeyOutcome {
        n_final: kept.floor() as u64,
        raw,
        error_rate,
        coding_rate: eta,
        capped,
        breakdown,
    })
}
