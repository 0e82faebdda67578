use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use super::{EstimatorResult, Method, ObservedData};
use crate::decomposition::DecompositionMatrix;
use crate::error::{invalid, AbortReason, Error, Result};
use crate::params::{ProtocolParams, Variant};

/// Expected detection rate `Xi^(1)_i` of every pulse kind for detection ratios `q`.
pub fn detection_expectation(q: &[f64], decomp: &DecompositionMatrix, p_dark: f64, variant: Variant) -> Vec<f64> {
    let k = decomp.k();
    (0..=2 * k)
        .map(|i| {
            let normal: f64 = (0..=2 * k + 1).map(|j| decomp.p(i, j) * q[j]).sum();
            normal
                + match variant {
                    Variant::Reverse => p_dark,
                    Variant::Forward => p_dark * decomp.p(i, 1),
                }
        })
        .collect()
}

/// Expected detected-error rate `Xi^(2)_i` for kinds `0..=k`; `r` is indexed by state.
pub fn error_expectation(
    q: &[f64],
    r: &[f64],
    decomp: &DecompositionMatrix,
    p_sys: f64,
    p_dark: f64,
    variant: Variant,
) -> Vec<f64> {
    let k = decomp.k();
    let r1 = (1.0 - p_sys) * r[1] + p_sys * (1.0 - r[1]);
    (0..=k)
        .map(|i| {
            let dark = match variant {
                Variant::Reverse => p_dark,
                Variant::Forward => p_dark * decomp.p(i, 1),
            };
            decomp.p(i, 1) * q[1] * r1
                + (2..=k + 1).map(|j| decomp.p(i, j) * q[j] * r[j]).sum::<f64>()
                + 0.5 * (decomp.p(i, 0) * q[0] + dark)
        })
        .collect()
}

/// Upper bound on detection ratios.
pub fn q_upper(params: &ProtocolParams) -> f64 {
    match params.variant {
        Variant::Reverse => 1.0 - params.p_dark,
        Variant::Forward => 1.0,
    }
}

/// `s_i p_i` for the times-basis kinds `1..=k`; the signal kind keeps `N` bits for the key.
pub fn error_rates(obs: &ObservedData, params: &ProtocolParams) -> Result<Vec<f64>> {
    let k = params.k;
    let n = params.n();
    let mut out = vec![0.0; k + 1];
    for (i, v) in out.iter_mut().enumerate().skip(1) {
        let checks = if i == params.i0 { obs.e[i] - n } else { obs.e[i] };
        if i == params.i0 && checks <= 0.0 {
            return Err(Error::Abort(AbortReason::InsufficientCheckBits));
        }
        if checks <= 0.0 || obs.a[i] <= 0.0 {
            return Err(Error::ZeroDenominator(format!("no check bits for kind {i}")));
        }
        *v = obs.h[i] / checks * obs.p(i);
    }
    Ok(out)
}

pub(crate) fn check_inputs(
    obs: &ObservedData,
    decomp: &DecompositionMatrix,
    params: &ProtocolParams,
    x: f64,
    y: f64,
) -> Result<()> {
    obs.validate()?;
    if obs.k() != decomp.k() || params.k != decomp.k() {
        return Err(invalid("data, protocol and decomposition disagree on k"));
    }
    if obs.a.iter().any(|&a| a <= 0.0) {
        return Err(Error::ZeroDenominator("a pulse kind was never sent".into()));
    }
    let x_max = SQRT_2 * q_upper(params);
    if !(0.0..=x_max * (1.0 + 1e-12)).contains(&x) {
        return Err(invalid(format!("x = {x} outside [0, {x_max}]")));
    }
    if !(0.0..=1.0).contains(&y) {
        return Err(invalid(format!("y = {y} outside [0, 1]")));
    }
    Ok(())
}

/// Closed-form estimator obtained by inverting the expectation equations at fixed `(x, y)`.
pub fn linear_estimate(
    obs: &ObservedData,
    decomp: &DecompositionMatrix,
    params: &ProtocolParams,
    x: f64,
    y: f64,
) -> Result<EstimatorResult> {
    check_inputs(obs, decomp, params, x, y)?;
    let k = decomp.k();
    let p_dark = params.p_dark;
    let p0 = obs.p(0);
    // Right-hand side of the detection equations with the vacuum, dark and fixed terms removed.
    let rhs: Vec<f64> = (1..=2 * k)
        .map(|i| {
            let known = match params.variant {
                Variant::Reverse => p_dark + decomp.pbar(i, 0) * (p0 - p_dark),
                Variant::Forward => decomp.pbar(i, 0) * p0 + decomp.pbar(i, 1) * p_dark,
            };
            obs.p(i) - known - x * decomp.pbar(i, 2 * k + 1)
        })
        .collect();
    let xi: Vec<f64> = (1..=2 * k)
        .map(|j| (1..=2 * k).map(|i| decomp.pbar_inv(j, i) * rhs[i - 1]).sum())
        .collect();
    let mut q = vec![0.0; 2 * k + 2];
    q[0] = match params.variant {
        Variant::Reverse => p0 - p_dark,
        Variant::Forward => p0,
    };
    for j in 1..=2 * k {
        q[j] = xi[j - 1];
    }
    q[k + 1] = FRAC_1_SQRT_2 * (x + xi[k]);
    q[2 * k + 1] = FRAC_1_SQRT_2 * (x - xi[k]);

    let sp = error_rates(obs, params)?;
    let basis: Vec<f64> = (1..=k)
        .map(|i| {
            let known = match params.variant {
                Variant::Reverse => 0.5 * (decomp.p(i, 0) * (p0 - p_dark) + p_dark),
                Variant::Forward => 0.5 * (decomp.p(i, 0) * p0 + decomp.p(i, 1) * p_dark),
            };
            sp[i] - known - decomp.p(i, k + 1) * q[k + 1] * y
        })
        .collect();
    let mut r = vec![f64::NAN; k + 2];
    let mut undefined = vec![];
    for j in 1..=k {
        let w: f64 = (1..=k).map(|i| decomp.pk_inv(j, i) * basis[i - 1]).sum();
        if q[j] == 0.0 {
            undefined.push(j);
            continue;
        }
        let zeta = w / q[j];
        r[j] = if j == 1 {
            (zeta - params.p_sys) / (1.0 - 2.0 * params.p_sys)
        } else {
            zeta
        };
    }
    r[k + 1] = y;
    Ok(EstimatorResult::new(q, r, x, y, Method::Linear, params, undefined))
}
