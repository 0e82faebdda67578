//! Phase-error exponents and the quantity `Theta` evaluated on sampled counts.

use super::entropy::{hbar, hbar_a};
use crate::decomposition::DecompositionMatrix;
use crate::error::Result;
use crate::estimation::linear_estimate;
use crate::fluctuation::{st, FluctuationContext, Realization};
use crate::params::{ProtocolParams, Variant};

/// `[m - N + J^1 (1 - hbar(t / J^1)) + dark]_+`, where `dark` is `J^3 + J^4 + J^5`
/// (reverse) or `J^0 + J^3` (forward). `j` holds `J^0 ..= J^5`.
pub fn phase_error_exponent(j: &[f64; 6], t: f64, m: f64, n: f64, variant: Variant) -> f64 {
    let dark = match variant {
        Variant::Reverse => j[3] + j[4] + j[5],
        Variant::Forward => j[0] + j[3],
    };
    let secure = if j[1] > 0.0 { j[1] * (1.0 - hbar(t / j[1])) } else { 0.0 };
    (m - n + secure + dark).max(0.0)
}

/// Counts entering the phase-error bound of the plus-basis key: single photons
/// detected normally (`J^1`), their phase errors (`t`), and the dark detections.
pub fn phase_error_counts(real: &Realization, ctx: &FluctuationContext) -> ([f64; 6], f64) {
    let s = ctx.s();
    let f = &real.f[s];
    let mut j = [0.0; 6];
    j[1] = f[st(1)] as f64;
    match ctx.variant {
        Variant::Reverse => j[3] = f[st(-1)] as f64,
        Variant::Forward => j[0] = f[st(0)] as f64,
    }
    (j, real.g[s][st(1)] as f64)
}

/// `Theta = N - F^1 (1 - hbar_a(G^1 / F^1)) - dark` on one realisation.
pub fn realized_theta(real: &Realization, ctx: &FluctuationContext, a: f64) -> f64 {
    let (j, t) = phase_error_counts(real, ctx);
    let dark = j[0] + j[3];
    let secure = if j[1] > 0.0 { j[1] * (1.0 - hbar_a(t / j[1], a)) } else { 0.0 };
    ctx.n - secure - dark
}

/// The first deviation term on one realisation, `Theta` minus the estimator with
/// the realised single-photon emissions:
/// `-F^1 (1 - hbar_a(G^1 / F^1)) - dark + N (q1 B^1 (1 - hbar_a(r1)) + attributed) / C`,
/// with `(q1, r1)` the linear estimates from the realised data at `(x, y)`.
pub fn realized_delta_theta1(
    real: &Realization,
    ctx: &FluctuationContext,
    params: &ProtocolParams,
    decomp: &DecompositionMatrix,
    x: f64,
    y: f64,
    a: f64,
) -> Result<f64> {
    let obs = real.observed();
    let est = linear_estimate(&obs, decomp, params, x, y)?;
    let s = ctx.s();
    let cs = obs.c[s];
    let b = &real.b[s];
    let attributed = match ctx.variant {
        Variant::Reverse => obs.a[s] * ctx.p_dark,
        Variant::Forward => decomp.p(s, 0) * obs.a[s] * obs.c[0] / obs.a[0],
    };
    let estimator = ctx.n * (est.q1() * b[1] as f64 * (1.0 - hbar_a(est.r1()?, a)) + attributed) / cs;
    Ok(realized_theta(real, ctx, a) - ctx.n + estimator)
}
