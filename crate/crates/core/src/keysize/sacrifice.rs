//! Size of privacy amplification at fixed `(x, y)` and its worst case.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use super::deltas::SecurityDeltas;
use super::entropy::hbar_a;
use super::forms::{FormBuilder, VacuumNormalisation};
use super::normal::phi_inv;
use crate::decomposition::DecompositionMatrix;
use crate::error::{Error, Result};
use crate::estimation::{linear_estimate, ml_estimate, q_upper, EstimatorResult, MlOptions, ObservedData};
use crate::fluctuation::{variance_of, CovarianceModel, FluctuationContext};
use crate::params::{ProtocolParams, Variant};

/// How the tangent point of the modified entropy is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TangentChoice {
    /// `a = r^1 + T / S`, recomputed at every `(x, y)`.
    Adaptive,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacrificeOptions {
    pub tangent: TangentChoice,
    pub a_floor: f64,
    /// Used when `S <= 0`.
    pub a_default: f64,
    pub vacuum: VacuumNormalisation,
    pub covariance: CovarianceModel,
    pub ml: MlOptions,
}

impl Default for SacrificeOptions {
    fn default() -> Self {
        SacrificeOptions {
            tangent: TangentChoice::Adaptive,
            a_floor: 1e-4,
            a_default: 0.01,
            vacuum: VacuumNormalisation::default(),
            covariance: CovarianceModel::default(),
            ml: MlOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacrificeBreakdown {
    pub theta_hat: f64,
    /// `sqrt(v) Phi^-1(2^-d1)`.
    pub var_term: f64,
    /// The emission-fluctuation term scaled by `Phi^-1(2^-d2)`.
    pub theta2_term: f64,
    pub delta3: f64,
    pub a_used: f64,
    pub x_star: f64,
    pub y_star: f64,
    pub m: f64,
    /// The variance `v` itself.
    pub variance: f64,
}

/// Estimate of the number of key bits not attributable to secure single photons.
pub fn theta_hat(
    obs: &ObservedData,
    q1_hat: f64,
    r1_hat: f64,
    a: f64,
    params: &ProtocolParams,
    decomp: &DecompositionMatrix,
) -> Result<f64> {
    let s = params.signal_plus();
    let n = params.n();
    let cs = obs.c[s];
    if cs <= 0.0 {
        return Err(Error::ZeroDenominator("no detections at the plus signal kind".into()));
    }
    let dark = match params.variant {
        Variant::Reverse => params.p_dark,
        Variant::Forward => {
            if obs.a[0] <= 0.0 {
                return Err(Error::ZeroDenominator("no vacuum pulses".into()));
            }
            decomp.p(s, 0) * obs.c[0] / obs.a[0]
        }
    };
    let secure = q1_hat * decomp.p(s, 1) * (1.0 - hbar_a(r1_hat, a));
    Ok(n - n * obs.a[s] / cs * (secure + dark))
}

/// `clamp(r1 + T / S, a_floor, 1/2)`, or `a_default` when `S <= 0`.
pub fn choose_a(s: f64, t: f64, r1_hat: f64, a_floor: f64, a_default: f64) -> f64 {
    if !(s > 0.0) {
        return a_default;
    }
    let a = r1_hat + t / s;
    if a.is_nan() {
        a_default
    } else {
        a.clamp(a_floor, 0.5)
    }
}

/// Everything needed to evaluate `m` at one `(x, y)`.
struct Point {
    linear: EstimatorResult,
    ctx: FluctuationContext,
}

fn evaluate_point(
    obs: &ObservedData,
    params: &ProtocolParams,
    decomp: &DecompositionMatrix,
    x: f64,
    y: f64,
    options: &SacrificeOptions,
) -> Result<Point> {
    let linear = linear_estimate(obs, decomp, params, x, y)?;
    let ml = ml_estimate(obs, decomp, params, x, y, options.ml)?;
    let ctx = ml_context(&ml, obs, params, decomp, options.covariance)?;
    Ok(Point { linear, ctx })
}

/// Context at the maximum-likelihood point with emissions at their means.
pub fn ml_context(
    ml: &EstimatorResult,
    obs: &ObservedData,
    params: &ProtocolParams,
    decomp: &DecompositionMatrix,
    covariance: CovarianceModel,
) -> Result<FluctuationContext> {
    let k = decomp.k();
    let qmax = 1.0;
    let q: Vec<f64> = ml.q_hat.iter().map(|v| v.clamp(0.0, qmax)).collect();
    // Plus-basis multi-photon error ratios only shape plus-kind error counts, which
    // do not enter the expansion; they are set to the undetermined ratio `y`.
    let mut r = vec![ml.y; 2 * k + 2];
    r[0] = 0.5;
    r[1..=k + 1].copy_from_slice(&ml.r_hat[1..=k + 1]);
    FluctuationContext::new(params, decomp, &obs.a, q, r, covariance)
}

/// `m` at fixed `(x, y)`.
pub fn sacrifice_size(
    obs: &ObservedData,
    params: &ProtocolParams,
    decomp: &DecompositionMatrix,
    x: f64,
    y: f64,
    deltas: &SecurityDeltas,
    options: &SacrificeOptions,
) -> Result<SacrificeBreakdown> {
    let point = evaluate_point(obs, params, decomp, x, y, options)?;
    breakdown_at(&point, obs, params, decomp, deltas, options)
}

fn breakdown_at(
    point: &Point,
    obs: &ObservedData,
    params: &ProtocolParams,
    decomp: &DecompositionMatrix,
    deltas: &SecurityDeltas,
    options: &SacrificeOptions,
) -> Result<SacrificeBreakdown> {
    let ctx = &point.ctx;
    let s = params.signal_plus();
    let n = params.n();
    let q1 = point.linear.q1();
    let r1 = point.linear.r1()?;
    let phi1 = phi_inv((-deltas.d1).exp2())?;
    let phi2 = phi_inv((-deltas.d2).exp2())?;
    let builder = FormBuilder::new(ctx, decomp, point.linear.y, options.vacuum)?;

    let p1 = decomp.p(s, 1);
    let spread = (obs.a[s] * p1 * (1.0 - p1)).sqrt();
    let q1_ml = ctx.q[1];
    let a = match options.tangent {
        TangentChoice::Fixed(a) => a,
        TangentChoice::Adaptive => {
            let big_s = n * q1_ml / obs.c[s] * (obs.a[s] * p1 - spread * phi2);
            let big_t = variance_of(&builder.phase_part()?, ctx)?.sqrt() * phi1;
            choose_a(big_s, big_t, r1, options.a_floor, options.a_default)
        }
    };

    let theta = theta_hat(obs, q1, r1, a, params, decomp)?;
    let variance = variance_of(&builder.theta1(a)?, ctx)?;
    if !variance.is_finite() {
        return Err(Error::Numerical("variance of the key deviation is not finite".into()));
    }
    let var_term = variance.sqrt() * phi1;
    let theta2_term = n * q1_ml * (1.0 - hbar_a(ctx.r[1], a)) / obs.c[s] * spread * phi2;
    let m = theta + var_term + theta2_term + deltas.d3;
    Ok(SacrificeBreakdown {
        theta_hat: theta,
        var_term,
        theta2_term,
        delta3: deltas.d3,
        a_used: a,
        x_star: point.linear.x,
        y_star: point.linear.y,
        m,
        variance,
    })
}

/// Resolution of the `(x, y)` search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Rounds of golden-section refinement, each covering both axes.
    pub rounds: usize,
    /// Golden-section iterations per axis and round.
    pub iterations: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nx: 33,
            ny: 21,
            rounds: 3,
            iterations: 12,
        }
    }
}

/// Range of `x` over which the worst case is taken.
pub fn x_search_range(params: &ProtocolParams) -> (f64, f64) {
    match params.variant {
        Variant::Reverse => (0.0, SQRT_2 * q_upper(params)),
        Variant::Forward => (1.0, SQRT_2),
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Maximum of `m` over `(x, y)`: a coarse grid followed by golden-section refinement.
pub fn worst_case_sacrifice(
    obs: &ObservedData,
    params: &ProtocolParams,
    decomp: &DecompositionMatrix,
    deltas: &SecurityDeltas,
    grid: &GridSpec,
    options: &SacrificeOptions,
) -> Result<SacrificeBreakdown> {
    let (xlo, xhi) = x_search_range(params);
    let eval = |x: f64, y: f64| sacrifice_size(obs, params, decomp, x, y, deltas, options);
    let xs = linspace(xlo, xhi, grid.nx);
    let ys = linspace(0.0, 1.0, grid.ny);
    let mut best: Option<SacrificeBreakdown> = None;
    for &x in &xs {
        for &y in &ys {
            let b = eval(x, y)?;
            if best.is_none_or(|cur| b.m > cur.m) {
                best = Some(b);
            }
        }
    }
    let mut best = best.expect("grid is not empty");
    let hx = if grid.nx > 1 { (xhi - xlo) / (grid.nx - 1) as f64 } else { 0.0 };
    let hy = if grid.ny > 1 { 1.0 / (grid.ny - 1) as f64 } else { 0.0 };
    for _ in 0..grid.rounds {
        if hx > 0.0 {
            let y = best.y_star;
            let lo = (best.x_star - hx).max(xlo);
            let hi = (best.x_star + hx).min(xhi);
            if let Some(b) = golden_max(lo, hi, grid.iterations, |x| eval(x, y))? {
                if b.m > best.m {
                    best = b;
                }
            }
        }
        if hy > 0.0 {
            let x = best.x_star;
            let lo = (best.y_star - hy).max(0.0);
            let hi = (best.y_star + hy).min(1.0);
            if let Some(b) = golden_max(lo, hi, grid.iterations, |y| eval(x, y))? {
                if b.m > best.m {
                    best = b;
                }
            }
        }
    }
    Ok(best)
}

/// Golden-section search for the maximum of a unimodal function on `[lo, hi]`;
/// returns the best evaluated point.
fn golden_max(
    mut lo: f64,
    mut hi: f64,
    iterations: usize,
    mut f: impl FnMut(f64) -> Result<SacrificeBreakdown>,
) -> Result<Option<SacrificeBreakdown>> {
    if !(hi > lo) {
        return Ok(None);
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut best = if fd.m > fc.m { fd } else { fc };
    for _ in 0..iterations {
        if fc.m >= fd.m {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c)?;
            if fc.m > best.m {
                best = fc;
            }
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d)?;
            if fd.m > best.m {
                best = fd;
            }
        }
    }
    Ok(Some(best))
}
