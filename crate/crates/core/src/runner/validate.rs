use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::Write as _;

use super::config::{config_error, ScenarioConfig};
use super::csv::format_float;
use crate::channel::honest_truth;
use crate::decomposition::build_decomposition;
use crate::error::{Error, Result};
use crate::fluctuation::{mean_counts, sample_with, stream_rng, CovarianceModel, EmissionMode, FluctuationContext};
use crate::keysize::{
    deltas_for, phase_error_counts, phase_error_exponent, realized_delta_theta1, realized_theta, sacrifice_size,
    SacrificeOptions,
};
use crate::params::DeltaRule;

/// Stream offset separating the coverage trials from the variance trials.
const COVERAGE_STREAMS: u64 = 1 << 32;

/// Outcome of a Monte-Carlo campaign at the true `(x, y)` of an honest channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub trials: u64,
    pub seed: u64,
    pub n_sent: u64,
    pub x_true: f64,
    pub y_true: f64,
    /// Tangent point used by the variance study.
    pub a: f64,
    pub analytic_variance: f64,
    pub sample_variance: f64,
    /// Standard error of `sample_variance`.
    pub variance_se: f64,
    pub variance_trials: u64,
    /// Budgets `(d1, d2, d3)` of the coverage study.
    pub deltas: [f64; 3],
    pub exceedances: u64,
    pub coverage_trials: u64,
    /// `2^-d1 + 2^-d2`.
    pub nominal_exceedance: f64,
    pub mean_phase_bound: f64,
    pub mean_phase_bound_se: f64,
    /// `2^-d1 + 2^-d2 + 2^-d3`.
    pub phase_budget: f64,
    pub aborted_trials: u64,
    /// More than half of the trials of a study aborted, or the mean counts already do.
    pub abort_dominated: bool,
}

impl ValidationReport {
    pub fn variance_ratio(&self) -> f64 {
        self.sample_variance / self.analytic_variance
    }

    pub fn exceedance_rate(&self) -> f64 {
        self.exceedances as f64 / self.coverage_trials as f64
    }

    /// Binomial standard error of the exceedance rate under the nominal probability.
    pub fn exceedance_se(&self) -> f64 {
        let p = self.nominal_exceedance;
        (p * (1.0 - p) / self.coverage_trials as f64).sqrt()
    }

    pub fn variance_within(&self, rel: f64, ses: f64) -> bool {
        let diff = (self.sample_variance - self.analytic_variance).abs();
        diff <= rel * self.analytic_variance && diff <= ses * self.variance_se
    }

    pub fn coverage_ok(&self) -> bool {
        self.coverage_trials > 0 && self.exceedance_rate() <= self.nominal_exceedance + 3.0 * self.exceedance_se()
    }

    pub fn phase_bound_ok(&self) -> bool {
        self.coverage_trials > 0 && self.mean_phase_bound <= self.phase_budget
    }

    /// `key = value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let f = format_float;
        let mut line = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("writing to a string");
        line("trials", self.trials.to_string());
        line("seed", self.seed.to_string());
        line("n_sent", self.n_sent.to_string());
        line("x_true", f(self.x_true));
        line("y_true", f(self.y_true));
        line("a", f(self.a));
        line("analytic_variance", f(self.analytic_variance));
        line("sample_variance", f(self.sample_variance));
        line("variance_se", f(self.variance_se));
        line("variance_ratio", f(self.variance_ratio()));
        line("variance_trials", self.variance_trials.to_string());
        line("d1", f(self.deltas[0]));
        line("d2", f(self.deltas[1]));
        line("d3", f(self.deltas[2]));
        line("exceedances", self.exceedances.to_string());
        line("coverage_trials", self.coverage_trials.to_string());
        line("exceedance_rate", f(self.exceedance_rate()));
        line("nominal_exceedance", f(self.nominal_exceedance));
        line("exceedance_se", f(self.exceedance_se()));
        line("mean_phase_bound", f(self.mean_phase_bound));
        line("mean_phase_bound_se", f(self.mean_phase_bound_se));
        line("phase_budget", f(self.phase_budget));
        line("aborted_trials", self.aborted_trials.to_string());
        line("abort_dominated", self.abort_dominated.to_string());
        out
    }
}

fn mean_and_var(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    // Large-sample standard error of the sample variance.
    let se = ((m4 - var * var * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt();
    (mean, var, se)
}

fn skippable(e: &Error) -> bool {
    matches!(e, Error::Abort(_) | Error::ZeroDenominator(_) | Error::DegenerateLikelihood { .. })
}

/// Variance and coverage study of the `[profile]` scenario.
///
/// The variance study fixes emissions at their means and compares the analytic variance of
/// the key deviation with its sample variance at the true `(x, y)`. The coverage study draws
/// the full chain, counts trials whose realised `Theta` exceeds the bound built with the
/// `mc` budgets, and averages `2^-exponent` of the phase-error bound.
pub fn mc_validate(cfg: &ScenarioConfig) -> Result<ValidationReport> {
    let trials = cfg.mc.trials;
    if trials < 100 {
        return Err(config_error("mc.trials must be at least 100"));
    }
    let profile = cfg.fixed_profile()?;
    let params = cfg.protocol_params(Some(&profile))?;
    let decomp = build_decomposition(&profile)?;
    let (q, r) = honest_truth(&profile, &cfg.channel, &params)?;
    let a_sent: Vec<f64> = profile
        .send_probs
        .iter()
        .map(|p| (p * params.n_sent as f64).round())
        .collect();
    let ctx = FluctuationContext::new(&params, &decomp, &a_sent, q, r, CovarianceModel::default())?;
    let k = ctx.k;
    let x_true = FRAC_1_SQRT_2 * (ctx.q[k + 1] + ctx.q[2 * k + 1]);
    let y_true = ctx.r[k + 1];
    let d = [cfg.mc.d1, cfg.mc.d2, cfg.mc.d3];
    let mut report = ValidationReport {
        trials,
        seed: cfg.mc.seed,
        n_sent: params.n_sent,
        x_true,
        y_true,
        a: f64::NAN,
        analytic_variance: f64::NAN,
        sample_variance: f64::NAN,
        variance_se: f64::NAN,
        variance_trials: 0,
        deltas: d,
        exceedances: 0,
        coverage_trials: 0,
        nominal_exceedance: (-d[0]).exp2() + (-d[1]).exp2(),
        mean_phase_bound: f64::NAN,
        mean_phase_bound_se: f64::NAN,
        phase_budget: (-d[0]).exp2() + (-d[1]).exp2() + (-d[2]).exp2(),
        aborted_trials: 0,
        abort_dominated: false,
    };
    let means = match mean_counts(&ctx) {
        Ok(m) => m,
        Err(Error::Abort(_)) => {
            report.abort_dominated = true;
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    let exact = means.observed(&ctx.a);
    let options = SacrificeOptions::default();
    let at_mean = sacrifice_size(&exact, &params, &decomp, x_true, y_true, &deltas_for(&params), &options)?;
    report.a = at_mean.a_used;
    report.analytic_variance = at_mean.variance;

    let mut deviations = Vec::with_capacity(trials as usize);
    for t in 0..trials {
        let real = sample_with(&ctx, &mut stream_rng(cfg.mc.seed, t), EmissionMode::FixedAtMean)?;
        match realized_delta_theta1(&real, &ctx, &params, &decomp, x_true, y_true, at_mean.a_used) {
            Ok(v) if v.is_finite() => deviations.push(v),
            Ok(_) => report.aborted_trials += 1,
            Err(e) if skippable(&e) => report.aborted_trials += 1,
            Err(e) => return Err(e),
        }
    }
    let variance_aborts = report.aborted_trials;
    report.variance_trials = deviations.len() as u64;
    if deviations.len() >= 2 {
        let (_, var, se) = mean_and_var(&deviations);
        report.sample_variance = var;
        report.variance_se = se;
    }

    let mut explicit = params.clone();
    explicit.delta_rule = DeltaRule::Explicit {
        d1: d[0],
        d2: d[1],
        d3: d[2],
    };
    let deltas = deltas_for(&explicit);
    let mut bounds = Vec::with_capacity(trials as usize);
    for t in 0..trials {
        let real = sample_with(&ctx, &mut stream_rng(cfg.mc.seed, COVERAGE_STREAMS + t), EmissionMode::Multinomial)?;
        let obs = real.observed();
        if obs.e[ctx.i0] <= ctx.n || obs.e[ctx.s()] <= ctx.n {
            report.aborted_trials += 1;
            continue;
        }
        let b = match sacrifice_size(&obs, &explicit, &decomp, x_true, y_true, &deltas, &options) {
            Ok(b) => b,
            Err(e) if skippable(&e) => {
                report.aborted_trials += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let theta = realized_theta(&real, &ctx, b.a_used);
        if theta + b.delta3 > b.m {
            report.exceedances += 1;
        }
        let (j, t_err) = phase_error_counts(&real, &ctx);
        bounds.push((-phase_error_exponent(&j, t_err, b.m, ctx.n, ctx.variant)).exp2());
    }
    report.coverage_trials = bounds.len() as u64;
    if bounds.len() >= 2 {
        let (mean, var, _) = mean_and_var(&bounds);
        report.mean_phase_bound = mean;
        report.mean_phase_bound_se = (var / bounds.len() as f64).sqrt();
    }
    let half = trials / 2;
    report.abort_dominated = variance_aborts > half || report.aborted_trials - variance_aborts > half;
    Ok(report)
}
