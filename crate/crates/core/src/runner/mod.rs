//! Scenario configuration, intensity optimisation, sweeps, Monte-Carlo validation and CSV output.

mod config;
mod csv;
mod validate;

pub use config::{
    desk_n_sent, McConfig, OptimizerConfig, OutputConfig, ProfileConfig, ProtocolConfig, ScenarioConfig, SweepAxis,
    SweepConfig,
};
pub use csv::{decomposition_csv, format_float, rows_csv, CSV_SCHEMA};
pub use validate::{mc_validate, ValidationReport};

use std::cmp::Ordering;

use config::config_error;

use crate::channel::expected_observations;
use crate::decomposition::{build_decomposition, IntensityProfile};
use crate::error::{AbortReason, Error, Result};
use crate::keysize::{final_key_size, GridSpec, KeyOutcome, SacrificeOptions};

/// Abort code of sweep rows not evaluated because an earlier distance already aborted.
pub const AFTER_ABORT: &str = "after-abort";

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Key(KeyOutcome),
    /// Machine-readable reason code.
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    /// Chosen intensities and sending probabilities; empty for aborted rows.
    pub mus: Vec<f64>,
    pub send_probs: Vec<f64>,
    pub n_sent: u64,
    pub status: RowStatus,
}

impl SweepRow {
    fn aborted(axis_value: f64, code: &str) -> Self {
        SweepRow {
            axis_value,
            mus: vec![],
            send_probs: vec![],
            n_sent: 0,
            status: RowStatus::Aborted(code.to_string()),
        }
    }

    pub fn outcome(&self) -> Option<&KeyOutcome> {
        match &self.status {
            RowStatus::Key(k) => Some(k),
            RowStatus::Aborted(_) => None,
        }
    }

    pub fn is_aborted(&self) -> bool {
        self.outcome().is_none()
    }

    /// Final key bits per pulse sent; zero for aborted rows.
    pub fn rate(&self) -> f64 {
        self.outcome().map_or(0.0, |o| o.n_final as f64 / self.n_sent as f64)
    }

    pub fn signal_mu(&self) -> Option<f64> {
        self.outcome().and(self.mus.last().copied())
    }
}

/// Key of one fixed profile with the configured channel and protocol.
pub fn evaluate_profile(cfg: &ScenarioConfig, profile: &IntensityProfile, grid: &GridSpec) -> Result<SweepRow> {
    let params = cfg.protocol_params(Some(profile))?;
    let decomp = build_decomposition(profile)?;
    let row = |status| SweepRow {
        axis_value: f64::NAN,
        mus: profile.mus.clone(),
        send_probs: profile.send_probs.clone(),
        n_sent: params.n_sent,
        status,
    };
    let obs = match expected_observations(profile, &cfg.channel, &params) {
        Ok(obs) => obs,
        Err(Error::Abort(reason)) => return Ok(row(RowStatus::Aborted(reason.code().into()))),
        Err(e) => return Err(e),
    };
    let n = params.n_code;
    let coding = |e: f64| cfg.coding.rate(e, n);
    match final_key_size(&obs, &params, &decomp, &coding, cfg.protocol.basis, grid, &SacrificeOptions::default()) {
        Ok(outcome) => Ok(row(RowStatus::Key(outcome))),
        Err(Error::Abort(reason)) => Ok(row(RowStatus::Aborted(reason.code().into()))),
        Err(e) => Err(e),
    }
}

/// The `keysize` command: the profile of the `[profile]` section.
pub fn keysize(cfg: &ScenarioConfig) -> Result<SweepRow> {
    evaluate_profile(cfg, &cfg.fixed_profile()?, &cfg.search)
}

/// Strictly increasing `k`-subsets of `values`, in lexicographic order.
fn increasing_tuples(values: &[f64], k: usize) -> Vec<Vec<f64>> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out = vec![];
    let mut idx: Vec<usize> = (0..k).collect();
    if k == 0 || k > sorted.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| sorted[i]).collect());
        let mut p = k;
        while p > 0 && idx[p - 1] == sorted.len() - k + p - 1 {
            p -= 1;
        }
        if p == 0 {
            return out;
        }
        idx[p - 1] += 1;
        for q in p..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Per-intensity weights on a grid of step `step`, every weight at least one step.
fn weight_compositions(parts: usize, step: f64) -> Vec<Vec<f64>> {
    let units = (1.0 / step).round() as usize;
    let mut out = vec![];
    let mut current = vec![0usize; parts];
    fn rec(pos: usize, left: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let parts = current.len();
        if pos == parts - 1 {
            current[pos] = left;
            out.push(current.clone());
            return;
        }
        for u in 1..=left.saturating_sub(parts - pos - 1) {
            current[pos] = u;
            rec(pos + 1, left - u, current, out);
        }
    }
    let mut raw = vec![];
    if units >= parts {
        rec(0, units, &mut current, &mut raw);
    }
    for c in raw {
        out.push(c.iter().map(|&u| u as f64 / units as f64).collect());
    }
    out
}

/// Every candidate profile of the optimiser, in a fixed order.
pub fn candidate_profiles(cfg: &ScenarioConfig) -> Result<Vec<IntensityProfile>> {
    let k = cfg.protocol.k;
    let i0 = cfg.i0();
    let o = &cfg.optimizer;
    let mut out = vec![];
    for tuple in increasing_tuples(&o.mu_values, k) {
        let mut mus = vec![0.0];
        mus.extend(tuple);
        if o.full_send_grid {
            for w in weight_compositions(k + 1, o.send_step) {
                let mut probs = vec![0.0; 2 * k + 1];
                probs[0] = w[0];
                for i in 1..=k {
                    probs[i] = w[i] / 2.0;
                    probs[i + k] = w[i] / 2.0;
                }
                // Renormalise away the rounding of the grid.
                let total: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= total);
                out.push(IntensityProfile::new(mus.clone(), probs)?);
            }
        } else {
            for &w in &o.signal_weights {
                out.push(IntensityProfile::with_signal_weight(mus.clone(), i0, w)?);
            }
        }
    }
    if out.is_empty() {
        return Err(config_error(format!(
            "the optimiser grid has no strictly increasing choice of {k} intensities"
        )));
    }
    Ok(out)
}

/// Order by rate, descending; ties go to the lexicographically smallest intensities, then
/// sending probabilities.
fn better(a: &SweepRow, b: &SweepRow) -> Ordering {
    b.rate()
        .total_cmp(&a.rate())
        .then_with(|| lex(&a.mus, &b.mus))
        .then_with(|| lex(&a.send_probs, &b.send_probs))
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// Sending profile maximising the key rate over the discrete grid.
///
/// Candidates are ranked with the coarse `optimizer.screen` search and the best
/// `optimizer.finalists` are re-evaluated with the full search. Rows whose every
/// candidate aborts carry the most frequent abort reason.
pub fn optimize_intensities(cfg: &ScenarioConfig) -> Result<SweepRow> {
    let candidates = candidate_profiles(cfg)?;
    let mut screened = vec![];
    let mut below_minimum = 0usize;
    let mut insufficient = 0usize;
    for profile in &candidates {
        let row = evaluate_profile(cfg, profile, &cfg.optimizer.screen)?;
        match &row.status {
            RowStatus::Key(_) => screened.push(row),
            RowStatus::Aborted(code) if code == AbortReason::BelowMinimum.code() => below_minimum += 1,
            RowStatus::Aborted(_) => insufficient += 1,
        }
    }
    screened.sort_by(better);
    let mut best: Option<SweepRow> = None;
    let mut full_runs = 0;
    for row in &screened {
        if full_runs >= cfg.optimizer.finalists && best.is_some() {
            break;
        }
        let profile = IntensityProfile::new(row.mus.clone(), row.send_probs.clone())?;
        let full = evaluate_profile(cfg, &profile, &cfg.search)?;
        full_runs += 1;
        if full.is_aborted() {
            below_minimum += 1;
            continue;
        }
        if best.as_ref().is_none_or(|b| better(&full, b) == Ordering::Less) {
            best = Some(full);
        }
    }
    Ok(best.unwrap_or_else(|| {
        let reason = if below_minimum >= insufficient {
            AbortReason::BelowMinimum
        } else {
            AbortReason::InsufficientCheckBits
        };
        SweepRow::aborted(f64::NAN, reason.code())
    }))
}

/// One optimised row per distance; rows after the first abort are not evaluated.
pub fn scan_distance(cfg: &ScenarioConfig) -> Result<Vec<SweepRow>> {
    let distances = match cfg.sweep.axis()? {
        Some((SweepAxis::Distance, v)) => v,
        _ => return Err(config_error("scan-distance needs sweep.distances_km")),
    };
    let mut rows = vec![];
    let mut stopped = false;
    for d in distances {
        if stopped {
            rows.push(SweepRow::aborted(d, AFTER_ABORT));
            continue;
        }
        let mut c = cfg.clone();
        c.channel.distance_km = d;
        let mut row = optimize_intensities(&c)?;
        row.axis_value = d;
        stopped = row.is_aborted();
        rows.push(row);
    }
    Ok(rows)
}

/// One optimised row per security parameter at the configured distance.
pub fn scan_delta(cfg: &ScenarioConfig) -> Result<Vec<SweepRow>> {
    let deltas = match cfg.sweep.axis()? {
        Some((SweepAxis::Delta, v)) => v,
        _ => return Err(config_error("scan-delta needs sweep.deltas")),
    };
    deltas
        .into_iter()
        .map(|delta| {
            let mut c = cfg.clone();
            c.protocol.delta = delta;
            let mut row = optimize_intensities(&c)?;
            row.axis_value = delta;
            Ok(row)
        })
        .collect()
}

/// One optimised row per code size.
pub fn scan_code_size(cfg: &ScenarioConfig) -> Result<Vec<SweepRow>> {
    let sizes = match cfg.sweep.axis()? {
        Some((SweepAxis::CodeSize, v)) => v,
        _ => return Err(config_error("this sweep needs sweep.code_sizes")),
    };
    sizes
        .into_iter()
        .map(|n| {
            let mut c = cfg.clone();
            c.protocol.n_code = n as u64;
            let mut row = optimize_intensities(&c)?;
            row.axis_value = n;
            Ok(row)
        })
        .collect()
}
