//! Box-constrained maximum likelihood at fixed `(x, y)`.
//!
//! The free parameters are `q^0 ..= q^{2k}` and `r^1 ..= r^k`; `q^{2k+1}` is eliminated
//! through `q^{k+1} + q^{2k+1} = sqrt(2) x` and `r^{k+1} = y`, which leaves a box. The
//! solver is a projected scoring method: the ascent direction uses the Fisher
//! information on the free coordinates, steps are projected back onto the box and
//! accepted by an Armijo backtracking rule.

use std::f64::consts::SQRT_2;

use super::linear::{check_inputs, detection_expectation, error_expectation, linear_estimate, q_upper};
use super::{EstimatorResult, Method, MlDiagnostics, ObservedData};
use crate::decomposition::DecompositionMatrix;
use crate::error::{Error, Result};
use crate::linalg::{Lu, Matrix};
use crate::params::ProtocolParams;

const LOG_FLOOR: f64 = 1e-300;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlOptions {
    /// Convergence threshold on the stationarity score: the largest movement of a
    /// projected, diagonally scaled gradient step, in standard errors.
    pub tol: f64,
    pub max_iter: usize,
    /// Return the linear estimate directly when it lies inside the box; the model is
    /// saturated, so that point is the unconstrained maximiser.
    pub linear_shortcut: bool,
}

impl Default for MlOptions {
    fn default() -> Self {
        MlOptions {
            tol: 1e-8,
            max_iter: 10_000,
            linear_shortcut: true,
        }
    }
}

/// One binomial factor of the likelihood: `successes` out of `trials` with model probability `pi`.
struct Term {
    label: String,
    successes: f64,
    trials: f64,
}

struct Problem<'a> {
    decomp: &'a DecompositionMatrix,
    params: &'a ProtocolParams,
    x: f64,
    y: f64,
    k: usize,
    terms: Vec<Term>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(obs: &ObservedData, decomp: &'a DecompositionMatrix, params: &'a ProtocolParams, x: f64, y: f64) -> Self {
    let k = decomp.k();
    let n = params.n();
    let mut terms = Vec::with_capacity(3 * k + 1);
    for i in 0..=2 * k {
        terms.push(Term {
            label: format!("detection of kind {i}"),
            successes: obs.c[i],
            trials: obs.a[i],
        });
    }
    for i in 1..=k {
        let checks = if i == params.i0 { obs.e[i] - n } else { obs.e[i] };
        terms.push(Term {
            label: format!("errors of kind {i}"),
            successes: obs.h[i],
            trials: checks.max(0.0),
        });
    }
    let qmax = q_upper(params);
    let dim = 3 * k + 1;
    let mut lo = vec![0.0; dim];
    let mut hi = vec![qmax; dim];
    hi[k + 1] = qmax.min(SQRT_2 * x);
    lo[k + 1] = (SQRT_2 * x - qmax).max(0.0).min(hi[k + 1]);
    for v in hi.iter_mut().skip(2 * k + 1) {
        *v = 1.0;
    }
    Problem {
        decomp,
        params,
        x,
        y,
        k,
        terms,
        lo,
        hi,
    }

    }

    fn dim(&self) -> usize {
        3 * self.k + 1
    }

    fn unpack(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.k;
        let mut q = theta[..=2 * k].to_vec();
        q.push(SQRT_2 * self.x - theta[k + 1]);
        let mut r = vec![0.0; k + 2];
        r[1..=k].copy_from_slice(&theta[2 * k + 1..]);
        r[k + 1] = self.y;
        (q, r)
    }

    /// Model probability of every term and its gradient in `theta`.
    fn model(&self, theta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let k = self.k;
        let d = self.decomp;
        let (q, r) = self.unpack(theta);
        let p = self.params;
        let xi1 = detection_expectation(&q, d, p.p_dark, p.variant);
        let xi2 = error_expectation(&q, &r, d, p.p_sys, p.p_dark, p.variant);
        let dim = self.dim();
        let grad1 = |i: usize| {
            let mut g = vec![0.0; dim];
            for (j, gj) in g.iter_mut().enumerate().take(2 * k + 1) {
                *gj = d.p(i, j);
            }
            g[k + 1] -= d.p(i, 2 * k + 1);
            g
        };
        let mut pis = Vec::with_capacity(self.terms.len());
        let mut grads = Vec::with_capacity(self.terms.len());
        for i in 0..=2 * k {
            pis.push(xi1[i]);
            grads.push(grad1(i));
        }
        let ps = p.p_sys;
        for i in 1..=k {
            let mut g2 = vec![0.0; dim];
            g2[0] = 0.5 * d.p(i, 0);
            g2[1] = d.p(i, 1) * (ps + (1.0 - 2.0 * ps) * r[1]);
            for j in 2..=k {
                g2[j] = d.p(i, j) * r[j];
            }
            g2[k + 1] = d.p(i, k + 1) * self.y;
            g2[2 * k + 1] = d.p(i, 1) * q[1] * (1.0 - 2.0 * ps);
            for j in 2..=k {
                g2[2 * k + j] = d.p(i, j) * q[j];
            }
            let g1 = grad1(i);
            let ratio = if xi1[i] > 0.0 { xi2[i] / xi1[i] } else { 0.0 };
            let g: Vec<f64> = if xi1[i] > 0.0 {
                g2.iter().zip(&g1).map(|(a, b)| (a - ratio * b) / xi1[i]).collect()
            } else {
                vec![0.0; dim]
            };
            pis.push(ratio);
            grads.push(g);
        }
        (pis, grads)
    }

    fn log_likelihood(&self, pis: &[f64]) -> f64 {
        let mut total = 0.0;
        for (t, &pi) in self.terms.iter().zip(pis) {
            let fail = t.trials - t.successes;
            for (count, prob) in [(t.successes, pi), (fail, 1.0 - pi)] {
                if count == 0.0 {
                    continue;
                }
                total += count * if prob > 0.0 { prob.ln() } else { f64::NEG_INFINITY };
            }
        }
        total
    }

    /// Log-likelihood minus its value for the saturated model, with probabilities floored.
    /// Each term is formed as a log-ratio, which keeps rounding proportional to the
    /// deviance rather than to the raw log-likelihood.
    fn objective(&self, pis: &[f64]) -> f64 {
        let mut total = 0.0;
        for (t, &pi) in self.terms.iter().zip(pis) {
            let fail = t.trials - t.successes;
            for (count, prob) in [(t.successes, pi), (fail, 1.0 - pi)] {
                if count > 0.0 {
                    total += count * (prob.max(LOG_FLOOR) * t.trials / count).ln();
                }
            }
        }
        total
    }

    /// Rounding level of [`Problem::objective`].
    fn noise(&self, value: f64) -> f64 {
        let counts: f64 = self.terms.iter().map(|t| t.trials).sum();
        4.0 * f64::EPSILON * counts + 1e-13 * value.abs()
    }

    /// Largest coordinate movement of a projected, diagonally scaled gradient step,
    /// in units of the standard error of that coordinate. Zero exactly at a KKT point.
    fn kkt_score(&self, theta: &[f64], g: &[f64], fisher: &Matrix) -> f64 {
        (0..theta.len())
            .filter(|&a| fisher[(a, a)] > 0.0)
            .map(|a| {
                let f = fisher[(a, a)];
                let moved = (theta[a] + g[a] / f).clamp(self.lo[a], self.hi[a]) - theta[a];
                moved.abs() * f.sqrt()
            })
            .fold(0.0, f64::max)
    }

    fn project(&self, theta: &mut [f64]) {
        for ((v, lo), hi) in theta.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// Maximum-likelihood estimate of `(q, r)` under the constraints fixed by `(x, y)`.
pub fn ml_estimate(
    obs: &ObservedData,
    decomp: &DecompositionMatrix,
    params: &ProtocolParams,
    x: f64,
    y: f64,
    options: MlOptions,
) -> Result<EstimatorResult> {
    check_inputs(obs, decomp, params, x, y)?;
    let k = decomp.k();
    let problem = Problem::new(obs, decomp, params, x, y);

    // Without enough check bits the linear estimate is unavailable; the likelihood
    // is still well defined, so the search then starts from the middle of the box.
    let linear = match linear_estimate(obs, decomp, params, x, y) {
        Ok(est) => Some(est),
        Err(Error::Abort(_) | Error::ZeroDenominator(_)) => None,
        Err(e) => return Err(e),
    };
    if let Some(linear) = linear.as_ref().filter(|l| options.linear_shortcut && l.in_range) {
        let theta: Vec<f64> = linear.q_hat[..=2 * k]
            .iter()
            .chain(&linear.r_hat[1..=k])
            .copied()
            .collect();
        let (pis, _) = problem.model(&theta);
        let value = problem.objective(&pis);
        let mut out = linear.clone();
        out.method = Method::MaxLikelihood;
        out.ml = Some(MlDiagnostics {
            iterations: 0,
            objective_log: vec![value],
            converged: true,
            final_score: 0.0,
            from_linear: true,
        });
        return Ok(out);
    }

    let mut theta: Vec<f64> = match &linear {
        Some(l) => l.q_hat[..=2 * k]
            .iter()
            .chain(&l.r_hat[1..=k])
            .map(|v| if v.is_finite() { *v } else { 0.5 })
            .collect(),
        None => (0..problem.dim())
            .map(|a| 0.5 * (problem.lo[a] + problem.hi[a]))
            .collect(),
    };
    problem.project(&mut theta);
    let (theta, diag) = maximise(&problem, theta, options)?;

    let (pis, _) = problem.model(&theta);
    for (t, &pi) in problem.terms.iter().zip(&pis) {
        let fail = t.trials - t.successes;
        if (t.successes > 0.0 && pi <= 0.0) || (fail > 0.0 && pi >= 1.0) {
            return Err(Error::DegenerateLikelihood {
                term: t.label.clone(),
                count: if pi <= 0.0 { t.successes } else { fail },
            });
        }
    }
    let (q, r) = problem.unpack(&theta);
    let mut r_hat = vec![f64::NAN; k + 2];
    r_hat[1..].copy_from_slice(&r[1..]);
    let mut out = EstimatorResult::new(q, r_hat, x, y, Method::MaxLikelihood, params, vec![]);
    out.ml = Some(diag);
    Ok(out)
}

/// Log-likelihood of the data at `(q, r)`; `q^{2k+1}` and `r^{k+1}` are taken from `(x, y)`.
pub fn log_likelihood(
    obs: &ObservedData,
    decomp: &DecompositionMatrix,
    params: &ProtocolParams,
    x: f64,
    y: f64,
    q: &[f64],
    r: &[f64],
) -> f64 {
    let k = decomp.k();
    let problem = Problem::new(obs, decomp, params, x, y);
    let theta: Vec<f64> = q[..=2 * k].iter().chain(&r[1..=k]).copied().collect();
    let (pis, _) = problem.model(&theta);
    problem.log_likelihood(&pis)
}

fn maximise(problem: &Problem, mut theta: Vec<f64>, options: MlOptions) -> Result<(Vec<f64>, MlDiagnostics)> {
    let dim = problem.dim();
    let (mut pis, mut grads) = problem.model(&theta);
    let mut value = problem.objective(&pis);
    let mut log = vec![value];
    let mut converged = false;
    let mut iterations = 0;
    let mut score = f64::INFINITY;
    while iterations < options.max_iter {
        iterations += 1;
        let mut g = vec![0.0; dim];
        let mut fisher = Matrix::zeros(dim, dim);
        for ((t, &pi), grad) in problem.terms.iter().zip(&pis).zip(&grads) {
            let pc = pi.clamp(LOG_FLOOR, 1.0 - 1e-16);
            let w = t.successes / pc - (t.trials - t.successes) / (1.0 - pc);
            let info = t.trials / (pc * (1.0 - pc));
            for a in 0..dim {
                if grad[a] == 0.0 {
                    continue;
                }
                g[a] += w * grad[a];
                for b in 0..dim {
                    fisher[(a, b)] += info * grad[a] * grad[b];
                }
            }
        }
        score = problem.kkt_score(&theta, &g, &fisher);
        if score <= options.tol {
            converged = true;
            break;
        }
        let free: Vec<usize> = (0..dim)
            .filter(|&a| {
                let at_lo = theta[a] <= problem.lo[a] && g[a] <= 0.0;
                let at_hi = theta[a] >= problem.hi[a] && g[a] >= 0.0;
                !(at_lo || at_hi) && fisher[(a, a)] > 0.0
            })
            .collect();
        let newton = scoring_direction(&fisher, &g, &free)?;
        let mut full = vec![0.0; dim];
        for (&a, d) in free.iter().zip(&newton) {
            full[a] = *d;
        }
        // The projected Newton step can stall against a face of the box; the scaled
        // gradient step always ascends while the point is not stationary.
        let scaled: Vec<f64> = (0..dim)
            .map(|a| if fisher[(a, a)] > 0.0 { g[a] / fisher[(a, a)] } else { 0.0 })
            .collect();
        let mut accepted = None;
        for direction in [&full, &scaled] {
            accepted = line_search(problem, &theta, &g, direction, value);
            if accepted.is_some() {
                break;
            }
        }
        match accepted {
            Some((trial, tp, tg, tv)) => {
                theta = trial;
                pis = tp;
                grads = tg;
                value = tv;
                log.push(value);
            }
            None => {
                // No ascent is available: the iterate is stationary at working precision
                // when the gain a Newton step could still make is below rounding.
                converged = 0.5 * score * score <= 10.0 * problem.noise(value);
                break;
            }
        }
    }
    Ok((
        theta,
        MlDiagnostics {
            iterations,
            objective_log: log,
            converged,
            final_score: score,
            from_linear: false,
        },
    ))
}

type Accepted = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>, f64);

/// Backtracking along `direction` with projection; only steps that raise the
/// objective by more than rounding noise are accepted.
fn line_search(problem: &Problem, theta: &[f64], g: &[f64], direction: &[f64], value: f64) -> Option<Accepted> {
    let noise = problem.noise(value);
    let mut step = 1.0;
    while step > 1e-14 {
        let mut trial: Vec<f64> = theta.iter().zip(direction).map(|(t, d)| t + step * d).collect();
        problem.project(&mut trial);
        let gain: f64 = g.iter().zip(trial.iter().zip(theta)).map(|(g, (a, b))| g * (a - b)).sum();
        if gain <= 0.0 {
            step *= 0.5;
            continue;
        }
        let (tp, tg) = problem.model(&trial);
        let tv = problem.objective(&tp);
        if tv >= value + ARMIJO * gain && tv > value + noise {
            return Some((trial, tp, tg, tv));
        }
        step *= 0.5;
    }
    None
}

/// Solves the Fisher system on the free coordinates, adding diagonal damping when the
/// block is singular (parameters that no term can distinguish).
fn scoring_direction(fisher: &Matrix, g: &[f64], free: &[usize]) -> Result<Vec<f64>> {
    let nf = free.len();
    if nf == 0 {
        return Ok(vec![]);
    }
    let rhs: Vec<f64> = free.iter().map(|&a| g[a]).collect();
    let mut damping = 0.0;
    for _ in 0..12 {
        let mut block = Matrix::zeros(nf, nf);
        for (r, &a) in free.iter().enumerate() {
            for (c, &b) in free.iter().enumerate() {
                block[(r, c)] = fisher[(a, b)];
            }
            block[(r, r)] *= 1.0 + damping;
        }
        if let Ok(lu) = Lu::factor(&block) {
            let d = lu.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) {
                return Ok(d);
            }
        }
        damping = if damping == 0.0 { 1e-10 } else { damping * 100.0 };
    }
    Err(Error::Numerical("scoring system is singular".into()))
}
