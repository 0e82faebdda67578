//! Estimators of the detection ratios `q^j` and phase-error ratios `r^j` from observed counts.

mod linear;
mod ml;
mod observed;

pub use linear::{detection_expectation, error_expectation, error_rates, linear_estimate, q_upper};
pub use ml::{log_likelihood, ml_estimate, MlOptions};
pub use observed::ObservedData;

use crate::error::{Error, Result};
use crate::params::{ProtocolParams, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Linear,
    MaxLikelihood,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlDiagnostics {
    pub iterations: usize,
    /// Log-likelihood relative to the saturated model after every iteration, starting
    /// at the initial point.
    pub objective_log: Vec<f64>,
    pub converged: bool,
    /// Stationarity measure at the returned point (see [`MlOptions::tol`]).
    pub final_score: f64,
    /// The linear estimate was inside the box and returned unchanged.
    pub from_linear: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    /// `q^j` for `j = 0..=2k+1`.
    pub q_hat: Vec<f64>,
    /// `r^j` indexed by state; entry 0 is unused (NaN) and entry `k+1` equals `y`.
    pub r_hat: Vec<f64>,
    pub x: f64,
    pub y: f64,
    pub method: Method,
    pub variant: Variant,
    /// Every ratio lies in its admissible range. Linear estimates may leave it.
    pub in_range: bool,
    /// States whose `r^j` could not be formed because `q^j = 0`.
    pub undefined_r: Vec<usize>,
    pub ml: Option<MlDiagnostics>,
}

impl EstimatorResult {
    pub(crate) fn new(
        q_hat: Vec<f64>,
        r_hat: Vec<f64>,
        x: f64,
        y: f64,
        method: Method,
        params: &ProtocolParams,
        undefined_r: Vec<usize>,
    ) -> Self {
        let qmax = q_upper(params);
        let in_range = undefined_r.is_empty()
            && q_hat.iter().all(|q| (0.0..=qmax).contains(q))
            && r_hat[1..].iter().all(|r| (0.0..=1.0).contains(r));
        EstimatorResult {
            q_hat,
            r_hat,
            x,
            y,
            method,
            variant: params.variant,
            in_range,
            undefined_r,
            ml: None,
        }
    }

    pub fn k(&self) -> usize {
        self.r_hat.len() - 2
    }

    pub fn q1(&self) -> f64 {
        self.q_hat[1]
    }

    /// Single-photon phase-error ratio, or an error if it is undefined.
    pub fn r1(&self) -> Result<f64> {
        if self.undefined_r.contains(&1) {
            return Err(Error::ZeroDenominator("estimated single-photon ratio is zero".into()));
        }
        Ok(self.r_hat[1])
    }
}
