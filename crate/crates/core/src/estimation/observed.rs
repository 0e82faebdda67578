use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Counts seen by the two parties, indexed by pulse kind `0..=2k`.
///
/// Counts are stored as reals so that exact expectations can be fed through the
/// estimators unchanged; sampled data are integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedData {
    /// Pulses sent, `A_i`.
    pub a: Vec<f64>,
    /// Pulses detected, `C_i`.
    pub c: Vec<f64>,
    /// Detections in the common basis, `E_i`.
    pub e: Vec<f64>,
    /// Detected bit errors, `H_i`; entry 0 is unused and kept at zero.
    pub h: Vec<f64>,
}

impl ObservedData {
    pub fn kinds(&self) -> usize {
        self.a.len()
    }

    pub fn k(&self) -> usize {
        (self.a.len() - 1) / 2
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.len();
        if n < 3 || n % 2 == 0 {
            return Err(invalid(format!("expected 2k+1 pulse kinds, got {n}")));
        }
        if self.c.len() != n || self.e.len() != n || self.h.len() != n {
            return Err(invalid("count vectors have different lengths"));
        }
        let tol = |x: f64| 1e-9 * x.abs().max(1.0);
        for i in 0..n {
            let (a, c, e, h) = (self.a[i], self.c[i], self.e[i], self.h[i]);
            if !(a.is_finite() && c.is_finite() && e.is_finite() && h.is_finite()) {
                return Err(invalid(format!("non-finite count for kind {i}")));
            }
            if !(a >= 0.0 && c >= -tol(c) && c <= a + tol(a)) {
                return Err(invalid(format!("kind {i}: need 0 <= C <= A, got C={c}, A={a}")));
            }
            if !(e >= -tol(e) && e <= c + tol(c)) {
                return Err(invalid(format!("kind {i}: need 0 <= E <= C, got E={e}, C={c}")));
            }
            if !(h >= -tol(h) && h <= e + tol(e)) {
                return Err(invalid(format!("kind {i}: need 0 <= H <= E, got H={h}, E={e}")));
            }
        }
        Ok(())
    }

    /// Total number of pulses sent.
    pub fn n_sent(&self) -> f64 {
        self.a.iter().sum()
    }

    /// Detection rate `p_i = C_i / A_i`.
    pub fn p(&self, i: usize) -> f64 {
        self.c[i] / self.a[i]
    }

    /// Data with the roles of the two bases exchanged, used for the times-basis key.
    pub fn swap_bases(&self) -> ObservedData {
        let k = self.k();
        let swap = |v: &[f64]| {
            let mut out = v.to_vec();
            for i in 1..=k {
                out[i] = v[i + k];
                out[i + k] = v[i];
            }
            out
        };
        ObservedData {
            a: swap(&self.a),
            c: swap(&self.c),
            e: swap(&self.e),
            h: swap(&self.h),
        }
    }
}
