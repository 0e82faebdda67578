//! Counting chain from emitted states to detected errors.
//!
//! Each stage is conditioned on the previous one: emissions `B` are multinomial,
//! detections `C` are allocated across pulse kinds hypergeometrically, the basis
//! sift `E` is binomial, the signal kinds are split into key and check bits `F`,
//! transmission errors `G` fall hypergeometrically on the check bits and `H`
//! collects the detected bit errors. Deviations of different stages are treated
//! as uncorrelated.

mod covariance;
mod form;
mod sampler;

pub use covariance::{covariance, variance_of, variance_pairwise};
pub use form::{BaseVariable, Family, LinearForm};
pub use sampler::{sample_counts, sample_with, stream_rng, EmissionMode, Realization};

use crate::decomposition::DecompositionMatrix;
use crate::error::{invalid, AbortReason, Error, Result};
use crate::estimation::ObservedData;
use crate::linalg::Matrix;
use crate::params::{ProtocolParams, Variant};

/// Variance of the binomial basis sift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SiftVariance {
    /// `C / 4`, the variance of a fair binomial.
    #[default]
    Binomial,
    /// `C / (k + 1)`, which equals the binomial value only at `k = 3`.
    PerIntensity,
}

/// Covariance of the hypergeometric stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingCovariance {
    /// Exact multivariate hypergeometric covariances, including the finite-population factor.
    #[default]
    Exact,
    /// Large-population forms: no `M / (M - 1)` factor and `(E - n) / E` in place of
    /// `(E - n) / (E - 1)` for the key/check split.
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CovarianceModel {
    pub sift: SiftVariance,
    pub sampling: SamplingCovariance,
}

/// Index of state `j in -1..=2k+1` in per-state vectors.
#[inline]
pub fn st(j: i32) -> usize {
    (j + 1) as usize
}

/// Expected counts of every stage, with per-state vectors indexed through [`st`].
#[derive(Debug, Clone, PartialEq)]
pub struct MeanCounts {
    /// `A_i P_i^j`, `(2k+1) x (2k+2)`.
    pub b: Matrix,
    pub c: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub c_total: Vec<f64>,
    pub e_total: Vec<f64>,
}

impl MeanCounts {
    /// The observable totals at the mean, for sent counts `a`.
    pub fn observed(&self, a: &[f64]) -> ObservedData {
        let mut h = self.h.clone();
        h[0] = 0.0;
        ObservedData {
            a: a.to_vec(),
            c: self.c_total.clone(),
            e: self.e_total.clone(),
            h,
        }
    }
}

/// Parameters of the counting chain at one point `(q, r)`.
#[derive(Debug, Clone)]
pub struct FluctuationContext {
    pub k: usize,
    pub i0: usize,
    pub n: f64,
    pub p_dark: f64,
    pub p_sys: f64,
    pub p_sys_plus: f64,
    pub variant: Variant,
    /// Detection ratios `q^j`, `j = 0..=2k+1`.
    pub q: Vec<f64>,
    /// Error ratios `r^j`, `j = 0..=2k+1`; entry 0 is unused.
    pub r: Vec<f64>,
    /// Pulses sent per kind.
    pub a: Vec<f64>,
    pub pk: Matrix,
    pub model: CovarianceModel,
    means: MeanCounts,
}

impl FluctuationContext {
    pub fn new(
        params: &ProtocolParams,
        decomp: &DecompositionMatrix,
        a: &[f64],
        q: Vec<f64>,
        r: Vec<f64>,
        model: CovarianceModel,
    ) -> Result<Self> {
        params.validate()?;
        let k = decomp.k();
        if params.k != k {
            return Err(invalid(format!("protocol has k = {} but decomposition has k = {k}", params.k)));
        }
        if a.len() != 2 * k + 1 || a.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(invalid("pulse counts must be 2k+1 nonnegative numbers"));
        }
        for (name, v) in [("q", &q), ("r", &r)] {
            if v.len() != 2 * k + 2 {
                return Err(invalid(format!("{name} must have 2k+2 entries")));
            }
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(invalid(format!("{name} entries must lie in [0, 1]: {v:?}")));
            }
        }
        let mut ctx = FluctuationContext {
            k,
            i0: params.i0,
            n: params.n(),
            p_dark: params.p_dark,
            p_sys: params.p_sys,
            p_sys_plus: params.p_sys_plus,
            variant: params.variant,
            q,
            r,
            a: a.to_vec(),
            pk: decomp.pk.clone(),
            model,
            means: MeanCounts {
                b: Matrix::zeros(0, 0),
                c: vec![],
                e: vec![],
                f: vec![],
                g: vec![],
                h: vec![],
                c_total: vec![],
                e_total: vec![],
            },
        };
        ctx.means = ctx.compute_means();
        Ok(ctx)
    }

    pub fn kinds(&self) -> usize {
        2 * self.k + 1
    }

    /// Plus-basis signal kind `i0 + k`.
    pub fn s(&self) -> usize {
        self.i0 + self.k
    }

    pub fn states(&self) -> impl Iterator<Item = i32> {
        -1..=(2 * self.k as i32 + 1)
    }

    /// Kinds whose check bits carry transmission errors: the times-basis kinds and `i0 + k`.
    pub fn error_kinds(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (1..=self.k).collect();
        v.push(self.s());
        v
    }

    /// States whose errors are tracked by `G`: `1..=k+1`.
    pub fn error_states(&self) -> std::ops::RangeInclusive<i32> {
        1..=(self.k as i32 + 1)
    }

    /// Bit-error ratio of state `j` among times-basis check bits.
    pub fn rtilde(&self, j: i32) -> f64 {
        match j {
            -1 | 0 => 0.5,
            1 => self.r[1] + (1.0 - 2.0 * self.r[1]) * self.p_sys,
            _ => self.r[j as usize],
        }
    }

    /// Bit-error probability of state `j` in the plus basis, assuming no transmission
    /// errors on single photons.
    pub fn plus_error(&self, j: i32) -> f64 {
        match j {
            -1 | 0 => 0.5,
            1 => self.p_sys_plus,
            _ => self.r[j as usize],
        }
    }

    /// Population on which dark counts of kind `i` act: all pulses, or only single-photon
    /// emissions when dark counts are folded into the detection ratios.
    pub fn dark_population(&self, i: usize) -> f64 {
        match self.variant {
            Variant::Reverse => self.a[i],
            Variant::Forward => self.means.b[(i, 1)],
        }
    }

    /// Size of the subset drawn in the key/check split of signal kind `i`.
    pub fn split_draws(&self, i: usize, e_total: f64) -> f64 {
        if i == self.i0 {
            e_total - self.n
        } else {
            self.n
        }
    }

    /// Expected counts without the abort check.
    pub fn means(&self) -> &MeanCounts {
        &self.means
    }

    fn compute_means(&self) -> MeanCounts {
        let k = self.k;
        let kinds = self.kinds();
        let ns = 2 * k + 3;
        let mut b = Matrix::zeros(kinds, 2 * k + 2);
        for i in 0..kinds {
            for j in 0..2 * k + 2 {
                b[(i, j)] = self.a[i] * self.pk[(i, j)];
            }
        }
        let mut c = vec![vec![0.0; ns]; kinds];
        for i in 0..kinds {
            let dark_pop = match self.variant {
                Variant::Reverse => self.a[i],
                Variant::Forward => b[(i, 1)],
            };
            c[i][0] = self.p_dark * dark_pop;
            for j in 0..2 * k + 2 {
                c[i][j + 1] = self.q[j] * b[(i, j)];
            }
        }
        let e: Vec<Vec<f64>> = c.iter().map(|row| row.iter().map(|x| 0.5 * x).collect()).collect();
        let c_total: Vec<f64> = c.iter().map(|row| row.iter().sum()).collect();
        let e_total: Vec<f64> = e.iter().map(|row| row.iter().sum()).collect();
        let mut f = e.clone();
        for i in [self.i0, self.s()] {
            let et = e_total[i];
            let frac = if et > 0.0 { self.split_draws(i, et) / et } else { 0.0 };
            for x in f[i].iter_mut() {
                *x *= frac;
            }
        }
        let mut g = vec![vec![0.0; ns]; kinds];
        for i in self.error_kinds() {
            for j in self.error_states() {
                g[i][st(j)] = self.r[j as usize] * f[i][st(j)];
            }
        }
        let mut h = vec![0.0; kinds];
        for i in 1..=k {
            let fi = &f[i];
            h[i] = 0.5 * (fi[st(-1)] + fi[st(0)])
                + (1.0 - self.p_sys) * g[i][st(1)]
                + self.p_sys * (fi[st(1)] - g[i][st(1)])
                + (2..=k as i32 + 1).map(|j| g[i][st(j)]).sum::<f64>();
        }
        for i in k + 1..kinds {
            h[i] = self
                .states()
                .map(|j| {
                    let checks = if i == self.s() { e[i][st(j)] - f[i][st(j)] } else { e[i][st(j)] };
                    self.plus_error(j) * checks
                })
                .sum();
        }
        MeanCounts {
            b,
            c,
            e,
            f,
            g,
            h,
            c_total,
            e_total,
        }
    }
}

/// Expected counts, failing when a signal kind cannot fill the code and keep check bits.
pub fn mean_counts(ctx: &FluctuationContext) -> Result<&MeanCounts> {
    let m = ctx.means();
    if m.e_total[ctx.i0] <= ctx.n || m.e_total[ctx.s()] <= ctx.n {
        return Err(Error::Abort(AbortReason::InsufficientCheckBits));
    }
    Ok(m)
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn zero_detection_means() {
        let (_, _, mut ctx) = desk_context();
        ctx.q.iter_mut().for_each(|q| *q = 0.0);
        ctx.p_dark = 0.0;
        let m = ctx.compute_means();
        assert!(m.c_total.iter().all(|&c| c == 0.0));
        assert!(m.h.iter().all(|&h| h == 0.0));
        ctx.means = m;
        assert_eq!(mean_counts(&ctx), Err(Error::Abort(AbortReason::InsufficientCheckBits)));
    }

    #[test]
    fn error_free_channel_has_no_errors() {
        let (_, _, ctx) = honest_context(&[0.0, 0.5], 1.0, 1e5, 100, 0.0, 0.0, Variant::Reverse);
        let m = mean_counts(&ctx).unwrap();
        for i in 1..=1 {
            assert_eq!(m.h[i], 0.0);
        }
    }

    #[test]
    fn split_conserves_bits() {
        let (_, _, ctx) = desk_context();
        let m = mean_counts(&ctx).unwrap();
        let f0: f64 = m.f[ctx.i0].iter().sum();
        let fs: f64 = m.f[ctx.s()].iter().sum();
        assert!((f0 - (m.e_total[ctx.i0] - ctx.n)).abs() < 1e-6);
        assert!((fs - ctx.n).abs() < 1e-9);
    }

    #[test]
    fn detection_rate_matches_channel() {
        let (_, _, ctx) = desk_context();
        let m = mean_counts(&ctx).unwrap();
        let i = ctx.i0;
        let expected = 1.0 - (-1.445e-2f64 * 0.5).exp() + 4e-7;
        assert!((m.c_total[i] / ctx.a[i] / expected - 1.0).abs() < 1e-10);
    }
}
