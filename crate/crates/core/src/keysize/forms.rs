//! First-order expansions of the estimated quantities in terms of the elementary deviations.

use std::f64::consts::FRAC_1_SQRT_2;

use super::entropy::{hbar_a, hbar_a_deriv};
use crate::decomposition::DecompositionMatrix;
use crate::error::{Error, Result};
use crate::fluctuation::{mean_counts, st, BaseVariable, FluctuationContext, LinearForm, MeanCounts};
use crate::params::Variant;

/// Pulse count dividing the vacuum term of the linearised detection-ratio estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VacuumNormalisation {
    /// `Delta C_0 / A_0`, the deviation of the measured vacuum rate.
    #[default]
    VacuumPulses,
    /// `Delta C_0 / A_i`, dividing by the count of the kind being inverted.
    SameKind,
}

/// Builds linear forms over the deviations of one context.
pub struct FormBuilder<'a> {
    ctx: &'a FluctuationContext,
    decomp: &'a DecompositionMatrix,
    m: &'a MeanCounts,
    y: f64,
    vacuum: VacuumNormalisation,
}

impl<'a> FormBuilder<'a> {
    pub fn new(
        ctx: &'a FluctuationContext,
        decomp: &'a DecompositionMatrix,
        y: f64,
        vacuum: VacuumNormalisation,
    ) -> Result<Self> {
        let m = mean_counts(ctx)?;
        Ok(FormBuilder {
            ctx,
            decomp,
            m,
            y,
            vacuum,
        })
    }

    fn k(&self) -> usize {
        self.ctx.k
    }

    fn nonzero(value: f64, what: &str) -> Result<f64> {
        if value > 0.0 {
            Ok(value)
        } else {
            Err(Error::ZeroDenominator(what.to_string()))
        }
    }

    /// `Delta C_i = sum_j Delta' C_i^j` (emissions held fixed).
    pub fn detections(&self, i: usize) -> LinearForm {
        let mut f = LinearForm::new();
        for j in self.ctx.states() {
            f.add_term(BaseVariable::dc(i, j), 1.0);
        }
        f
    }

    /// `Delta E_i^j = Delta' C_i^j / 2 + Delta' E_i^j`.
    pub fn sifted(&self, i: usize, j: i32) -> LinearForm {
        let mut f = LinearForm::new();
        f.add_term(BaseVariable::dc(i, j), 0.5);
        f.add_term(BaseVariable::de(i, j), 1.0);
        f
    }

    pub fn sifted_total(&self, i: usize) -> LinearForm {
        let mut f = LinearForm::new();
        for j in self.ctx.states() {
            f.axpy(1.0, &self.sifted(i, j));
        }
        f
    }

    /// `Delta F_i^j`; equal to `Delta E_i^j` away from the two signal kinds.
    pub fn key_split(&self, i: usize, j: i32) -> Result<LinearForm> {
        let mut f = self.sifted(i, j);
        if i != self.ctx.i0 && i != self.ctx.s() {
            return Ok(f);
        }
        let e = Self::nonzero(self.m.e_total[i], "no sifted bits at a signal kind")?;
        let n = self.ctx.n;
        let ej = self.m.e[i][st(j)];
        let (own, total) = if i == self.ctx.s() {
            (n / e, -n * ej / (e * e))
        } else {
            (1.0 - n / e, n * ej / (e * e))
        };
        f = f.scaled(own);
        f.axpy(total, &self.sifted_total(i));
        f.add_term(BaseVariable::df(i, j), 1.0);
        Ok(f)
    }

    /// `Delta xi^j` for `j = 1..=2k`, the deviation of the inverted detection equations.
    pub fn xi(&self, j: usize) -> Result<LinearForm> {
        let k = self.k();
        let a0 = Self::nonzero(self.ctx.a[0], "no vacuum pulses")?;
        let mut f = LinearForm::new();
        let c0 = self.detections(0);
        for i in 1..=2 * k {
            let ai = Self::nonzero(self.ctx.a[i], "a pulse kind was never sent")?;
            let w = self.decomp.pbar_inv(j, i);
            f.axpy(w / ai, &self.detections(i));
            let vac = match self.vacuum {
                VacuumNormalisation::VacuumPulses => a0,
                VacuumNormalisation::SameKind => ai,
            };
            f.axpy(-w * self.decomp.pbar(i, 0) / vac, &c0);
        }
        Ok(f)
    }

    pub fn q1(&self) -> Result<LinearForm> {
        self.xi(1)
    }

    /// `Delta q^{k+1} = Delta xi^{k+1} / sqrt 2`.
    pub fn q_mixed(&self) -> Result<LinearForm> {
        Ok(self.xi(self.k() + 1)?.scaled(FRAC_1_SQRT_2))
    }

    /// `Delta H_i` for a times-basis kind.
    pub fn errors(&self, i: usize) -> Result<LinearForm> {
        let ctx = self.ctx;
        let mut f = LinearForm::new();
        for j in -1..=(self.k() as i32 + 1) {
            f.axpy(ctx.rtilde(j), &self.key_split(i, j)?);
        }
        f.add_term(BaseVariable::dg(i, 1), 1.0 - 2.0 * ctx.p_sys);
        for j in 2..=(self.k() as i32 + 1) {
            f.add_term(BaseVariable::dg(i, j), 1.0);
        }
        f.add_term(BaseVariable::dh(i), 1.0);
        Ok(f)
    }

    /// `Delta (s_i p_i)` with `s_i p_i = H_i C_i / (D_i A_i)`, `D_i` the number of check bits.
    pub fn error_rate(&self, i: usize) -> Result<LinearForm> {
        let ctx = self.ctx;
        let m = self.m;
        let a = Self::nonzero(ctx.a[i], "a pulse kind was never sent")?;
        let d = if i == ctx.i0 { m.e_total[i] - ctx.n } else { m.e_total[i] };
        let d = Self::nonzero(d, "no check bits")?;
        let (h, c) = (m.h[i], m.c_total[i]);
        let mut f = self.errors(i)?.scaled(c / (d * a));
        f.axpy(h / (d * a), &self.detections(i));
        f.axpy(-h * c / (d * d * a), &self.sifted_total(i));
        Ok(f)
    }

    /// `Delta r^1` of the linear phase-error estimator.
    pub fn r1(&self) -> Result<LinearForm> {
        let ctx = self.ctx;
        let k = self.k();
        let q1 = Self::nonzero(ctx.q[1], "single-photon detection ratio is zero")?;
        let a0 = Self::nonzero(ctx.a[0], "no vacuum pulses")?;
        let dq1 = self.q1()?;
        let dqm = self.q_mixed()?;
        let c0 = self.detections(0);
        let mut dw = LinearForm::new();
        for i in 1..=k {
            let kappa = self.decomp.pk_inv(1, i);
            dw.axpy(kappa, &self.error_rate(i)?);
            dw.axpy(-kappa * 0.5 * self.decomp.p(i, 0) / a0, &c0);
            dw.axpy(-kappa * self.decomp.p(i, k + 1) * self.y, &dqm);
        }
        let w = q1 * (ctx.r[1] * (1.0 - 2.0 * ctx.p_sys) + ctx.p_sys);
        let mut f = dw.scaled(1.0 / q1);
        f.axpy(-w / (q1 * q1), &dq1);
        Ok(f.scaled(1.0 / (1.0 - 2.0 * ctx.p_sys)))
    }

    /// Deviation of the dark-count term of the key: `F^{-1}` (reverse) or `F^0` (forward).
    fn dark_state(&self) -> i32 {
        match self.ctx.variant {
            Variant::Reverse => -1,
            Variant::Forward => 0,
        }
    }

    /// `Delta Theta_1` for tangent point `a`.
    pub fn theta1(&self, a: f64) -> Result<LinearForm> {
        let ctx = self.ctx;
        let m = self.m;
        let s = ctx.s();
        let n = ctx.n;
        let r1 = ctx.r[1];
        let keep = 1.0 - hbar_a(r1, a);
        let slope = hbar_a_deriv(r1, a);
        let cs = Self::nonzero(m.c_total[s], "no detections at the plus signal kind")?;
        let b1 = m.b[(s, 1)];
        let q1 = ctx.q[1];

        let mut f = self.key_split(s, 1)?.scaled(-keep);
        f.add_term(BaseVariable::dg(s, 1), slope);
        f.axpy(-1.0, &self.key_split(s, self.dark_state())?);
        let attributed = match ctx.variant {
            Variant::Reverse => ctx.a[s] * ctx.p_dark,
            Variant::Forward => m.b[(s, 0)] * ctx.q[0],
        };
        f.axpy(-n * (q1 * b1 * keep + attributed) / (cs * cs), &self.detections(s));
        if ctx.variant == Variant::Forward {
            let a0 = Self::nonzero(ctx.a[0], "no vacuum pulses")?;
            f.axpy(n * m.b[(s, 0)] / (cs * a0), &self.detections(0));
        }
        if b1 * keep != 0.0 {
            f.axpy(n * b1 * keep / cs, &self.q1()?);
        }
        if q1 * b1 * slope != 0.0 {
            f.axpy(-n * q1 * b1 * slope / cs, &self.r1()?);
        }
        f.prune();
        Ok(f)
    }

    /// `Delta' G^1_{i0+k} - (N / C_{i0+k}) q^1 B^1_{i0+k} Delta r^1`, the part of
    /// `Delta Theta_1` that dominates when the tangent slope is large.
    pub fn phase_part(&self) -> Result<LinearForm> {
        let ctx = self.ctx;
        let s = ctx.s();
        let cs = Self::nonzero(self.m.c_total[s], "no detections at the plus signal kind")?;
        let mut f = LinearForm::var(BaseVariable::dg(s, 1));
        let coeff = ctx.n * ctx.q[1] * self.m.b[(s, 1)] / cs;
        if coeff != 0.0 {
            f.axpy(-coeff, &self.r1()?);
        }
        f.prune();
        Ok(f)
    }
}
