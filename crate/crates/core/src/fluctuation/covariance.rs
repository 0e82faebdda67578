use super::{st, BaseVariable, Family, FluctuationContext, LinearForm, SamplingCovariance, SiftVariance};
use crate::error::{invalid, Error, Result};

impl FluctuationContext {
    fn check(&self, v: &BaseVariable) -> Result<()> {
        let kinds = self.kinds();
        let jmax = 2 * self.k as i32 + 1;
        let ok = v.i < kinds
            && (-1..=jmax).contains(&v.j)
            && match v.family {
                Family::C | Family::E => true,
                Family::F => v.i == self.i0 || v.i == self.s(),
                Family::G => self.error_kinds().contains(&v.i) && self.error_states().contains(&v.j),
                Family::H => v.j == 0 && v.i >= 1,
                Family::B => v.j >= 0,
            };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("variable {v:?} is outside the model")))
        }
    }

    fn sift_scale(&self) -> f64 {
        match self.model.sift {
            SiftVariance::Binomial => 0.25,
            SiftVariance::PerIntensity => 1.0 / (self.k as f64 + 1.0),
        }
    }

    /// `M / (M - 1)` for a hypergeometric draw from a population of `M`.
    fn finite_population(&self, m: f64) -> f64 {
        match self.model.sampling {
            SamplingCovariance::Exact if m > 1.0 => m / (m - 1.0),
            SamplingCovariance::Exact => 0.0,
            SamplingCovariance::Reduced => 1.0,
        }
    }

    /// `(E - n) / (E - 1)` for drawing `n` of `E` bits, `(E - n) / E` in the reduced model.
    fn split_correction(&self, n: f64, e: f64) -> f64 {
        match self.model.sampling {
            SamplingCovariance::Exact if e > 1.0 => (e - n) / (e - 1.0),
            SamplingCovariance::Exact => 0.0,
            SamplingCovariance::Reduced => (e - n) / e,
        }
    }

    fn emission_total(&self, j: usize) -> f64 {
        let b = &self.means().b;
        (0..self.kinds()).map(|i| b[(i, j)]).sum()
    }

    fn detection_total(&self, j: i32) -> f64 {
        self.means().c.iter().map(|row| row[st(j)]).sum()
    }

    fn dark_variance(&self, i: usize) -> f64 {
        self.p_dark * (1.0 - self.p_dark) * self.dark_population(i)
    }

    fn h_variance(&self, i: usize) -> f64 {
        let m = self.means();
        if i <= self.k {
            let f = &m.f[i];
            self.sift_scale() * (f[st(-1)] + f[st(0)]) + self.p_sys * (1.0 - self.p_sys) * f[st(1)]
        } else {
            self.states()
                .map(|j| {
                    let checks = if i == self.s() {
                        m.e[i][st(j)] - m.f[i][st(j)]
                    } else {
                        m.e[i][st(j)]
                    };
                    let p = self.plus_error(j);
                    p * (1.0 - p) * checks
                })
                .sum()
        }
    }
}

/// Covariance of two elementary deviations at the context's mean counts.
pub fn covariance(u: &BaseVariable, v: &BaseVariable, ctx: &FluctuationContext) -> Result<f64> {
    ctx.check(u)?;
    ctx.check(v)?;
    if u.family != v.family {
        return Ok(0.0);
    }
    let m = ctx.means();
    let delta = |a: bool| if a { 1.0 } else { 0.0 };
    let value = match u.family {
        Family::C => {
            if u.j != v.j {
                0.0
            } else if u.j == -1 {
                delta(u.i == v.i) * ctx.dark_variance(u.i)
            } else {
                let j = u.j as usize;
                let total = ctx.emission_total(j);
                if total <= 0.0 {
                    0.0
                } else {
                    let (bu, bv) = (m.b[(u.i, j)], m.b[(v.i, j)]);
                    let q = ctx.q[j];
                    q * (1.0 - q) * ctx.finite_population(total) * (delta(u.i == v.i) * bu - bu * bv / total)
                }
            }
        }
        Family::E => delta(u.i == v.i && u.j == v.j) * ctx.sift_scale() * m.c[u.i][st(u.j)],
        Family::F => {
            if u.i != v.i {
                0.0
            } else {
                let e = m.e_total[u.i];
                let (pu, pv) = (m.e[u.i][st(u.j)] / e, m.e[u.i][st(v.j)] / e);
                let n = ctx.split_draws(u.i, e);
                // Written so that exchanging u and v is exact in floating point.
                n * (delta(u.j == v.j) * pu - pu * pv) * ctx.split_correction(n, e)
            }
        }
        Family::G => {
            if u.j != v.j {
                0.0
            } else {
                let total = ctx.detection_total(u.j);
                if total <= 0.0 {
                    0.0
                } else {
                    let (fu, fv) = (m.f[u.i][st(u.j)], m.f[v.i][st(u.j)]);
                    let r = ctx.r[u.j as usize];
                    r * (1.0 - r) * ctx.finite_population(total) * (delta(u.i == v.i) * fu - fu * fv / total)
                }
            }
        }
        Family::H => delta(u.i == v.i) * ctx.h_variance(u.i),
        Family::B => {
            if u.i != v.i {
                0.0
            } else {
                let (pu, pv) = (ctx.pk[(u.i, u.j as usize)], ctx.pk[(u.i, v.j as usize)]);
                ctx.a[u.i] * (delta(u.j == v.j) * pu - pu * pv)
            }
        }
    };
    Ok(value)
}

/// `sum_{u,v} c_u c_v Cov(u, v)` by direct double summation; quadratic in the number of terms.
pub fn variance_pairwise(form: &LinearForm, ctx: &FluctuationContext) -> Result<f64> {
    let terms: Vec<_> = form.terms().collect();
    let mut total = 0.0;
    for (u, cu) in &terms {
        for (v, cv) in &terms {
            total += *cu * *cv * covariance(u, v, ctx)?;
        }
    }
    Ok(total)
}

/// Variance of a linear form, evaluated family by family in time linear in the number of terms.
///
/// Rounding can leave a tiny negative value for an almost degenerate form; results down to
/// `-1e-9` times the magnitude of the summed contributions are clamped to zero.
pub fn variance_of(form: &LinearForm, ctx: &FluctuationContext) -> Result<f64> {
    let m = ctx.means();
    let ns = 2 * ctx.k + 3;
    let kinds = ctx.kinds();
    // Per-group (sum c^2 w, sum c w) accumulators.
    let mut c_acc = vec![(0.0, 0.0); ns];
    let mut dark = 0.0;
    let mut g_acc = vec![(0.0, 0.0); ns];
    let mut f_acc = vec![(0.0, 0.0); kinds];
    let mut b_acc = vec![(0.0, 0.0); kinds];
    let mut diag = 0.0;
    for (v, &c) in form.terms() {
        ctx.check(v)?;
        match v.family {
            Family::C if v.j == -1 => dark += c * c * ctx.dark_variance(v.i),
            Family::C => {
                let w = m.b[(v.i, v.j as usize)];
                let acc = &mut c_acc[st(v.j)];
                acc.0 += c * c * w;
                acc.1 += c * w;
            }
            Family::E => diag += c * c * ctx.sift_scale() * m.c[v.i][st(v.j)],
            Family::F => {
                let w = m.e[v.i][st(v.j)] / m.e_total[v.i];
                let acc = &mut f_acc[v.i];
                acc.0 += c * c * w;
                acc.1 += c * w;
            }
            Family::G => {
                let w = m.f[v.i][st(v.j)];
                let acc = &mut g_acc[st(v.j)];
                acc.0 += c * c * w;
                acc.1 += c * w;
            }
            Family::H => diag += c * c * ctx.h_variance(v.i),
            Family::B => {
                let w = ctx.pk[(v.i, v.j as usize)];
                let acc = &mut b_acc[v.i];
                acc.0 += c * c * w;
                acc.1 += c * w;
            }
        }
    }
    let mut parts = vec![dark, diag];
    for j in 0..ns - 1 {
        let (s2, s1) = c_acc[j + 1];
        let total = ctx.emission_total(j);
        if total > 0.0 && s2 != 0.0 {
            let q = ctx.q[j];
            parts.push(q * (1.0 - q) * ctx.finite_population(total) * (s2 - s1 * s1 / total));
        }
    }
    for j in ctx.error_states() {
        let (s2, s1) = g_acc[st(j)];
        let total = ctx.detection_total(j);
        if total > 0.0 && s2 != 0.0 {
            let r = ctx.r[j as usize];
            parts.push(r * (1.0 - r) * ctx.finite_population(total) * (s2 - s1 * s1 / total));
        }
    }
    for i in [ctx.i0, ctx.s()] {
        let (s2, s1) = f_acc[i];
        if s2 == 0.0 {
            continue;
        }
        let e = m.e_total[i];
        let n = ctx.split_draws(i, e);
        parts.push(n * ctx.split_correction(n, e) * (s2 - s1 * s1));
    }
    for (i, &(s2, s1)) in b_acc.iter().enumerate() {
        if s2 != 0.0 {
            parts.push(ctx.a[i] * (s2 - s1 * s1));
        }
    }
    let total: f64 = parts.iter().sum();
    let scale: f64 = parts.iter().map(|p| p.abs()).sum();
    if total < -1e-9 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!("negative variance {total:e} (scale {scale:e})")));
    }
    Ok(total.max(0.0))
}
