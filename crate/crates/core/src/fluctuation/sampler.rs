use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Hypergeometric};

use super::{st, BaseVariable, FluctuationContext};
use crate::error::{AbortReason, Error, Result};
use crate::estimation::ObservedData;
use crate::params::Variant;

/// How emission counts `B_i^j` are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmissionMode {
    /// Multinomial draw per pulse kind.
    #[default]
    Multinomial,
    /// `A_i P_i^j` rounded so that each row still sums to `A_i`; isolates the later stages.
    FixedAtMean,
}

/// One draw of the whole counting chain. Per-state vectors are indexed through [`st`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Realization {
    pub a: Vec<u64>,
    /// `B_i^j`, `j = 0..=2k+1`.
    pub b: Vec<Vec<u64>>,
    pub c: Vec<Vec<u64>>,
    pub e: Vec<Vec<u64>>,
    pub f: Vec<Vec<u64>>,
    pub g: Vec<Vec<u64>>,
    pub h: Vec<u64>,
}

/// Generator for trial `trial` of a campaign seeded with `seed`; trials use disjoint streams.
pub fn stream_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

pub fn sample_counts(ctx: &FluctuationContext, seed: u64, mode: EmissionMode) -> Result<Realization> {
    sample_with(ctx, &mut stream_rng(seed, 0), mode)
}

fn binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Items with the feature among `draws` taken from `population`, `size` of which carry it.
fn hypergeometric<R: Rng>(rng: &mut R, population: u64, size: u64, draws: u64) -> u64 {
    match Hypergeometric::new(population, size, draws) {
        Ok(d) => d.sample(rng),
        // The library's small-mode branch underflows for very large populations; the
        // sequential draw is exact and cheap in exactly that regime.
        Err(_) => {
            let (marked, picks) = if size < draws { (size, draws) } else { (draws, size) };
            let mut hits = 0u64;
            for t in 0..marked {
                let p = (picks - hits) as f64 / (population - t) as f64;
                if rng.random::<f64>() < p {
                    hits += 1;
                }
            }
            hits
        }
    }
}

/// Category counts of `draws` items taken without replacement from categories of the given sizes.
fn multivariate_hypergeometric<R: Rng>(rng: &mut R, sizes: &[u64], draws: u64) -> Vec<u64> {
    let mut population: u64 = sizes.iter().sum();
    debug_assert!(draws <= population);
    let mut left = draws;
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let x = if left == 0 || size == 0 {
            0
        } else if size == population {
            left
        } else {
            hypergeometric(rng, population, size, left)
        };
        out.push(x);
        population -= size;
        left -= x;
    }
    out
}

fn multinomial<R: Rng>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut left = n;
    let mut mass: f64 = probs.iter().sum();
    let mut out = Vec::with_capacity(probs.len());
    for (idx, &p) in probs.iter().enumerate() {
        let x = if idx + 1 == probs.len() {
            left
        } else if mass <= 0.0 {
            0
        } else {
            binomial(rng, left, (p / mass).min(1.0))
        };
        out.push(x);
        left -= x;
        mass -= p;
    }
    out
}

/// Largest-remainder rounding of `n * probs` so that the parts sum to `n`.
fn apportion(n: u64, probs: &[f64]) -> Vec<u64> {
    let exact: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut out: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &idx in order.iter().take(n.saturating_sub(assigned) as usize) {
        out[idx] += 1;
    }
    out
}

fn rounded_share(ratio: f64, population: u64) -> u64 {
    ((ratio * population as f64).round() as u64).min(population)
}

/// Draws the chain `B -> C -> E -> F -> G -> H` from `rng`.
pub fn sample_with<R: Rng>(ctx: &FluctuationContext, rng: &mut R, mode: EmissionMode) -> Result<Realization> {
    let k = ctx.k;
    let kinds = ctx.kinds();
    let ns = 2 * k + 3;
    let nj = 2 * k + 2;
    let a: Vec<u64> = ctx.a.iter().map(|&x| x.round() as u64).collect();

    let b: Vec<Vec<u64>> = (0..kinds)
        .map(|i| {
            let probs: Vec<f64> = (0..nj).map(|j| ctx.pk[(i, j)]).collect();
            match mode {
                EmissionMode::Multinomial => multinomial(rng, a[i], &probs),
                EmissionMode::FixedAtMean => apportion(a[i], &probs),
            }
        })
        .collect();

    let mut c = vec![vec![0u64; ns]; kinds];
    for j in 0..nj {
        let sizes: Vec<u64> = (0..kinds).map(|i| b[i][j]).collect();
        let total: u64 = sizes.iter().sum();
        let alloc = multivariate_hypergeometric(rng, &sizes, rounded_share(ctx.q[j], total));
        for i in 0..kinds {
            c[i][j + 1] = alloc[i];
        }
    }
    for i in 0..kinds {
        let population = match ctx.variant {
            Variant::Reverse => a[i],
            Variant::Forward => b[i][1],
        };
        c[i][st(-1)] = binomial(rng, population, ctx.p_dark);
    }

    let e: Vec<Vec<u64>> = c
        .iter()
        .map(|row| row.iter().map(|&x| binomial(rng, x, 0.5)).collect())
        .collect();
    let e_total: Vec<u64> = e.iter().map(|row| row.iter().sum()).collect();
    let n = ctx.n as u64;
    if e_total[ctx.i0] <= n || e_total[ctx.s()] <= n {
        return Err(Error::Abort(AbortReason::InsufficientCheckBits));
    }

    let mut f = e.clone();
    f[ctx.i0] = multivariate_hypergeometric(rng, &e[ctx.i0], e_total[ctx.i0] - n);
    f[ctx.s()] = multivariate_hypergeometric(rng, &e[ctx.s()], n);

    let error_kinds = ctx.error_kinds();
    let mut g = vec![vec![0u64; ns]; kinds];
    for j in ctx.error_states() {
        let population: u64 = c.iter().map(|row| row[st(j)]).sum();
        let mut sizes: Vec<u64> = error_kinds.iter().map(|&i| f[i][st(j)]).collect();
        let checked: u64 = sizes.iter().sum();
        sizes.push(population - checked);
        let errors = rounded_share(ctx.r[j as usize], population);
        let alloc = multivariate_hypergeometric(rng, &sizes, errors);
        for (idx, &i) in error_kinds.iter().enumerate() {
            g[i][st(j)] = alloc[idx];
        }
    }

    let mut h = vec![0u64; kinds];
    for i in 1..=k {
        let (fi, gi) = (&f[i], &g[i]);
        h[i] = binomial(rng, fi[st(-1)], 0.5)
            + binomial(rng, fi[st(0)], 0.5)
            + binomial(rng, gi[st(1)], 1.0 - ctx.p_sys)
            + binomial(rng, fi[st(1)] - gi[st(1)], ctx.p_sys)
            + (2..=k as i32 + 1).map(|j| gi[st(j)]).sum::<u64>();
    }
    for i in k + 1..kinds {
        h[i] = ctx
            .states()
            .map(|j| {
                let checks = if i == ctx.s() { e[i][st(j)] - f[i][st(j)] } else { e[i][st(j)] };
                binomial(rng, checks, ctx.plus_error(j))
            })
            .sum();
    }

    Ok(Realization { a, b, c, e, f, g, h })
}

impl Realization {
    /// The counts visible to the two parties.
    pub fn observed(&self) -> ObservedData {
        let tot = |v: &Vec<Vec<u64>>| v.iter().map(|row| row.iter().sum::<u64>() as f64).collect::<Vec<_>>();
        let mut h: Vec<f64> = self.h.iter().map(|&x| x as f64).collect();
        h[0] = 0.0;
        ObservedData {
            a: self.a.iter().map(|&x| x as f64).collect(),
            c: tot(&self.c),
            e: tot(&self.e),
            h,
        }
    }

    /// Realised primed deviations of every stage, each measured against its conditional mean.
    pub fn innovations(&self, ctx: &FluctuationContext) -> BTreeMap<BaseVariable, f64> {
        let k = ctx.k;
        let mut out = BTreeMap::new();
        let x = |v: u64| v as f64;
        for i in 0..ctx.kinds() {
            for j in 0..2 * k + 2 {
                out.insert(BaseVariable::db(i, j as i32), ctx.a[i] * ctx.pk[(i, j)] - x(self.b[i][j]));
                out.insert(BaseVariable::dc(i, j as i32), x(self.c[i][j + 1]) - ctx.q[j] * x(self.b[i][j]));
            }
            let dark_pop = match ctx.variant {
                Variant::Reverse => x(self.a[i]),
                Variant::Forward => x(self.b[i][1]),
            };
            out.insert(BaseVariable::dc(i, -1), x(self.c[i][0]) - ctx.p_dark * dark_pop);
            for j in ctx.states() {
                out.insert(BaseVariable::de(i, j), x(self.e[i][st(j)]) - 0.5 * x(self.c[i][st(j)]));
            }
        }
        for i in [ctx.i0, ctx.s()] {
            let et: f64 = self.e[i].iter().map(|&v| v as f64).sum();
            let frac = ctx.split_draws(i, et) / et;
            for j in ctx.states() {
                out.insert(BaseVariable::df(i, j), x(self.f[i][st(j)]) - frac * x(self.e[i][st(j)]));
            }
        }
        for i in ctx.error_kinds() {
            for j in ctx.error_states() {
                out.insert(
                    BaseVariable::dg(i, j),
                    x(self.g[i][st(j)]) - ctx.r[j as usize] * x(self.f[i][st(j)]),
                );
            }
        }
        for i in 1..=k {
            let (f, g) = (&self.f[i], &self.g[i]);
            let expected = 0.5 * (x(f[st(-1)]) + x(f[st(0)]))
                + (1.0 - ctx.p_sys) * x(g[st(1)])
                + ctx.p_sys * (x(f[st(1)]) - x(g[st(1)]))
                + (2..=k as i32 + 1).map(|j| x(g[st(j)])).sum::<f64>();
            out.insert(BaseVariable::dh(i), x(self.h[i]) - expected);
        }
        out
    }
}
