//! Convex photon-number decomposition of phase-randomised coherent pulses.
//!
//! A pulse of mean photon number `mu_i` is written as a mixture of the vacuum,
//! the single-photon state and the multi-photon states `sigma_2 .. sigma_{i+1}`,
//! where each `sigma_l` is a normalised Fock mixture with weights
//! `gamma_{l,n} / n!`. The mixture weights of the `2k + 1` pulse kinds are
//! collected in the generating matrix `P_k`, with one column per emitted state:
//! vacuum, single photon, times-basis multi-photon states (`2..=k+1`) and
//! plus-basis multi-photon states (`k+2..=2k+1`).

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{inverse_with_condition, Matrix};

/// Default relative truncation error for the `Omega_l` series.
pub const DEFAULT_SERIES_TOL: f64 = 1e-12;
/// Default ceiling on the condition number of inverted blocks.
pub const DEFAULT_CONDITION_CEILING: f64 = 1e12;

/// Largest `n` for which `n!` is finite in double precision.
const MAX_SERIES_N: usize = 170;

/// Intensities and per-kind sending probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityProfile {
    /// `mu_0 = 0 < mu_1 < ... < mu_k`.
    pub mus: Vec<f64>,
    /// Probability of sending each of the `2k + 1` kinds: vacuum, times basis `1..=k`, plus basis `k+1..=2k`.
    pub send_probs: Vec<f64>,
}

impl IntensityProfile {
    pub fn new(mus: Vec<f64>, send_probs: Vec<f64>) -> Result<Self> {
        let p = IntensityProfile { mus, send_probs };
        p.validate()?;
        Ok(p)
    }

    /// Signal kinds get `signal_weight / 2` each, the remaining kinds share the rest evenly.
    pub fn with_signal_weight(mus: Vec<f64>, i0: usize, signal_weight: f64) -> Result<Self> {
        let k = mus.len().saturating_sub(1);
        if k == 0 || i0 < 1 || i0 > k {
            return Err(invalid("signal index out of range"));
        }
        if !(0.0..1.0).contains(&signal_weight) || signal_weight <= 0.0 {
            return Err(invalid("signal weight must lie in (0, 1)"));
        }
        let others = (2 * k - 1) as f64;
        let mut probs = vec![(1.0 - signal_weight) / others; 2 * k + 1];
        probs[i0] = signal_weight / 2.0;
        probs[i0 + k] = signal_weight / 2.0;
        IntensityProfile::new(mus, probs)
    }

    pub fn k(&self) -> usize {
        self.mus.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.mus.len() < 2 {
            return Err(invalid("at least one nonzero intensity is required"));
        }
        if self.mus[0] != 0.0 {
            return Err(invalid("mu_0 must be exactly 0"));
        }
        for w in self.mus.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(invalid(format!(
                    "intensities must be strictly increasing and finite: {:?}",
                    self.mus
                )));
            }
        }
        let k = self.k();
        if self.send_probs.len() != 2 * k + 1 {
            return Err(invalid(format!(
                "expected {} sending probabilities, got {}",
                2 * k + 1,
                self.send_probs.len()
            )));
        }
        if self.send_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("sending probabilities must lie in [0, 1]"));
        }
        let total: f64 = self.send_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("sending probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Intensity of pulse kind `i` (plus-basis kinds share the times-basis intensities).
    pub fn mu_of_kind(&self, i: usize) -> f64 {
        let k = self.k();
        if i > k {
            self.mus[i - k]
        } else {
            self.mus[i]
        }
    }
}

/// `gamma_{l,n}`: the divided difference of `z^{n-2}` on the nodes `mu_1 .. mu_{l-1}`.
///
/// `mus` is the full intensity list including `mu_0 = 0`. The value is evaluated as the
/// complete homogeneous symmetric polynomial of degree `n - l` in the nodes, which equals
/// the divided-difference sum term by term but involves only positive additions.
pub fn gamma_coefficient(l: usize, n: usize, mus: &[f64]) -> Result<f64> {
    let k = mus.len().saturating_sub(1);
    if l < 2 || l > k + 1 {
        return Err(invalid(format!("l = {l} must lie in 2..={}", k + 1)));
    }
    if n < l {
        return Err(invalid(format!("n = {n} must be at least l = {l}")));
    }
    let nodes = &mus[1..l];
    check_distinct(nodes)?;
    let value = complete_homogeneous(nodes, n - l);
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::NonPositiveCoefficient {
            what: format!("gamma_{{{l},{n}}}"),
            value,
        });
    }
    Ok(value)
}

fn check_distinct(nodes: &[f64]) -> Result<()> {
    for (a, x) in nodes.iter().enumerate() {
        for y in &nodes[a + 1..] {
            if x == y {
                return Err(invalid(format!("duplicate intensity {x}")));
            }
        }
    }
    Ok(())
}

/// `h_m(x_1, .., x_r)` by the recurrence `h_m(x_1..x_r) = h_m(x_1..x_{r-1}) + x_r h_{m-1}(x_1..x_r)`.
fn complete_homogeneous(nodes: &[f64], degree: usize) -> f64 {
    let mut h = vec![0.0; degree + 1];
    h[0] = 1.0;
    for &x in nodes {
        for m in 1..=degree {
            h[m] += x * h[m - 1];
        }
    }
    h[degree]
}

/// Incremental evaluation of `gamma_{l,n}` for `n = l, l+1, ...`.
struct GammaSeries {
    nodes: Vec<f64>,
    // column[r] = h_m(x_1..x_{r+1}) for the current degree m
    column: Vec<f64>,
    started: bool,
}

impl GammaSeries {
    fn new(nodes: &[f64]) -> Self {
        GammaSeries {
            nodes: nodes.to_vec(),
            column: vec![1.0; nodes.len()],
            started: false,
        }
    }

    /// Returns `gamma_{l,n}` for successive `n`.
    fn next_value(&mut self) -> f64 {
        if self.started {
            let mut below = 0.0;
            for (r, x) in self.nodes.iter().enumerate() {
                self.column[r] = below + x * self.column[r];
                below = self.column[r];
            }
        }
        self.started = true;
        *self.column.last().expect("at least one node")
    }
}

/// Sums `sum_{n>=l} gamma_{l,n} weight(n) / n!` with a rigorous geometric tail bound.
///
/// `weight` must satisfy `0 <= weight(n) <= 1`; the tail bound uses
/// `gamma_{l,n+1} / gamma_{l,n} <= sum(nodes)`.
fn gamma_series<W: Fn(usize) -> f64>(l: usize, mus: &[f64], rel_tol: f64, weight: W) -> Result<f64> {
    let nodes = &mus[1..l];
    let node_sum: f64 = nodes.iter().sum();
    let mu_max = nodes.iter().cloned().fold(0.0, f64::max);
    let mut inv_factorial = 1.0;
    for m in 2..l {
        inv_factorial /= m as f64;
    }
    let mut series = GammaSeries::new(nodes);
    let mut sum = 0.0;
    for n in l..=MAX_SERIES_N {
        inv_factorial /= n as f64;
        let term = series.next_value() * inv_factorial;
        sum += term * weight(n);
        let ratio = node_sum / (n as f64 + 1.0);
        if (n as f64) > 3.0 * mu_max + l as f64 && ratio < 1.0 {
            let tail = term * ratio / (1.0 - ratio);
            if tail <= rel_tol * sum.abs() || tail == 0.0 {
                return Ok(sum);
            }
        }
    }
    Err(Error::SeriesDivergence {
        l,
        terms: MAX_SERIES_N,
    })
}

/// `Omega_l = sum_{n>=l} gamma_{l,n} / n!`.
pub fn omega(l: usize, mus: &[f64], rel_tol: f64) -> Result<f64> {
    let k = mus.len().saturating_sub(1);
    if l < 2 || l > k + 1 {
        return Err(invalid(format!("l = {l} must lie in 2..={}", k + 1)));
    }
    if !(rel_tol > 0.0) {
        return Err(invalid("rel_tol must be positive"));
    }
    check_distinct(&mus[1..l])?;
    let value = gamma_series(l, mus, rel_tol, |_| 1.0)?;
    if !(value > 0.0) {
        return Err(Error::NonPositiveCoefficient {
            what: format!("Omega_{l}"),
            value,
        });
    }
    Ok(value)
}

/// Probability that `sigma_l` is detected when each photon survives independently
/// with probability `transmittance`: `sum_n gamma_{l,n} (1 - (1 - t)^n) / n! / Omega_l`.
pub fn multiphoton_yield(l: usize, mus: &[f64], transmittance: f64, rel_tol: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&transmittance) {
        return Err(invalid("transmittance must lie in [0, 1]"));
    }
    let log_loss = (-transmittance).ln_1p();
    let weighted = gamma_series(l, mus, rel_tol, |n| -(n as f64 * log_loss).exp_m1())?;
    Ok(weighted / omega(l, mus, rel_tol)?)
}

#[derive(Debug, Clone)]
pub struct BlockInverse {
    pub inverse: Matrix,
    pub condition: f64,
}

/// Inverse of the block `(m_{i,j})_{1 <= i,j <= size}`; row and column 0 are excluded.
pub fn submatrix_inverse(m: &Matrix, size: usize) -> Result<BlockInverse> {
    submatrix_inverse_with_ceiling(m, size, DEFAULT_CONDITION_CEILING)
}

pub fn submatrix_inverse_with_ceiling(m: &Matrix, size: usize, ceiling: f64) -> Result<BlockInverse> {
    if size == 0 || size + 1 > m.rows() || size + 1 > m.cols() {
        return Err(invalid(format!(
            "block of size {size} does not fit a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let block = m.block(1..size + 1, 1..size + 1);
    let (inverse, condition) = inverse_with_condition(&block)?;
    if condition > ceiling {
        return Err(Error::IllConditioned {
            size,
            condition,
            ceiling,
        });
    }
    let residual = block.mul(&inverse).max_abs_diff(&Matrix::identity(size));
    if residual > 1e-9 {
        return Err(Error::Numerical(format!(
            "inverse residual {residual:e} exceeds 1e-9 for block of size {size}"
        )));
    }
    Ok(BlockInverse { inverse, condition })
}

/// Generating matrices of one intensity profile.
#[derive(Debug, Clone)]
pub struct DecompositionMatrix {
    k: usize,
    /// `P_k`, `(2k+1) x (2k+2)`.
    pub pk: Matrix,
    /// `pk * q_rot`.
    pub pbar: Matrix,
    /// Rotation mixing the two highest multi-photon columns.
    pub q_rot: Matrix,
    /// `Omega_2 .. Omega_{k+1}`.
    pub omegas: Vec<f64>,
    /// Inverse of the times-basis block `P_{k x k}`.
    pub pk_block_inv: BlockInverse,
    /// Inverse of `Pbar_{2k x 2k}`.
    pub pbar_block_inv: BlockInverse,
    pub mus: Vec<f64>,
}

impl DecompositionMatrix {
    pub fn k(&self) -> usize {
        self.k
    }

    /// `P_i^j`.
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.pk[(i, j)]
    }

    /// `Pbar_i^j`.
    pub fn pbar(&self, i: usize, j: usize) -> f64 {
        self.pbar[(i, j)]
    }

    /// `(P_{k x k}^{-1})_j^i`, both indices starting at 1.
    pub fn pk_inv(&self, j: usize, i: usize) -> f64 {
        self.pk_block_inv.inverse[(j - 1, i - 1)]
    }

    /// `(Pbar_{2k x 2k}^{-1})_j^i`, both indices starting at 1.
    pub fn pbar_inv(&self, j: usize, i: usize) -> f64 {
        self.pbar_block_inv.inverse[(j - 1, i - 1)]
    }

    pub fn omega(&self, l: usize) -> f64 {
        self.omegas[l - 2]
    }
}

/// Rotation `q_rot` such that `pbar = pk * q_rot` carries
/// `(P^{k+1} - P^{2k+1}) / sqrt 2` in column `k+1` and `(P^{k+1} + P^{2k+1}) / sqrt 2` in column `2k+1`.
pub fn rotation(k: usize) -> Matrix {
    let mut q = Matrix::identity(2 * k + 2);
    let (a, b) = (k + 1, 2 * k + 1);
    q[(a, a)] = FRAC_1_SQRT_2;
    q[(b, a)] = -FRAC_1_SQRT_2;
    q[(a, b)] = FRAC_1_SQRT_2;
    q[(b, b)] = FRAC_1_SQRT_2;
    q
}

pub fn build_decomposition(profile: &IntensityProfile) -> Result<DecompositionMatrix> {
    build_decomposition_with(profile, DEFAULT_SERIES_TOL)
}

pub fn build_decomposition_with(profile: &IntensityProfile, rel_tol: f64) -> Result<DecompositionMatrix> {
    profile.validate()?;
    let mus = &profile.mus;
    let k = profile.k();
    let omegas = (2..=k + 1)
        .map(|l| omega(l, mus, rel_tol))
        .collect::<Result<Vec<_>>>()?;

    let mut pk = Matrix::zeros(2 * k + 1, 2 * k + 2);
    pk[(0, 0)] = 1.0;
    for i in 1..=k {
        let mu = mus[i];
        let damp = (-mu).exp();
        for row in [i, i + k] {
            pk[(row, 0)] = damp;
            pk[(row, 1)] = mu * damp;
        }
        let mut prod = 1.0;
        for j in 1..=i {
            if j > 1 {
                prod *= mu - mus[j - 1];
            }
            let x = mu * mu * prod * damp * omegas[j - 1];
            if !(x > 0.0) {
                return Err(Error::NonPositiveCoefficient {
                    what: format!("X_{i}^{j}"),
                    value: x,
                });
            }
            pk[(i, 1 + j)] = x;
            pk[(i + k, k + 1 + j)] = x;
        }
    }
    let q_rot = rotation(k);
    let pbar = pk.mul(&q_rot);
    let pk_block_inv = submatrix_inverse(&pk, k)?;
    let pbar_block_inv = submatrix_inverse(&pbar, 2 * k)?;
    Ok(DecompositionMatrix {
        k,
        pk,
        pbar,
        q_rot,
        omegas,
        pk_block_inv,
        pbar_block_inv,
        mus: mus.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(mus: &[f64]) -> IntensityProfile {
        let mut all = vec![0.0];
        all.extend_from_slice(mus);
        IntensityProfile::with_signal_weight(all, mus.len(), 0.7).unwrap()
    }

    /// The literal divided-difference sum, used as an independent route.
    fn gamma_literal(l: usize, n: usize, mus: &[f64]) -> f64 {
        (1..l)
            .map(|j| {
                let denom: f64 = (1..l).filter(|&t| t != j).map(|t| mus[j] - mus[t]).product();
                mus[j].powi(n as i32 - 2) / denom
            })
            .sum()
    }

    #[test]
    fn gamma_examples() {
        let m = [0.0, 0.3];
        assert!((gamma_coefficient(2, 5, &m).unwrap() - 0.027).abs() < 1e-15);
        let m = [0.0, 0.1, 0.4];
        assert!((gamma_coefficient(3, 3, &m).unwrap() - 1.0).abs() < 1e-15);
        let expected = (0.4f64.powi(4) - 0.1f64.powi(4)) / (0.4 - 0.1);
        assert!((gamma_coefficient(3, 6, &m).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn gamma_matches_divided_difference_sum() {
        let m = [0.0, 0.1, 0.25, 0.45, 0.8];
        for l in 2..=5 {
            for n in l..l + 12 {
                let a = gamma_coefficient(l, n, &m).unwrap();
                let b = gamma_literal(l, n, &m);
                assert!((a - b).abs() <= 1e-10 * a, "l={l} n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gamma_rejects_bad_input() {
        let m = [0.0, 0.1, 0.4];
        assert!(gamma_coefficient(1, 3, &m).is_err());
        assert!(gamma_coefficient(4, 5, &m).is_err());
        assert!(gamma_coefficient(3, 2, &m).is_err());
        assert!(gamma_coefficient(3, 4, &[0.0, 0.2, 0.2]).is_err());
    }

    #[test]
    fn omega_two_closed_form() {
        let v = omega(2, &[0.0, 0.1], 1e-12).unwrap();
        // (e^0.1 - 1 - 0.1) / 0.01
        assert!((v - 0.517_091_807_564_762_5).abs() <= 1e-12 * v);
        let tiny = omega(2, &[0.0, 1e-12], 1e-12).unwrap();
        assert!((tiny - 0.5).abs() < 1e-11);
    }

    #[test]
    fn omega_three_matches_brute_force() {
        let m = [0.0, 0.1, 0.4];
        let mut brute = 0.0;
        let mut fact = 2.0;
        for n in 3..=80 {
            fact *= n as f64;
            brute += gamma_literal(3, n, &m) / fact;
        }
        let v = omega(3, &m, 1e-12).unwrap();
        assert!((v - brute).abs() <= 1e-12 * brute);
    }

    #[test]
    fn matrix_entries_and_rows() {
        let d = build_decomposition(&profile(&[0.1, 0.2, 0.5])).unwrap();
        for i in 0..7 {
            let s: f64 = d.pk.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row {i} sums to {s}");
        }
        assert_eq!(d.pk.row(0), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let expected = (-0.2f64).exp() * 0.04 * (0.2 - 0.1) * d.omega(3);
        assert!((d.p(2, 3) - expected).abs() < 1e-16);
        // X block is lower triangular
        assert_eq!(d.p(1, 3), 0.0);
        assert_eq!(d.p(2, 4), 0.0);
        assert_eq!(d.p(4, 6), 0.0);
    }

    #[test]
    fn pbar_is_pk_times_rotation() {
        let d = build_decomposition(&profile(&[0.15, 0.35, 0.6])).unwrap();
        let prod = d.pk.mul(&d.q_rot);
        assert!(prod.max_abs_diff(&d.pbar) < 1e-12);
    }

    #[test]
    fn block_inverses() {
        let d = build_decomposition(&profile(&[0.1, 0.2, 0.5])).unwrap();
        let blk = d.pk.block(1..4, 1..4);
        let id = blk.mul(&d.pk_block_inv.inverse);
        assert!(id.max_abs_diff(&Matrix::identity(3)) < 1e-9);

        let m = Matrix::from_rows(&[vec![9.0, 9.0, 9.0], vec![9.0, 2.0, 0.0], vec![9.0, 1.0, 1.0]]);
        let inv = submatrix_inverse(&m, 2).unwrap().inverse;
        let expected = Matrix::from_rows(&[vec![0.5, 0.0], vec![-0.5, 1.0]]);
        assert!(inv.max_abs_diff(&expected) < 1e-15);

        let eye = Matrix::identity(4);
        assert!(submatrix_inverse(&eye, 3).unwrap().inverse.max_abs_diff(&Matrix::identity(3)) < 1e-15);
    }

    #[test]
    fn ill_conditioned_block_is_rejected() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 1.0], vec![0.0, 1.0, 1.0 + 1e-14]]);
        assert!(matches!(
            submatrix_inverse(&m, 2),
            Err(Error::IllConditioned { .. }) | Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn multiphoton_yield_reproduces_aggregate_detection() {
        // sum_j P_i^j Y_j must equal 1 - exp(-t mu_i) when Y_j are the Fock-averaged yields.
        let d = build_decomposition(&profile(&[0.1, 0.3, 0.6])).unwrap();
        let t = 0.0145;
        let k = 3;
        let mut yields = vec![0.0, t];
        for l in 2..=k + 1 {
            yields.push(multiphoton_yield(l, &d.mus, t, 1e-13).unwrap());
        }
        for l in 2..=k + 1 {
            yields.push(multiphoton_yield(l, &d.mus, t, 1e-13).unwrap());
        }
        for i in 1..=2 * k {
            let p: f64 = (0..2 * k + 2).map(|j| d.p(i, j) * yields[j]).sum();
            let mu = if i > k { d.mus[i - k] } else { d.mus[i] };
            let expected = -(-t * mu).exp_m1();
            assert!((p - expected).abs() <= 1e-11 * expected, "kind {i}: {p} vs {expected}");
        }
    }
}
