//! Splitting the security parameter into the three tail budgets.

use crate::params::{DeltaRule, ProtocolParams};

/// Tail budgets: each Gaussian bound or slack fails with probability at most `2^-d_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityDeltas {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    /// `ceil(log2 n_max)`.
    pub d_prime: f64,
}

impl SecurityDeltas {
    /// `2^-d1 + 2^-d2 + 2^-d3`, the bound on the average phase-error probability.
    pub fn failure_probability(&self) -> f64 {
        (-self.d1).exp2() + (-self.d2).exp2() + (-self.d3).exp2()
    }
}

/// `ceil(log2 n)` computed exactly on integers.
pub fn ceil_log2(n: u64) -> u32 {
    assert!(n >= 1, "log2 of zero");
    if n == 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// `d' = ceil(log2 n_max)`, `d1 = delta + d' + 1`, `d2 = d3 = delta + d' + 2`.
pub fn security_deltas(delta: f64, n_max: u64) -> SecurityDeltas {
    let d_prime = ceil_log2(n_max) as f64;
    SecurityDeltas {
        d1: delta + d_prime + 1.0,
        d2: delta + d_prime + 2.0,
        d3: delta + d_prime + 2.0,
        d_prime,
    }
}

/// Budgets selected by the protocol's rule.
pub fn deltas_for(params: &ProtocolParams) -> SecurityDeltas {
    let base = security_deltas(params.delta, params.n_max);
    match params.delta_rule {
        DeltaRule::Proof => base,
        DeltaRule::Simulation => SecurityDeltas {
            d1: base.d3,
            d2: base.d1,
            d3: base.d3,
            d_prime: base.d_prime,
        },
        DeltaRule::Explicit { d1, d2, d3 } => SecurityDeltas {
            d1,
            d2,
            d3,
            d_prime: base.d_prime,
        },
    }
}

/// Bound on Eve's average information given the average phase-error probability `p_ph`:
/// `p_ph (1 + n_max - log2 p_ph)`.
pub fn eve_info_bound(p_ph: f64, n_max: u64) -> f64 {
    p_ph * (1.0 + n_max as f64 - p_ph.log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rule_at_one_million() {
        let d = security_deltas(9.0, 1 << 20);
        assert_eq!((d.d_prime, d.d1, d.d2, d.d3), (20.0, 30.0, 31.0, 31.0));
        let d = security_deltas(0.0, 1);
        assert_eq!((d.d_prime, d.d1, d.d2, d.d3), (0.0, 1.0, 2.0, 2.0));
        assert_eq!(security_deltas(0.0, (1 << 20) + 1).d_prime, 21.0);
    }

    #[test]
    fn ceil_log2_matches_float() {
        for n in 1..5000u64 {
            assert_eq!(ceil_log2(n) as f64, (n as f64).log2().ceil(), "n = {n}");
        }
        assert_eq!(ceil_log2(u64::MAX), 64);
    }

    #[test]
    fn eve_bound_basics() {
        assert_eq!(eve_info_bound(1.0, 1000), 1001.0);
        let p = security_deltas(9.0, 1 << 20).failure_probability();
        assert!((p - 2f64.powi(-29)).abs() < 1e-24);
        for i in 1..20 {
            let p = 0.5f64.powi(i);
            assert!(eve_info_bound(p / 2.0, 100) < eve_info_bound(p, 100));
        }
    }

    #[test]
    fn simulation_rule_swaps_budgets() {
        let mut params = crate::fluctuation::testutil::desk_context().0;
        params.delta_rule = DeltaRule::Simulation;
        let d = deltas_for(&params);
        assert_eq!(d.d1, d.d3);
        assert_eq!(d.d2 + 1.0, d.d1);
    }

    proptest! {
        #[test]
        fn deltas_monotone_in_n_max(delta in 0.0..30.0f64, a in 1u64..1 << 40, b in 1u64..1 << 40) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (x, y) = (security_deltas(delta, lo), security_deltas(delta, hi));
            prop_assert!(x.d1 <= y.d1 && x.d2 <= y.d2 && x.d3 <= y.d3);
        }
    }
}
