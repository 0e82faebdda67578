//! Capped binary entropy and its tangent-line extension.

/// Binary entropy in bits, capped at 1 above one half.
pub fn hbar(x: f64) -> f64 {
    debug_assert!(!x.is_nan());
    if x <= 0.0 {
        0.0
    } else if x <= 0.5 {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    } else {
        1.0
    }
}

/// Derivative of [`hbar`]; zero on the capped branch, `+inf` at the origin.
pub fn hbar_deriv(x: f64) -> f64 {
    if x <= 0.0 {
        f64::INFINITY
    } else if x < 0.5 {
        ((1.0 - x) / x).log2()
    } else {
        0.0
    }
}

/// `hbar` for `x >= a`, the tangent line at `a` below it. Defined for every real `x`.
pub fn hbar_a(x: f64, a: f64) -> f64 {
    debug_assert!(a > 0.0 && a <= 0.5, "a = {a} outside (0, 1/2]");
    if x >= a {
        hbar(x)
    } else {
        hbar(a) + hbar_deriv(a) * (x - a)
    }
}

pub fn hbar_a_deriv(x: f64, a: f64) -> f64 {
    if x >= a {
        hbar_deriv(x)
    } else {
        hbar_deriv(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_points() {
        assert_eq!(hbar(0.5), 1.0);
        assert_eq!(hbar(0.0), 0.0);
        assert_eq!(hbar(0.75), 1.0);
        assert!((hbar(0.25) - 0.811_278_124_459_132_9).abs() < 1e-15);
    }

    #[test]
    fn tangent_branch() {
        let a = 0.04;
        let expected = hbar(a) - hbar_deriv(a) * a / 2.0;
        assert!((hbar_a(a / 2.0, a) - expected).abs() < 1e-15);
        assert_eq!(hbar_a_deriv(-1.0, a), hbar_deriv(a));
    }

    proptest! {
        #[test]
        fn dominates_hbar(x in 0.0f64..1.0, a in 1e-4f64..0.5) {
            prop_assert!(hbar_a(x, a) >= hbar(x) - 1e-15);
        }
    }
}
