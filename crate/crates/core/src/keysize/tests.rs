use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use proptest::prelude::*;

use super::entropy::hbar_a_deriv;
use super::*;
use crate::decomposition::DecompositionMatrix;
use crate::estimation::{linear_estimate, ml_estimate, ObservedData};
use crate::fluctuation::testutil::{desk_context, honest_context};
use crate::fluctuation::{sample_counts, variance_of, EmissionMode, FluctuationContext};
use crate::params::{DeltaRule, ProtocolParams, Variant};

fn exact(ctx: &FluctuationContext) -> ObservedData {
    ctx.means().observed(&ctx.a)
}

fn true_xy(ctx: &FluctuationContext) -> (f64, f64) {
    let k = ctx.k;
    (FRAC_1_SQRT_2 * (ctx.q[k + 1] + ctx.q[2 * k + 1]), ctx.r[k + 1])
}

fn explicit(params: &mut ProtocolParams, d: f64) -> SecurityDeltas {
    params.delta_rule = DeltaRule::Explicit { d1: d, d2: d, d3: d };
    deltas_for(params)
}

#[test]
fn theta_hat_limits() {
    let (params, decomp, ctx) = desk_context();
    let obs = exact(&ctx);
    let s = params.signal_plus();
    let a = 0.05;
    // Brace equal to C/A: every key bit is attributed to secure single photons.
    let r1 = 0.2;
    let target = obs.c[s] / obs.a[s] - params.p_dark;
    let q1 = target / (decomp.p(s, 1) * (1.0 - hbar(r1)));
    assert!(theta_hat(&obs, q1, r1, a, &params, &decomp).unwrap().abs() < 1e-8);
    let mut no_dark = params.clone();
    no_dark.p_dark = 0.0;
    assert_eq!(theta_hat(&obs, 0.0, 0.1, a, &no_dark, &decomp).unwrap(), params.n());
}

#[test]
fn theta_hat_matches_direct_evaluation() {
    let (params, decomp, ctx) = desk_context();
    let obs = exact(&ctx);
    let (x, y) = true_xy(&ctx);
    let est = linear_estimate(&obs, &decomp, &params, x, y).unwrap();
    let (q1, r1, a) = (est.q_hat[1], est.r_hat[1].max(0.0), 0.02);
    // hbar_a(r1) by hand: tangent line at a since r1 < a here.
    assert!(r1 < a);
    let h = |x: f64| -x * x.log2() - (1.0 - x) * (1.0 - x).log2();
    let ha = h(a) + ((1.0 - a) / a).log2() * (r1 - a);
    let s = params.signal_plus();
    let brace = q1 * decomp.p(s, 1) * (1.0 - ha) + params.p_dark;
    let expected = params.n() - params.n() * obs.a[s] / obs.c[s] * brace;
    let got = theta_hat(&obs, q1, r1, a, &params, &decomp).unwrap();
    assert!((got - expected).abs() <= 1e-9 * expected.abs());
}

#[test]
fn theta_hat_requires_detections() {
    let (params, decomp, ctx) = desk_context();
    let mut obs = exact(&ctx);
    obs.c[params.signal_plus()] = 0.0;
    assert!(theta_hat(&obs, 0.01, 0.0, 0.01, &params, &decomp).is_err());
}

#[test]
fn choose_a_rules() {
    assert_eq!(choose_a(5.0, 0.0, 0.02, 1e-4, 0.01), 0.02);
    assert_eq!(choose_a(5.0, 0.0, -0.3, 1e-4, 0.01), 1e-4);
    assert_eq!(choose_a(1.0, 3.0, 0.1, 1e-4, 0.01), 0.5);
    assert_eq!(choose_a(0.0, 3.0, 0.1, 1e-4, 0.01), 0.01);
    assert_eq!(choose_a(-1.0, 3.0, 0.1, 1e-4, 0.01), 0.01);
}

#[test]
fn chosen_a_minimises_tradeoff() {
    let (mut params, decomp, ctx) = desk_context();
    let deltas = explicit(&mut params, 30.0);
    let obs = exact(&ctx);
    let (x, y) = true_xy(&ctx);
    let est = linear_estimate(&obs, &decomp, &params, x, y).unwrap();
    let builder = FormBuilder::new(&ctx, &decomp, y, VacuumNormalisation::VacuumPulses).unwrap();
    let s_kind = params.signal_plus();
    let p1 = decomp.p(s_kind, 1);
    let spread = (obs.a[s_kind] * p1 * (1.0 - p1)).sqrt();
    let phi1 = phi_inv((-deltas.d1).exp2()).unwrap();
    let phi2 = phi_inv((-deltas.d2).exp2()).unwrap();
    let big_s = params.n() * ctx.q[1] / obs.c[s_kind] * (obs.a[s_kind] * p1 - spread * phi2);
    let big_t = variance_of(&builder.phase_part().unwrap(), &ctx).unwrap().sqrt() * phi1;
    let r1 = est.r_hat[1];
    let a_star = choose_a(big_s, big_t, r1, 1e-4, 0.01);
    assert!(a_star > 1e-4 && a_star < 0.5, "a* = {a_star}");
    let f = |a: f64| hbar_a(r1, a) * big_s + hbar_a_deriv(r1, a) * big_t;
    assert!(f(a_star) <= f(a_star / 2.0));
    assert!(f(a_star) <= f(2.0 * a_star));
}

#[test]
fn theta1_form_is_centred_and_finite() {
    for variant in [Variant::Reverse, Variant::Forward] {
        let (_, decomp, ctx) =
            honest_context(&[0.0, 0.1, 0.2, 0.5], 1.445e-2, 1e7, 10_000, 4e-7, 0.03, variant);
        let (_, y) = true_xy(&ctx);
        let b = FormBuilder::new(&ctx, &decomp, y, VacuumNormalisation::VacuumPulses).unwrap();
        let form = b.theta1(0.05).unwrap();
        assert_eq!(form.constant, 0.0);
        assert!(!form.is_empty());
        assert!(form.terms().all(|(_, c)| c.is_finite()));
        assert!(variance_of(&form, &ctx).unwrap() > 0.0);
    }
}

#[test]
fn form_builder_aborts_without_detections() {
    let (params, decomp, base) = desk_context();
    let zero = vec![0.0; base.q.len()];
    let mut p = params.clone();
    p.p_dark = 0.0;
    let ctx = FluctuationContext::new(&p, &decomp, &base.a, zero, base.r.clone(), Default::default()).unwrap();
    assert!(FormBuilder::new(&ctx, &decomp, 0.0, VacuumNormalisation::VacuumPulses).is_err());
}

/// The form evaluated on the realised innovations predicts the realised deviation
/// up to second-order terms, which are small against the spread at large counts.
#[test]
fn theta1_form_predicts_realisations() {
    for variant in [Variant::Reverse, Variant::Forward] {
        let (params, decomp, ctx) =
            honest_context(&[0.0, 0.1, 0.2, 0.5], 1.445e-2, 1e9, 1_000_000, 4e-7, 0.03, variant);
        let (x, y) = true_xy(&ctx);
        let a = 0.05;
        let form = FormBuilder::new(&ctx, &decomp, y, VacuumNormalisation::VacuumPulses)
            .unwrap()
            .theta1(a)
            .unwrap();
        let sd = variance_of(&form, &ctx).unwrap().sqrt();
        for seed in 0..20 {
            let real = sample_counts(&ctx, seed, EmissionMode::FixedAtMean).unwrap();
            let innov = real.innovations(&ctx);
            let predicted = form.evaluate(|v| innov.get(v).copied().unwrap_or(0.0));
            let actual = realized_delta_theta1(&real, &ctx, &params, &decomp, x, y, a).unwrap();
            assert!(
                (predicted - actual).abs() < 0.05 * sd,
                "{variant:?} seed {seed}: predicted {predicted}, realised {actual}, sd {sd}"
            );
        }
    }
}

#[test]
fn phase_part_is_a_component_of_theta1() {
    let (_, decomp, ctx) = desk_context();
    let (_, y) = true_xy(&ctx);
    let b = FormBuilder::new(&ctx, &decomp, y, VacuumNormalisation::VacuumPulses).unwrap();
    let a = 1e-3;
    let full = b.theta1(a).unwrap();
    let part = b.phase_part().unwrap();
    let slope = hbar_a_deriv(ctx.r[1], a);
    let v = crate::fluctuation::BaseVariable::dg(ctx.s(), 1);
    assert!((full.coefficient(&v) - slope * part.coefficient(&v)).abs() < 1e-9 * slope);
}

#[test]
fn vacuum_normalisation_switch_changes_form() {
    let (_, decomp, ctx) = desk_context();
    let (_, y) = true_xy(&ctx);
    let a = FormBuilder::new(&ctx, &decomp, y, VacuumNormalisation::VacuumPulses).unwrap();
    let b = FormBuilder::new(&ctx, &decomp, y, VacuumNormalisation::SameKind).unwrap();
    let v = crate::fluctuation::BaseVariable::dc(0, 0);
    let (ca, cb) = (a.q1().unwrap().coefficient(&v), b.q1().unwrap().coefficient(&v));
    assert!(ca != cb && ca.is_finite() && cb.is_finite());
}

#[test]
fn breakdown_adds_up() {
    let (mut params, decomp, ctx) = desk_context();
    let deltas = explicit(&mut params, 20.0);
    let obs = exact(&ctx);
    let (x, y) = true_xy(&ctx);
    let b = sacrifice_size(&obs, &params, &decomp, x, y, &deltas, &SacrificeOptions::default()).unwrap();
    assert!((b.m - (b.theta_hat + b.var_term + b.theta2_term + b.delta3)).abs() < 1e-9 * b.m.abs());
    assert!(b.var_term > 0.0 && b.theta2_term > 0.0);
    assert_eq!((b.x_star, b.y_star), (x, y));
    // Equal budgets give equal normal quantiles.
    let phi = phi_inv((-deltas.d1).exp2()).unwrap();
    assert!((b.var_term / b.variance.sqrt() - phi).abs() < 1e-12 * phi);
}

#[test]
fn theta2_term_uses_ml_estimates() {
    let (mut params, decomp, ctx) = desk_context();
    let deltas = explicit(&mut params, 20.0);
    let obs = exact(&ctx);
    let (x, y) = true_xy(&ctx);
    let options = SacrificeOptions {
        tangent: TangentChoice::Fixed(0.05),
        ..Default::default()
    };
    let b = sacrifice_size(&obs, &params, &decomp, x, y, &deltas, &options).unwrap();
    let ml = ml_estimate(&obs, &decomp, &params, x, y, Default::default()).unwrap();
    let s = params.signal_plus();
    let p1 = decomp.p(s, 1);
    let expected = params.n() * ml.q_hat[1] * (1.0 - hbar_a(ml.r_hat[1], 0.05)) / obs.c[s]
        * (obs.a[s] * p1 * (1.0 - p1)).sqrt()
        * phi_inv((-deltas.d2).exp2()).unwrap();
    assert!((b.theta2_term - expected).abs() < 1e-9 * expected);
}

fn small_grid() -> GridSpec {
    GridSpec {
        nx: 9,
        ny: 6,
        rounds: 2,
        iterations: 8,
    }
}

#[test]
fn worst_case_dominates_probes() {
    let (mut params, decomp, ctx) = desk_context();
    let deltas = explicit(&mut params, 20.0);
    let obs = exact(&ctx);
    let options = SacrificeOptions::default();
    let worst = worst_case_sacrifice(&obs, &params, &decomp, &deltas, &small_grid(), &options).unwrap();
    let (xlo, xhi) = x_search_range(&params);
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..25 {
        let x = rng.random_range(xlo..=xhi);
        let y = rng.random_range(0.0..=1.0);
        let m = sacrifice_size(&obs, &params, &decomp, x, y, &deltas, &options).unwrap().m;
        assert!(worst.m >= m * (1.0 - 1e-3), "probe ({x}, {y}) gives {m} > {}", worst.m);
    }
    let (x, y) = true_xy(&ctx);
    let at_truth = sacrifice_size(&obs, &params, &decomp, x, y, &deltas, &options).unwrap().m;
    assert!(worst.m >= at_truth);
}

#[test]
fn forward_search_respects_range() {
    let (mut params, decomp, ctx) =
        honest_context(&[0.0, 0.1, 0.2, 0.5], 1.445e-2, 1e7, 10_000, 4e-7, 0.03, Variant::Forward);
    let deltas = explicit(&mut params, 20.0);
    assert_eq!(x_search_range(&params), (1.0, SQRT_2));
    let obs = exact(&ctx);
    let worst =
        worst_case_sacrifice(&obs, &params, &decomp, &deltas, &small_grid(), &SacrificeOptions::default()).unwrap();
    assert!(worst.m.is_finite());
    assert!((1.0..=SQRT_2).contains(&worst.x_star));
}

#[test]
fn m_is_monotone_in_delta() {
    let (params, decomp, ctx) = desk_context();
    let obs = exact(&ctx);
    let (x, y) = true_xy(&ctx);
    let mut last = f64::NEG_INFINITY;
    for d in [1.0, 5.0, 9.0, 15.0, 20.0] {
        let mut p = params.clone();
        p.delta = d;
        let m = sacrifice_size(&obs, &p, &decomp, x, y, &deltas_for(&p), &SacrificeOptions::default())
            .unwrap()
            .m;
        assert!(m >= last, "delta {d}: {m} < {last}");
        last = m;
    }
}

#[test]
fn phase_exponent_basics() {
    let n = 1000.0;
    assert_eq!(phase_error_exponent(&[0.0; 6], 0.0, n, n, Variant::Reverse), 0.0);
    let j = [0.0, 400.0, 0.0, 0.0, 0.0, 0.0];
    assert_eq!(phase_error_exponent(&j, 200.0, n, n, Variant::Reverse), 0.0);
    let j = [7.0, 400.0, 0.0, 3.0, 2.0, 1.0];
    let base = 400.0 * (1.0 - hbar(0.1));
    assert!((phase_error_exponent(&j, 40.0, n, n, Variant::Reverse) - (base + 6.0)).abs() < 1e-9);
    assert!((phase_error_exponent(&j, 40.0, n, n, Variant::Forward) - (base + 10.0)).abs() < 1e-9);
    assert_eq!(phase_error_exponent(&j, 40.0, 0.0, n, Variant::Reverse), 0.0);
}

fn key_setup(n_max: u64) -> (ProtocolParams, DecompositionMatrix, ObservedData) {
    let (mut params, decomp, ctx) = desk_context();
    params.n_max = n_max;
    params.delta = 5.0;
    (params, decomp, exact(&ctx))
}

#[test]
fn final_key_caps_and_aborts() {
    let grid = small_grid();
    let options = SacrificeOptions::default();
    let rate = |_e: f64| 1.0;
    let (params, decomp, obs) = key_setup(10_000);
    let full = final_key_size(&obs, &params, &decomp, &rate, crate::Basis::Plus, &grid, &options).unwrap();
    assert!(full.n_final > 0 && !full.capped);
    assert_eq!(full.n_final, full.raw.floor() as u64);

    let (params, decomp, obs) = key_setup(full.n_final / 2);
    let capped = final_key_size(&obs, &params, &decomp, &rate, crate::Basis::Plus, &grid, &options).unwrap();
    assert!(capped.capped);
    assert_eq!(capped.n_final, full.n_final / 2);

    let poor = |_e: f64| 0.0;
    let (params, decomp, obs) = key_setup(10_000);
    let err = final_key_size(&obs, &params, &decomp, &poor, crate::Basis::Plus, &grid, &options).unwrap_err();
    assert_eq!(err, crate::Error::Abort(crate::AbortReason::BelowMinimum));

    let mut short = obs.clone();
    short.e[params.i0] = params.n();
    let err = final_key_size(&short, &params, &decomp, &rate, crate::Basis::Plus, &grid, &options).unwrap_err();
    assert_eq!(err, crate::Error::Abort(crate::AbortReason::InsufficientCheckBits));
}

#[test]
fn times_basis_uses_swapped_data() {
    let (params, _, obs) = key_setup(10_000);
    let (sw, p) = swapped(&obs, &params);
    assert_eq!(sw.c[params.i0], obs.c[params.signal_plus()]);
    assert_eq!((p.p_sys, p.p_sys_plus), (params.p_sys_plus, params.p_sys));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn tangent_extension_bounds_exponent(j1 in 1.0..1e4f64, frac in 0.0..0.5f64, a in 1e-4..0.5f64) {
        // Replacing hbar by hbar_a can only lower the secure-bit credit.
        let t = frac * j1;
        let with_h = j1 * (1.0 - hbar(t / j1));
        let with_ha = j1 * (1.0 - hbar_a(t / j1, a));
        prop_assert!(with_ha <= with_h + 1e-9);
    }
}
