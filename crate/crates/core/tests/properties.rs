mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shrinking_gaps::evolution::{fit_exponent, floquet_operator, linear_slope, substep_propagators, EnergyTrace, FitMethod};
use shrinking_gaps::linalg::{self, C64};
use shrinking_gaps::models::TimeReparam;
use shrinking_gaps::operator_classes::{
    check_product_rule, class_norm, diag_part, offdiag_part, sylvester_solve, BlockOperator, ClassParams, ProductRule,
    SylvesterOptions,
};
use shrinking_gaps::spectral_basis::{certify_gaps, MultiplicityRule, SpectralBasis};
use shrinking_gaps::time_periodic::TimePeriodicOperator;

fn basis(alpha: f64, n: usize, howland: bool) -> Arc<SpectralBasis> {
    let rule = if howland { MultiplicityRule::Howland } else { MultiplicityRule::Simple };
    Arc::new(SpectralBasis::power(alpha, n, rule).unwrap())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn trace_of(times: Vec<f64>, values: Vec<f64>) -> EnergyTrace {
    let n = times.len();
    EnergyTrace {
        times,
        values,
        norm_drift: vec![0.0; n],
        psi_norm_drift: 0.0,
        unitarity_drift: 0.0,
        period: 1.0,
        steps_per_period: 1,
        config_ref: String::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn diagonal_and_offdiagonal_parts_recombine(seed in any::<u64>(), n in 2usize..12, howland in any::<bool>()) {
        let b = basis(0.5, n, howland);
        let a = common::random_in_class(&b, 3.0, 0.25, (seed % 3) as u8, &mut rng(seed));
        let sum = diag_part(&a).add(&offdiag_part(&a)).unwrap();
        prop_assert_eq!(sum.data(), a.data());
        prop_assert!(diag_part(&a).is_diagonal());
    }

    #[test]
    fn class_norm_is_a_norm(seed in any::<u64>(), p in 2.5f64..6.0, delta in 0.0f64..0.5, c in -3.0f64..3.0) {
        let b = basis(0.5, 10, true);
        let mut r = rng(seed);
        let x = common::random_in_class(&b, p, delta, 1, &mut r);
        let y = common::random_in_class(&b, p, delta, 2, &mut r);
        let params = ClassParams::new(p, delta).unwrap();
        let nx = class_norm(&x, params).unwrap();
        let ny = class_norm(&y, params).unwrap();
        let nxy = class_norm(&x.add(&y).unwrap(), params).unwrap();
        prop_assert!(nxy <= (nx + ny) * (1.0 + 1e-12));
        let scaled = class_norm(&x.scale(C64::new(c, 0.0)), params).unwrap();
        prop_assert!((scaled - c.abs() * nx).abs() <= 1e-12 * nx.max(1.0));
    }

    #[test]
    fn class_norm_is_monotone_in_both_indices(seed in any::<u64>(), p in 2.5f64..5.0, dp in 0.0f64..2.0,
                                              delta in 0.0f64..0.3, dd in 0.0f64..0.3) {
        let b = basis(2.0 / 3.0, 12, false);
        let a = common::random_in_class(&b, p + dp, delta + dd, (seed % 3) as u8, &mut rng(seed));
        let low = class_norm(&a, ClassParams::new(p, delta).unwrap()).unwrap();
        let high = class_norm(&a, ClassParams::new(p + dp, delta + dd).unwrap()).unwrap();
        prop_assert!(low <= high * (1.0 + 1e-12));
    }

    #[test]
    fn product_rules_hold_for_fractional_p(seed in any::<u64>(), p in 3.0f64..5.5, i in 1u32..3, rule in 0usize..4) {
        let b = basis(0.5, 10, true);
        let gamma = b.gamma();
        let rule = [ProductRule::SameClass, ProductRule::Mixed, ProductRule::Raised, ProductRule::RaisedTight][rule];
        let (ca, cb, _, _) = rule.classes(p, i, gamma).unwrap();
        let mut r = rng(seed);
        let x = common::random_in_class(&b, ca.p, ca.delta, (seed % 3) as u8, &mut r);
        let y = common::random_in_class(&b, cb.p, cb.delta, ((seed / 3) % 3) as u8, &mut r);
        let check = check_product_rule(rule, &x, &y, p, i, gamma, false).unwrap();
        prop_assert!(check.passed(), "{:?}", check);
    }

    #[test]
    fn sylvester_residual_vanishes(seed in any::<u64>(), n in 2usize..14, howland in any::<bool>()) {
        let b = basis(0.5, n, howland);
        let cert = certify_gaps(&b).unwrap();
        let mut r = rng(seed);
        let g = common::random_diagonal(&b, cert.c_h / 200.0, &mut r);
        let v = common::random_hermitian_in_class(&b, 3.0, 0.25, 0, &mut r);
        let sol = sylvester_solve(&g, &v, Some(&cert), SylvesterOptions::default()).unwrap();
        let hg = BlockOperator::hamiltonian(&b).add(&g).unwrap();
        let lhs = linalg::commutator(hg.data(), sol.w.data());
        let target = offdiag_part(&v);
        let err = linalg::max_abs(&(lhs - target.data()).view());
        prop_assert!(err <= 1e-10 * linalg::max_abs(&v.data().view()).max(1.0), "residual {}", err);
        // Hermitian V gives an anti-Hermitian W.
        let skew = sol.w.data() + &linalg::dagger(&sol.w.data().view());
        prop_assert!(linalg::max_abs(&skew.view()) < 1e-10);
    }

    #[test]
    fn reparametrization_inverts(a1 in -0.6f64..0.6, b1 in -0.3f64..0.3, lambda in 0.5f64..8.0, s in 0.0f64..200.0) {
        let r = TimeReparam { lambda, a0: 1.0, a_cos: vec![a1], a_sin: vec![b1], period: 2.0 * PI };
        let t = r.b_inv(s);
        prop_assert!((r.b(t) - s).abs() <= 1e-10 * s.max(1.0));
        prop_assert!(r.b(t + 1e-3) > r.b(t));
        prop_assert!((r.b(t + r.period) - r.b(t) - lambda * r.kappa()).abs() <= 1e-9 * s.max(1.0));
    }

    #[test]
    fn fit_recovers_pure_powers(sigma in 0.0f64..1.5, c in 0.1f64..10.0) {
        let times: Vec<f64> = (0..=400).map(|k| k as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| c * (1.0 + t).powf(sigma)).collect();
        let tr = trace_of(times, values);
        let fit = fit_exponent(&tr, 0.5, FitMethod::TailLsq).unwrap();
        // (1+t)^σ over t ∈ [200, 400] has local log slope within σ/200 of σ.
        prop_assert!((fit.sigma_fit - sigma).abs() <= sigma / 200.0 + 1e-9, "{} vs {}", fit.sigma_fit, sigma);
        let env = fit_exponent(&tr, 0.5, FitMethod::EnvelopeLsq).unwrap();
        prop_assert!((env.sigma_fit - fit.sigma_fit).abs() <= 1e-12);
    }

    #[test]
    fn linear_slope_of_affine_trace(a in -5.0f64..5.0, m in -2.0f64..2.0) {
        let times: Vec<f64> = (0..200).map(|k| k as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| a + m * t).collect();
        let s = linear_slope(&trace_of(times, values), 0.9);
        prop_assert!((s - m).abs() <= 1e-10 * m.abs().max(1.0));
    }

    #[test]
    fn floquet_operator_is_unitary(seed in any::<u64>(), n in 2usize..10, amp in 0.0f64..2.0) {
        let b = basis(0.5, n, true);
        let c = common::random_in_class(&b, 3.0, 0.0, 0, &mut rng(seed));
        let c = c.scale(C64::new(amp / c.frobenius().max(1e-300), 0.0));
        let v = TimePeriodicOperator::cosine(&c.add(&c.dagger()).unwrap(), 1, 2.0 * PI).unwrap();
        let steps = substep_propagators(&b, &v, 16).unwrap();
        let (phi, drift) = floquet_operator(&steps, 1).unwrap();
        prop_assert!(linalg::unitarity_defect(&phi) < 1e-12);
        prop_assert!(drift < 1e-12);
    }
}
