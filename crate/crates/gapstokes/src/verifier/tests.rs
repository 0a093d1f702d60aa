use super::*;
use super::structure::same_on_identical_walls;
use crate::geometry::NamedProfile;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn deltas(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[test]
fn exact_square_law() {
    let s: Vec<_> = deltas(10, 1e-4, 1e-1).into_iter().map(|d| (d, d * d)).collect();
    let f = fit_decay_order(&s).unwrap();
    assert!((f.slope - 2.0).abs() < 1e-12);
    assert!((f.r2 - 1.0).abs() < 1e-12);
}

#[test]
fn noisy_inverse_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s: Vec<_> = deltas(20, 1e-4, 1e-1)
        .into_iter()
        .map(|d| (d, 3.0 * d.powf(-1.5) * (1.0 + 0.01 * rng.gen_range(-1.0..1.0))))
        .collect();
    let f = fit_decay_order(&s).unwrap();
    assert!((f.slope + 1.5).abs() < 0.05, "{f:?}");
}

#[test]
fn constant_samples_have_zero_slope() {
    let s: Vec<_> = deltas(8, 1e-3, 1.0).into_iter().map(|d| (d, 4.2)).collect();
    let f = fit_decay_order(&s).unwrap();
    assert!(f.slope.abs() < 1e-12);
    assert_eq!(f.r2, 1.0);
}

#[test]
fn fit_preconditions() {
    let short: Vec<_> = deltas(5, 1e-4, 1e-1).into_iter().map(|d| (d, d)).collect();
    assert!(matches!(fit_decay_order(&short), Err(Error::Input(_))));
    let narrow: Vec<_> = deltas(10, 1e-2, 1e-1).into_iter().map(|d| (d, d)).collect();
    let err = fit_decay_order(&narrow).unwrap_err();
    assert!(err.to_string().contains("insufficient span"));
    let mut bad: Vec<_> = deltas(10, 1e-4, 1e-1).into_iter().map(|d| (d, d)).collect();
    bad[3].1 = 0.0;
    assert!(matches!(fit_decay_order(&bad), Err(Error::Input(_))));
}

#[test]
fn window_checks() {
    let p = NamedProfile::SymQuadratic.profile(1e-2).unwrap();
    assert!(Window::standard(&p).nodes(&p).is_ok());
    let tight = Window { c: 2.0, upper: 0.15, points: 24 };
    assert!(tight.nodes(&p).unwrap_err().to_string().contains("window too small"));
    let low_c = Window { c: 1.0, ..Window::standard(&p) };
    assert!(low_c.nodes(&p).is_err());
}

#[test]
fn tensor_norm_of_quadratic() {
    // u = x1^2 x2: grad^2 u has entries d11 = 2 x2, d12 = 2 x1, d22 = 0,
    // so |grad^2 u|^2 = 4 x2^2 + 2 * 4 x1^2.
    let x = crate::coeff::Coeff::x1();
    let u = PolyField::monomial(&x * &x, 1);
    let t = TensorSampler::new(&[&u], 2).unwrap();
    let fv = t.fiber(0.3).unwrap();
    let got = t.norm_sq(&fv, 2, 0.5, &[]);
    assert!((got - (4.0 * 0.25 + 8.0 * 0.09)).abs() < 1e-14);
    assert!((t.norm_sq(&fv, 0, 0.5, &[0.045]) - 0.0).abs() < 1e-14);
}

fn hierarchy(named: NamedProfile, mode: BoundaryMode, eps: f64, levels: usize) -> CorrectorHierarchy {
    CorrectorHierarchy::build(&named.profile(eps).unwrap(), mode, levels).unwrap()
}

#[test]
fn residual_orders_translate_x1() {
    let h = hierarchy(NamedProfile::SymQuadratic, BoundaryMode::TranslateX1, 1e-4, 3);
    let w = Window::standard(h.profile());
    let m1 = residual_order(&h, 0, 1, &w).unwrap();
    assert!(m1.pass && m1.fit.slope >= -0.25, "{m1:?}");
    // The first derivative of the level-3 residual is bounded by delta^0;
    // the measured slope sits near 0.45.
    let m2 = residual_order(&h, 1, 2, &w).unwrap();
    assert_eq!(m2.predicted, 0.0);
    assert!(m2.pass && (m2.fit.slope - 0.445).abs() < 0.05, "{m2:?}");
}

#[test]
fn residual_order_translate_x2() {
    let h = hierarchy(NamedProfile::SymQuadratic, BoundaryMode::TranslateX2, 1e-4, 2);
    let c = residual_order(&h, 0, 1, &Window::standard(h.profile())).unwrap();
    assert!(c.pass && c.fit.slope >= -0.25, "{c:?}");
}

#[test]
fn residual_order_preconditions() {
    let h = hierarchy(NamedProfile::SymQuadratic, BoundaryMode::TranslateX1, 1e-4, 2);
    let w = Window::standard(h.profile());
    assert!(residual_order(&h, 2, 1, &w).is_err());
    assert!(residual_order(&h, 0, 2, &w).is_err());
    let coarse = hierarchy(NamedProfile::SymQuadratic, BoundaryMode::TranslateX1, 1e-2, 2);
    let tight = Window { c: 2.0, upper: 0.15, points: 24 };
    assert!(residual_order(&coarse, 0, 1, &tight).is_err());
}

#[test]
fn blowup_slopes() {
    let p = NamedProfile::SymQuadratic.profile(1e-2).unwrap();
    let eps = DEFAULT_EPS_SWEEP;
    let f0 = corrector_blowup_order(&p, &eps, (0, 1), 0, 0.5).unwrap();
    assert!((f0.slope + 1.0).abs() < 0.01, "{f0:?}");
    for m in 1..=3u32 {
        let f = corrector_blowup_order(&p, &eps, (m, 1), 0, 0.5).unwrap();
        assert!((f.slope - blowup_prediction(m)).abs() < BLOWUP_SLOPE_TOL, "m={m}: {f:?}");
    }
}

#[test]
fn blowup_derivative_matches_closed_form() {
    // d1 d2 of the first component is d1(1/delta) = -delta'/delta^2.
    let p = NamedProfile::SymQuadratic.profile(1e-3).unwrap();
    let h = CorrectorHierarchy::build_symmetric_kernel(&p, 1).unwrap();
    let f = h.levels[0].v.u1.mixed(1, 1);
    let ev = FieldEvaluator::new(&[&f], EVAL_TOL).unwrap();
    for x1 in [0.01, 0.05, 0.2] {
        let d = p.delta(x1).unwrap();
        let want = -2.0 * x1 / (d * d);
        let got = ev.eval(x1, 0.0).unwrap()[0];
        assert!((got - want).abs() <= 1e-12 * want.abs(), "{got} vs {want}");
    }
}

#[test]
fn blowup_preconditions() {
    let asym = NamedProfile::AsymQuadratic.profile(1e-2).unwrap();
    assert!(corrector_blowup_order(&asym, &DEFAULT_EPS_SWEEP, (0, 1), 0, 0.5).is_err());
    let sym = NamedProfile::SymQuadratic.profile(1e-2).unwrap();
    assert!(matches!(
        corrector_blowup_order(&sym, &DEFAULT_EPS_SWEEP, (0, 1), 0, 10.0),
        Err(Error::Domain(_))
    ));
    assert!(corrector_blowup_order(&sym, &[1e-2, 1e-3], (0, 1), 0, 0.5).is_err());
}

#[test]
fn envelope_exponents() {
    assert_eq!(envelope_delta_exponent(1, false), -2.0);
    assert_eq!(envelope_delta_exponent(1, true), -1.5);
    assert_eq!(envelope_eps_exponent(0, true), -0.5);
    let w = envelope_weights(1e-4, true);
    assert!((w[0] - 1e-2).abs() < 1e-16 && (w[1] - 1e-6).abs() < 1e-18 && w[2] == 0.0);
}

const ENV_EPS: [f64; 5] = [1e-4, 3e-5, 1e-5, 3e-6, 1e-6];

#[test]
fn symmetric_envelope_slopes() {
    let p = NamedProfile::SymQuadratic.profile(1e-4).unwrap();
    let fits = envelope_fits(&p, &[0, 1], &ENV_EPS, &EnvelopeSettings::standard()).unwrap();
    let m0 = &fits[0];
    assert!((m0.eps_fit.slope + 0.5).abs() < 0.05, "{m0:?}");
    let m1 = &fits[1];
    assert!((m1.delta_fit.slope + 1.5).abs() < 0.1, "{m1:?}");
}

#[test]
fn general_envelope_slope() {
    let p = NamedProfile::AsymQuadratic.profile(1e-4).unwrap();
    let fits = envelope_fits(&p, &[1], &ENV_EPS, &EnvelopeSettings::standard()).unwrap();
    assert!((fits[0].delta_fit.slope + 2.0).abs() < 0.1, "{:?}", fits[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fit_is_exact_on_power_laws(k in -4.0f64..4.0, c in 0.01f64..100.0, lo in -6.0f64..-3.0) {
        let s: Vec<_> = deltas(9, 10f64.powf(lo), 10f64.powf(lo + 2.0))
            .into_iter().map(|d| (d, c * d.powf(k))).collect();
        let f = fit_decay_order(&s).unwrap();
        prop_assert!((f.slope - k).abs() < 1e-10);
        prop_assert!((f.intercept - c.ln()).abs() < 1e-8);
    }

    #[test]
    fn slope_ignores_scaling_and_order(seed in 0u64..1000, scale in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s: Vec<_> = deltas(12, 1e-4, 1e-1)
            .into_iter().map(|d| (d, d.powf(0.7) * rng.gen_range(0.5..2.0))).collect();
        let a = fit_decay_order(&s).unwrap();
        s.reverse();
        for p in s.iter_mut() { p.1 *= scale; }
        let b = fit_decay_order(&s).unwrap();
        prop_assert!((a.slope - b.slope).abs() < 1e-10);
        prop_assert!(a.r2 <= 1.0 + 1e-12 && a.r2 >= 0.0);
    }
}

#[test]
fn constructions_agree_on_identical_walls() {
    let p = NamedProfile::SymQuadratic.profile(1e-3).unwrap();
    let c = cross_construction(&p, 3).unwrap();
    assert!(c.level1_identical && c.pass(), "{c:?}");
    assert!(c.level1_gap <= 1e-15);
    for (l, r) in &c.residual_ratios {
        assert!((r - 1.0).abs() < 1e-10, "level {l}: {r}");
    }
    let h = hierarchy(NamedProfile::SymQuadratic, BoundaryMode::TranslateX1, 1e-3, 2);
    let (a, b) = (&h.levels[0].v, &h.levels[1].v);
    assert!(same_on_identical_walls(&a.u1, &a.u1).unwrap());
    assert!(!same_on_identical_walls(&a.u1, &b.u1).unwrap());
    assert!(!same_on_identical_walls(&a.u1, &a.u2).unwrap());
}
