use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::ProfileFn;
use crate::quadrature;

fn walls() -> (Coeff, Coeff) {
    let h1 = Arc::new(ProfileFn::poly([0.0, 0.0, 1.0]).unwrap());
    let h2 = Arc::new(ProfileFn::poly([0.0, 0.0, 0.5]).unwrap());
    (Coeff::profile(1, h1, 6, 0), Coeff::profile(2, h2, 6, 0))
}

fn gap(eps: f64) -> Coeff {
    let (h1, h2) = walls();
    Coeff::sum([Coeff::constant(eps), h1, h2])
}

const DOM: (f64, f64) = (-1.0, 1.0);

#[test]
fn constant_evaluates_to_itself() {
    assert_eq!(Coeff::constant(3.5).eval(0.123, 1e-10).unwrap(), 3.5);
}

#[test]
fn integral_of_constant_is_linear() {
    let a = Coeff::antideriv(Lower::At(0.0), Coeff::constant(2.0), DOM).unwrap();
    assert!((a.eval(0.3, 1e-10).unwrap() - 0.6).abs() < 1e-13);
}

#[test]
fn integral_of_wall_slope() {
    let (h1, _) = walls();
    let a = Coeff::antideriv(Lower::At(0.0), h1.diff(), DOM).unwrap();
    assert!((a.eval(0.2, 1e-10).unwrap() - 0.04).abs() < 1e-13);
}

#[test]
fn derivative_of_square() {
    let x = Coeff::x1();
    let d = (&x * &x).diff();
    assert!((d.eval(0.3, 1e-10).unwrap() - 0.6).abs() < 1e-15);
}

#[test]
fn local_rules_fold() {
    let x = Coeff::x1();
    assert!((&x * 0.0).is_zero());
    assert_eq!(&x * 1.0, x);
    assert_eq!(&x + 0.0, x);
    assert!((&x - &x).is_zero());
    let d = gap(0.1);
    assert_eq!((&d * &d) * d.powi(-2), Coeff::one());
    assert!((&d - &d).is_zero());
    assert_eq!(Coeff::constant(2.0) * Coeff::constant(3.0), Coeff::constant(6.0));
    // Like terms collect.
    assert_eq!(&(&x * 2.0) + &(&x * 3.0), &x * 5.0);
}

#[test]
fn hash_consing_shares_equal_nodes() {
    let d1 = gap(1e-3);
    let d2 = gap(1e-3);
    assert_eq!(d1, d2);
    assert_eq!(d1.structural_hash(), d2.structural_hash());
    assert_ne!(gap(1e-3), gap(2e-3));
}

#[test]
fn nonvanishing_certificates() {
    let d = gap(1e-3);
    assert!(d.positive());
    assert!(d.powi(-3).nonvanishing());
    assert!(Coeff::quotient(&Coeff::x1(), &d.powi(2)).is_ok());
    assert!(Coeff::x1().try_powi(-1).is_err());
    let (h1, h2) = walls();
    assert!(Coeff::quotient(&Coeff::one(), &(&h1 - &h2)).is_err());
    // Without the positive constant the gap can vanish at the origin.
    assert!((&h1 + &h2).try_powi(-1).is_err());
}

#[test]
fn fundamental_theorem_against_gauss_kronrod() {
    let eps = 1e-4;
    let d = gap(eps);
    let (h1, h2) = walls();
    let g = (&h1 - &h2) * d.powi(-3);
    let a = Coeff::antideriv(Lower::At(0.0), g.clone(), (-1.0, 1.0)).unwrap();
    assert_eq!(a.diff(), g);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let x: f64 = rng.gen_range(-0.5..0.5);
        let table = a.eval(x, 1e-10).unwrap();
        let gf = |y: f64| 0.5 * y * y / (eps + 1.5 * y * y).powi(3);
        let (oracle, _) = quadrature::integrate(gf, 0.0, x, 1e-14, 1e-13).unwrap();
        let scale = oracle.abs().max(1e-300);
        assert!(
            (table - oracle).abs() <= 1e-8 * scale,
            "x={x}: table {table} vs oracle {oracle}"
        );
    }
}

#[test]
fn quotient_derivative_matches_central_difference() {
    let d = gap(1e-3);
    let (h1, _) = walls();
    let c = Coeff::quotient(&h1, &d).unwrap();
    let dc = c.diff();
    let tape = Tape::compile(&[c.clone(), dc.clone(), d.clone()]).bind(1e-12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let x: f64 = rng.gen_range(-0.5..0.5);
        let v = tape.eval(x).unwrap();
        let h = 1e-3 * v[2];
        let f = |t: f64| tape.eval(t).unwrap()[0];
        let fd = (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h);
        let rel = (fd - v[1]).abs() / v[1].abs().max(1e-6);
        assert!(rel < 1e-6, "x={x}: {} vs {fd}", v[1]);
    }
}

#[test]
fn nested_integral_matches_oracle() {
    let eps = 1e-3;
    let d = gap(eps);
    let inner = Coeff::antideriv(Lower::At(0.0), d.powi(-2), DOM).unwrap();
    let outer = Coeff::antideriv(Lower::ChartEdge(0.5), &inner * &d.powi(-1), DOM).unwrap();
    assert_eq!(outer.integral_depth(), 2);
    let dd = |y: f64| eps + 1.5 * y * y;
    let inner_f = |y: f64| {
        quadrature::integrate(|s| dd(s).powi(-2), 0.0, y, 1e-15, 1e-13).unwrap().0
    };
    for x in [-0.3, 0.0, 0.05, 0.49] {
        let (oracle, _) =
            quadrature::integrate(|y| inner_f(y) / dd(y), 0.5, x, 1e-14, 1e-12).unwrap();
        let v = outer.eval(x, 1e-10).unwrap();
        assert!((v - oracle).abs() <= 1e-8 * oracle.abs(), "{v} vs {oracle}");
    }
}

#[test]
fn capability_error_above_cap() {
    let h = Arc::new(ProfileFn::poly([0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
    let c = Coeff::profile(1, h.clone(), 6, 0);
    assert!(c.diff_n(6).eval(0.1, 1e-10).is_ok());
    let err = c.diff_n(7).eval(0.1, 1e-10).unwrap_err();
    assert_eq!(err, Error::Capability { order: 7, cap: 6 });
    // Orders above the degree fold to zero and are always allowed.
    let q = Coeff::profile(1, Arc::new(ProfileFn::half_square()), 6, 0);
    assert!(q.diff_n(9).is_zero());
}

#[test]
fn evaluation_outside_domain_fails() {
    let a = Coeff::antideriv(Lower::At(0.0), Coeff::x1(), (-1.0, 1.0)).unwrap();
    assert!(matches!(a.eval(1.5, 1e-10), Err(Error::Domain(_))));
    assert!(Coeff::antideriv(Lower::At(2.0), Coeff::x1(), (-1.0, 1.0)).is_err());
}

#[test]
fn sexpr_dump_is_stable() {
    let d = gap(0.5);
    let x = Coeff::x1();
    let c = Coeff::antideriv(Lower::ChartEdge(0.5), &x * &d.powi(-3), DOM).unwrap() * 2.0;
    let s = c.to_sexpr();
    assert!(s.starts_with("(* 2 (int R "), "{s}");
    assert!(s.contains("(^ (+ "), "{s}");
    assert!(s.contains("(h1 0)") && s.contains("(h2 0)") && s.contains("0.5"), "{s}");
    // Same construction, same text.
    let c2 = Coeff::antideriv(Lower::ChartEdge(0.5), &x * &gap(0.5).powi(-3), DOM).unwrap() * 2.0;
    assert_eq!(s, c2.to_sexpr());
}

#[test]
fn evaluation_is_bit_deterministic() {
    let d = gap(1e-4);
    let (h1, h2) = walls();
    let c = Coeff::antideriv(Lower::At(0.0), (&h1 - &h2) * d.powi(-3), DOM).unwrap();
    let a = c.eval(0.137, 1e-10).unwrap();
    let b = c.eval(0.137, 1e-10).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn concurrent_construction_and_evaluation() {
    let results: Vec<u64> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..8)
            .map(|_| {
                s.spawn(|| {
                    let d = gap(3e-4);
                    let c = Coeff::antideriv(Lower::At(0.0), d.powi(-2), DOM).unwrap();
                    c.eval(0.2, 1e-10).unwrap().to_bits()
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(results.windows(2).all(|w| w[0] == w[1]));
}

fn arb_coeff() -> impl Strategy<Value = Coeff> {
    let leaf = prop_oneof![
        (-3.0f64..3.0).prop_map(Coeff::constant),
        Just(Coeff::x1()),
        Just(walls().0),
        Just(walls().1),
        Just(gap(0.1)),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 1..4).prop_map(Coeff::sum),
            prop::collection::vec(inner.clone(), 1..3).prop_map(Coeff::prod),
            (inner.clone(), 1i32..3).prop_map(|(c, n)| c.powi(n)),
            (inner.clone(), 1i32..3).prop_map(|(c, n)| &c * &gap(0.1).powi(-n)),
            inner.prop_map(|c| Coeff::antideriv(Lower::At(0.0), c, DOM).unwrap()),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn derivative_matches_finite_difference(c in arb_coeff(), x in -0.5f64..0.5) {
        let tape = Tape::compile(&[c.clone(), c.diff()]).bind(1e-12).unwrap();
        let h = 1e-4;
        let f = |t: f64| tape.eval(t).unwrap();
        let fd = (-f(x + 2.0 * h)[0] + 8.0 * f(x + h)[0] - 8.0 * f(x - h)[0] + f(x - 2.0 * h)[0])
            / (12.0 * h);
        let exact = f(x)[1];
        let scale = exact.abs().max(f(x)[0].abs()).max(1.0);
        prop_assert!((fd - exact).abs() <= 1e-5 * scale, "{fd} vs {exact} for {c:?}");
    }

    #[test]
    fn simplification_preserves_values(
        a in arb_coeff(), b in arb_coeff(), x in -0.5f64..0.5
    ) {
        let va = a.eval(x, 1e-12).unwrap();
        let vb = b.eval(x, 1e-12).unwrap();
        let s = (&a + &b).eval(x, 1e-12).unwrap();
        let p = (&a * &b).eval(x, 1e-12).unwrap();
        let d = (&a - &a).eval(x, 1e-12).unwrap();
        let scale = 1.0 + va.abs() + vb.abs();
        prop_assert!((s - (va + vb)).abs() <= 1e-10 * scale);
        prop_assert!((p - va * vb).abs() <= 1e-10 * scale * scale);
        prop_assert_eq!(d, 0.0);
    }
}

#[test]
fn dag_dump_prints_shared_nodes_once() {
    // Each step reuses the previous node twice: the tree form doubles per
    // step while the DAG grows by one node.
    let mut c = gap(0.5).powi(-1);
    for k in 0..40 {
        c = &c * &c + &Coeff::constant(k as f64 + 1.0) * &c;
    }
    let mut dag = DagDump::new();
    let root = dag.add(&c);
    assert_eq!(root, dag.add(&c));
    let text = dag.bindings();
    assert!(text.len() < 40 * 2_000, "{} bytes", text.len());
    assert_eq!(text.lines().count(), root[1..].parse::<usize>().unwrap() + 1);
    assert_eq!(text.matches("(h1 0)").count(), 1);

    // Small expressions read the same either way, up to the bindings.
    let x = Coeff::x1();
    let small = &x * &gap(0.5);
    let mut dag = DagDump::new();
    let r = dag.add(&small);
    assert!(r.starts_with('%'));
    assert!(dag.bindings().contains("(h1 0)") && dag.bindings().contains("(h2 0)"));
}
