use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;

use super::*;
use crate::correctors::{BoundaryMode, CorrectorHierarchy};
use crate::geometry::NamedProfile;
use crate::verifier::fit_power_law;

fn grid(p: &NeckProfile, n1: usize, n2: usize) -> Arc<NeckGrid> {
    Arc::new(NeckGrid::new(p, 0.75, n1, n2).unwrap())
}

#[test]
fn zero_forcing_gives_zero() {
    let p = NamedProfile::SymQuadratic.profile(1e-2).unwrap();
    let g = grid(&p, 64, 32);
    let s = solve_w(&p, &NoForcing, &SideBc::Zero, &g).unwrap();
    assert!(s.max_velocity() <= 1e-10);
    assert!(s.q.iter().all(|v| v.abs() <= 1e-10));
    assert_eq!(global_energy(&s), 0.0);
    assert_eq!(local_energy(&s, 0.1).unwrap(), 0.0);
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let p = NamedProfile::AsymQuadratic.profile(1e-2).unwrap();
    let m = Manufactured::new(&p, 0.75);
    let f = FieldForcing::new(&m.forcing, 1e-12).unwrap();
    let mut errs = Vec::new();
    for n in [32, 64, 128, 256] {
        let g = grid(&p, n, n);
        let s = solve_w(&p, &f, &SideBc::Zero, &g).unwrap();
        assert!(s.residual <= SOLVE_TOL);
        assert!(s.max_divergence <= 1e-10, "divergence {}", s.max_divergence);
        let lhs = p.mu * global_energy(&s);
        assert!((lhs - s.forcing_work).abs() <= 0.01 * lhs);
        errs.push((2.0 / n as f64, m.max_velocity_error(&s).unwrap()));
    }
    // Measured orders: 2.128, 2.034, 2.008.
    for w in errs.windows(2) {
        let order = (w[0].1 / w[1].1).log2();
        assert!((1.8..=2.2).contains(&order), "order {order}");
    }
    let fit = fit_power_law(&errs, 4, 0.9).unwrap();
    assert!((fit.slope - 2.057).abs() < 0.01, "{fit:?}");
}

#[test]
fn manufactured_sup_grad_matches_closed_form() {
    let p = NamedProfile::SymQuadratic.profile(1e-2).unwrap();
    let m = Manufactured::new(&p, 0.75);
    let f = FieldForcing::new(&m.forcing, 1e-12).unwrap();
    let g = grid(&p, 128, 64);
    let s = solve_w(&p, &f, &SideBc::Zero, &g).unwrap();
    let region = (-0.5, 0.5);
    let got = sup_grad(&s, region).unwrap();
    let want = m.sup_grad(&g, region).unwrap();
    assert!((got / want - 1.0).abs() < 0.02, "{got} vs {want}");
}

#[test]
fn linear_field_gradient_is_exact() {
    let p = NamedProfile::AsymQuadratic.profile(1e-2).unwrap();
    let g = grid(&p, 40, 32);
    let s = DiscreteSolution::from_fn(g, |x, y| [2.0 * x - 3.0 * y, 0.5 * x + y], |x, _| x);
    let want = (4.0f64 + 9.0 + 0.25 + 1.0).sqrt();
    let got = sup_grad(&s, (-0.5, 0.5)).unwrap();
    assert!((got - want).abs() < 1e-10 * want, "{got} vs {want}");
    // Second derivatives of w vanish, the pressure gradient is (1, 0).
    let hd = sup_high_deriv(&s, 1, (-0.5, 0.5)).unwrap();
    assert!((hd - 1.0).abs() < 1e-6, "{hd}");
}

#[test]
fn energy_of_mapped_coordinate_field() {
    // w = (t, 0): |grad t|^2 = (1 + skew^2) / delta^2, whose fiber integral
    // is (1 + delta'^2 / 12) / delta on the symmetric neck.
    let p = NamedProfile::SymQuadratic.profile(1e-2).unwrap();
    let g = grid(&p, 256, 64);
    let pp = p.clone();
    let s = DiscreteSolution::from_fn(
        g,
        move |x, y| [pp.keller(x, y).unwrap_or(y.signum() * 0.5), 0.0],
        |_, _| 0.0,
    );
    let e = global_energy(&s);
    let exact = crate::quadrature::integrate(
        |x| {
            let d = p.delta(x).unwrap();
            (1.0 + 4.0 * x * x / 12.0) / d
        },
        -0.75,
        0.75,
        0.0,
        1e-12,
    )
    .unwrap()
    .0;
    assert!((e / exact - 1.0).abs() < 1e-3, "{e} vs {exact}");
    let inv_delta =
        crate::quadrature::integrate(|x| 1.0 / p.delta(x).unwrap(), -0.75, 0.75, 0.0, 1e-12)
            .unwrap()
            .0;
    assert!((e / inv_delta - 1.0).abs() < 0.02, "{e} vs {inv_delta}");
}

#[test]
fn synthetic_local_energy_slope() {
    // w = ((t^2 - 1/4) delta^2, 0) has d2 w1 = 2 t delta and
    // d1 w1 = -delta delta' / 2, so the window energy is
    // int delta^3 (1/3 + delta'^2 / 4) dx1: close to (2/3) delta^4 near
    // the neck, steeper further out.
    let p = NamedProfile::SymQuadratic.profile(1e-3).unwrap();
    let g = grid(&p, 256, 64);
    let pp = p.clone();
    let s = DiscreteSolution::from_fn(
        g,
        move |x, y| {
            let d = pp.delta(x).unwrap();
            let t = (y / d).clamp(-0.5, 0.5);
            [(t * t - 0.25) * d * d, 0.0]
        },
        |_, _| 0.0,
    );
    let closed = |z: f64| {
        let (lo, hi) = local_window(&p, z).unwrap();
        let f = |x: f64| {
            let d = p.delta(x).unwrap();
            d.powi(3) * (1.0 / 3.0 + x * x)
        };
        crate::quadrature::integrate(f, lo, hi, 0.0, 1e-12).unwrap().0
    };
    let mut measured = Vec::new();
    let mut exact = Vec::new();
    for k in 0..8 {
        let target = 3e-3 * (0.2f64 / 3e-3).powf(k as f64 / 7.0);
        let z = (target - 1e-3).sqrt();
        let d = p.delta(z).unwrap();
        let (e, c) = (local_energy(&s, z).unwrap(), closed(z));
        assert!((e / c - 1.0).abs() < 0.02, "z={z}: {e} vs {c}");
        measured.push((d, e));
        exact.push((d, c));
    }
    let fit = fit_power_law(&measured, 6, 1.0).unwrap();
    let want = fit_power_law(&exact, 6, 1.0).unwrap();
    assert!((fit.slope - want.slope).abs() < 0.2, "{fit:?} vs {want:?}");
    assert!((fit.slope - 4.0).abs() < 0.5);
}

#[test]
fn sampled_side_data_carries_flux_through() {
    // Lubrication profile with unit flux through every fiber.
    let p = NamedProfile::SymQuadratic.profile(1e-2).unwrap();
    let g = grid(&p, 64, 32);
    let pp = p.clone();
    let side = SideBc::Sampled(Arc::new(move |x, y| {
        let d = pp.delta(x).unwrap();
        let t = y / d;
        [6.0 * (0.25 - t * t) / d, 0.0]
    }));
    let s = solve_w(&p, &NoForcing, &side, &g).unwrap();
    assert!(s.max_divergence <= 1e-10);
    for a in [0, 16, 32, 64] {
        let flux: f64 = (1..=g.n2).map(|k| g.faces[a].delta * s.w1_at(a, k)).sum::<f64>() * g.dt();
        assert!((flux - 1.0).abs() < 1e-3, "face {a}: flux {flux}");
    }
    let pp = p.clone();
    let leaky = SideBc::Sampled(Arc::new(move |x, _| [1.0 + x / pp.r, 0.0]));
    assert!(matches!(solve_w(&p, &NoForcing, &leaky, &g), Err(Error::Input(_))));
}

#[test]
fn rejects_bad_input() {
    let p = NamedProfile::SymQuadratic.profile(1e-2).unwrap();
    assert!(matches!(NeckGrid::new(&p, 0.75, 64, 16), Err(Error::Input(_))));
    assert!(matches!(NeckGrid::new(&p, 1.5, 64, 32), Err(Error::Input(_))));
    let g = grid(&p, 32, 32);
    let nan = FnForcing(|x: f64, _y: f64| [if x > 0.3 { f64::NAN } else { 0.0 }, 0.0]);
    assert!(matches!(solve_w(&p, &nan, &SideBc::Zero, &g), Err(Error::Input(_))));
    let other = NamedProfile::SymQuadratic.profile(1e-3).unwrap();
    assert!(solve_w(&other, &NoForcing, &SideBc::Zero, &g).is_err());
    let s = solve_w(&p, &NoForcing, &SideBc::Zero, &g).unwrap();
    assert!(matches!(local_energy(&s, 0.5), Err(Error::Domain(_))));
    assert!(matches!(local_energy(&s, 0.6), Err(Error::Domain(_))));
    assert!(matches!(sup_high_deriv(&s, 15, (-0.5, 0.5)), Err(Error::Input(_))));
    assert!(matches!(sup_grad(&s, (0.74, 0.75)), Err(Error::Domain(_))));
}

#[test]
fn csv_export() {
    let p = NamedProfile::SymQuadratic.profile(1e-2).unwrap();
    let g = grid(&p, 16, 32);
    let s = DiscreteSolution::from_fn(g, |x, y| [x, y], |_, _| 1.0);
    let text = s.to_csv();
    assert_eq!(text.lines().count(), 16 * 32 + 1);
    assert_eq!(text.lines().next(), Some("x1,x2,w1,w2,q"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out/sol.csv");
    s.write_csv(&path).unwrap();
    assert_eq!(std::fs::read_to_string(path).unwrap(), text);
}

#[test]
fn hierarchy_forcing_keeps_gradient_bounded() {
    let mut sups = Vec::new();
    let mut energies = Vec::new();
    for eps in [1e-2, 3e-3, 1e-3] {
        let p = NamedProfile::SymQuadratic.profile(eps).unwrap();
        let h = CorrectorHierarchy::build(&p, BoundaryMode::TranslateX1, 2).unwrap();
        let f = FieldForcing::new(h.residual(2), 1e-10).unwrap();
        let g = grid(&p, DEFAULT_N1, DEFAULT_N2);
        let s = solve_w(&p, &f, &SideBc::Zero, &g).unwrap();
        assert!(s.max_divergence <= 1e-10);
        let e = global_energy(&s);
        assert!((p.mu * e - s.forcing_work).abs() <= 0.01 * e);
        sups.push(sup_grad(&s, (-p.r, p.r)).unwrap());
        energies.push(e);
    }
    let ratio = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);
    // Measured: sup |grad w| 0.158 .. 0.171, energy 4.9e-4 .. 5.5e-4.
    assert!(ratio(&sups) <= 3.0);
    assert!(ratio(&energies) <= 2.0);
    assert!((sups[2] - 0.1711).abs() < 2e-3, "{sups:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn constant_forcing_solves_are_balanced(f1 in -5.0f64..5.0, f2 in -5.0f64..5.0, eps in 1e-3f64..1e-1) {
        let p = NamedProfile::AsymQuadratic.profile(eps).unwrap();
        let g = grid(&p, 24, 32);
        let s = solve_w(&p, &FnForcing(move |_, _| [f1, f2]), &SideBc::Zero, &g).unwrap();
        prop_assert!(s.max_divergence <= 1e-10 * (1.0 + s.max_velocity()));
        let e = p.mu * global_energy(&s);
        prop_assert!((e - s.forcing_work).abs() <= 0.01 * e + 1e-14);
        let mean: f64 = (0..g.n1).flat_map(|i| (0..g.n2).map(move |j| (i, j)))
            .map(|(i, j)| g.centers[i].area() * s.q[i * g.n2 + j]).sum();
        prop_assert!(mean.abs() <= 1e-10 * (1.0 + s.q.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    }
}

#[test]
fn residual_response_over_eps_sweep() {
    let p = NamedProfile::SymQuadratic.profile(1e-2).unwrap();
    let r = residual_response(&p, &[1e-2, 3e-3, 1e-3], (256, 64), 1e-10).unwrap();
    assert_relative_eq!(r.samples[0].sup_grad, 0.15772, max_relative = 1e-3);
    assert_relative_eq!(r.samples[2].energy, 5.4956e-4, max_relative = 1e-3);
    assert!(r.sup_grad_spread() <= 3.0 && r.energy_spread() <= 2.0);
    for s in &r.samples {
        assert!(s.max_divergence <= 1e-10 && s.identity_gap <= 1e-2, "{s:?}");
    }
    assert!((r.corrector_fit.slope + 1.0).abs() <= 0.1, "{:?}", r.corrector_fit);
    assert!(r.local_fit.slope >= 3.5, "{:?}", r.local_fit);
    assert!(r.high_deriv_fit.slope >= -0.5, "{:?}", r.high_deriv_fit);
    assert!(residual_response(&p, &[1e-2, 1e-3], (256, 64), 1e-10).is_err());
}

#[test]
fn manufactured_convergence_study() {
    let p = NamedProfile::SymQuartic.profile(1e-2).unwrap();
    let c = manufactured_convergence(&p, &[32, 64, 128]).unwrap();
    assert_relative_eq!(c.orders[0], 2.0843, epsilon = 1e-3);
    assert_relative_eq!(c.orders[1], 2.0221, epsilon = 1e-3);
    assert!(c.max_divergence <= 1e-10 && c.identity_gap <= 1e-2 && c.zero_solution <= 1e-10);
}
