use oscbath_core::dyson::{admissibility, AtomicMeasure, BoundDims, SimplexQuadrature, SimplexRule, verify_sine_product_bound};
use oscbath_core::equilibrium::{omega_interacting, three_point, ThermalState};
use oscbath_core::formfactor::{FormFactor, ModelParams};
use oscbath_core::quad::QuadOpts;
use oscbath_core::radial::{oscillatory_integral, pv_integral, GridSpec, RadialFn, RadialGrid};
use oscbath_core::scattering::ScatteringOps;
use oscbath_core::spectral::{model_grid, Continuation, SpectralData};
use oscbath_core::symplectic::{symplectic_form, v_map, w_t, TestFunction};
use oscbath_core::C64;
use proptest::prelude::*;
use std::sync::{Arc, OnceLock};

fn ops() -> &'static ScatteringOps {
    static OPS: OnceLock<ScatteringOps> = OnceLock::new();
    OPS.get_or_init(|| {
        let ff = FormFactor::gaussian(1.0, 1.0).unwrap();
        let p = ModelParams::new(&ff, 1.0, 0.1).unwrap();
        let grid = model_grid(&ff, &p, GridSpec { n: 1000, r_max: 30.0 }).unwrap();
        ScatteringOps::build(Arc::new(SpectralData::build(&ff, p, grid).unwrap())).unwrap()
    })
}

/// c + (a r^k e^{-b r^2}) with small random coefficients.
fn element(c: (f64, f64), a: (f64, f64), b: f64, k: i32) -> TestFunction {
    let grid = ops().grid().clone();
    TestFunction::new(C64::new(c.0, c.1), RadialFn::from_fn(grid, |r| C64::new(a.0, a.1) * r.powi(k) * (-b * r * r).exp()).unwrap())
}

fn coef() -> impl Strategy<Value = (f64, f64)> {
    (-1.0..1.0f64, -1.0..1.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn form_factor_is_even_and_real_on_the_axis(sigma in 0.3..3.0f64, amp in 0.1..4.0f64, x in -8.0..8.0f64, y in -2.0..2.0f64) {
        let ff = FormFactor::gaussian(sigma, amp).unwrap();
        prop_assert_eq!(ff.eval(x), ff.eval(-x));
        let z = C64::new(x, y);
        let a = ff.eval_complex(z).unwrap();
        let b = ff.eval_complex(z.conj()).unwrap();
        prop_assert!((a - b.conj()).norm() <= 1e-14 * a.norm().max(1e-300));
        prop_assert!((ff.eval_complex(-z).unwrap() - a).norm() <= 1e-14 * a.norm().max(1e-300));
    }

    #[test]
    fn principal_value_is_linear(s in 0.2..3.0f64, a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let h1 = |r: f64| (-r * r).exp();
        let h2 = |r: f64| r / (1.0 + r * r);
        let opts = QuadOpts::rel(1e-12);
        let p1 = pv_integral(h1, s, 8.0, opts).unwrap();
        let p2 = pv_integral(h2, s, 8.0, opts).unwrap();
        let p12 = pv_integral(|r| a * h1(r) + b * h2(r), s, 8.0, opts).unwrap();
        prop_assert!((p12 - a * p1 - b * p2).abs() < 1e-10 * (1.0 + p1.abs() + p2.abs()));
    }

    #[test]
    fn contour_shift_does_not_change_oscillatory_integrals(t in 0.1..12.0f64, k1 in 0.05..0.9f64, k2 in 0.05..0.9f64) {
        let h = |z: C64| (-z * z / 2.0).exp() * (1.0 + z * z);
        let a = oscillatory_integral(h, t, k1, 12.0, &[]).unwrap();
        let b = oscillatory_integral(h, t, k2, 12.0, &[]).unwrap();
        prop_assert!((a.value - b.value).norm() < 1e-10, "{} {}", a.value, b.value);
        prop_assert!(a.value.norm() <= a.bound * (1.0 + 1e-12));
        // closed form sqrt(2 pi) e^{-t^2/2} (2 - t^2)
        let exact = (2.0 * std::f64::consts::PI).sqrt() * (-t * t / 2.0).exp() * (2.0 - t * t);
        prop_assert!((a.value - exact).norm() < 1e-10);
    }

    #[test]
    fn inner_product_is_hermitian(a in coef(), b in 0.2..2.0f64, c in coef(), d in 0.2..2.0f64) {
        let grid = Arc::new(RadialGrid::graded(400, 20.0, 1.0, &[]).unwrap());
        let f = RadialFn::from_fn(grid.clone(), |r| C64::new(a.0, a.1) * (-b * r).exp()).unwrap();
        let g = RadialFn::from_fn(grid, |r| C64::new(c.0, c.1) * r * (-d * r * r).exp()).unwrap();
        let fg = f.inner(&g).unwrap();
        let gf = g.inner(&f).unwrap();
        prop_assert!((fg - gf.conj()).norm() <= 1e-14 * (1.0 + fg.norm()));
        prop_assert!(f.inner(&f).unwrap().im.abs() <= 1e-15 * f.norm().powi(2));
    }

    #[test]
    fn continuation_reflection(x in -3.0..3.0f64, y in -0.4..0.4f64) {
        let ff = FormFactor::gaussian(1.0, 1.0).unwrap();
        let p = ModelParams::new(&ff, 1.0, 0.15).unwrap();
        let c = Continuation::new(&ff, &p).unwrap();
        let z = C64::new(x, y);
        let lhs = c.g(-z).unwrap();
        let rhs = c.gc(z).unwrap();
        prop_assert!((lhs - rhs).norm() < 1e-11 * (1.0 + lhs.norm()));
    }

    #[test]
    fn v_is_symplectic(c1 in coef(), a1 in coef(), b1 in 0.3..2.0f64, c2 in coef(), a2 in coef(), b2 in 0.3..2.0f64) {
        let x = element(c1, a1, b1, 0);
        let y = element(c2, a2, b2, 1);
        let vx = v_map(&x, ops()).unwrap();
        let vy = v_map(&y, ops()).unwrap();
        let lhs = vx.inner(&vy).unwrap().im;
        let rhs = symplectic_form(&x, &y).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-5 * x.norm_plus() * y.norm_plus());
    }

    #[test]
    fn flow_group_law(c in coef(), a in coef(), t in 0.0..2.0f64, s in 0.0..2.0f64) {
        let x = element(c, a, 1.0, 0);
        let once = w_t(&x, t + s, ops()).unwrap();
        let twice = w_t(&w_t(&x, s, ops()).unwrap(), t, ops()).unwrap();
        prop_assert!(once.distance(&twice) < 1e-4 * x.norm_plus());
    }

    #[test]
    fn characteristic_functions_are_bounded(c in coef(), a in coef(), b in 0.3..2.0f64, beta in 0.2..5.0f64) {
        let s = ThermalState::new(beta).unwrap();
        let x = element(c, a, b, 0);
        let w = omega_interacting(&x, &s, ops()).unwrap();
        prop_assert!(w > 0.0 && w <= 1.0);
        let r = 0.01 + beta;
        prop_assert!(s.eta(r) >= 1.0);
    }

    #[test]
    fn equilibrium_is_invariant(c in coef(), a in coef(), t in 0.0..60.0f64) {
        let s = ThermalState::new(1.0).unwrap();
        let x = element(c, a, 1.0, 0);
        let zero = element((0.0, 0.0), (0.0, 0.0), 1.0, 0);
        let w0 = three_point(&zero, &x, &zero, 0.0, &s, ops()).unwrap();
        let wt = three_point(&zero, &x, &zero, t, &s, ops()).unwrap();
        prop_assert!((wt - w0).norm() < 1e-12);
    }

    #[test]
    fn simplex_rules_integrate_volume(t in 0.01..20.0f64, n in 1usize..=3, panel in 0.3..5.0f64) {
        let want = t.powi(n as i32) / (1..=n).product::<usize>() as f64;
        for quad in [SimplexQuadrature::default(), SimplexQuadrature::Composite { panel, nodes: 4 }] {
            let rule = SimplexRule::new(&quad, n, t).unwrap();
            let vol: f64 = rule.weights.iter().sum();
            prop_assert!((vol - want).abs() < 1e-8 * want);
        }
    }

    #[test]
    fn margin_shrinks_with_weight(w in 0.0001..0.05f64, mu in 0.1..3.0f64, kappa in 0.01..1.0f64, kt in 0.0..10.0f64, s in 1.0..4.0f64) {
        let m = AtomicMeasure::pair(mu, C64::new(w, 0.3 * w)).unwrap();
        let a = admissibility(&m, kappa, kt);
        let b = admissibility(&m.scaled(s), kappa, kt);
        prop_assert!(b.margin <= a.margin);
        prop_assert!(a.margin <= kappa);
    }

    #[test]
    fn sine_product_bound_holds(seed in any::<u64>()) {
        let report = verify_sine_product_bound(50, BoundDims::default(), seed);
        prop_assert!(report.passed());
    }

}
