use std::f64::consts::PI;
use std::sync::OnceLock;

use approx::assert_relative_eq;
use proptest::prelude::*;
use spiral_core::grid_space::{AngularSignal, SolverParams, SpectralField};
use spiral_core::physical::*;
use spiral_core::solver::{newton_solve, SolveOptions};
use spiral_core::Error;

fn trivial(mu: f64, n: u32) -> Profile {
    let p = SolverParams::new(mu, n).unwrap();
    Profile::new(&SpectralField::trivial(&p), &AngularSignal::constant(p.omega0(), n)).unwrap()
}

fn solved() -> &'static Profile {
    static P: OnceLock<Profile> = OnceLock::new();
    P.get_or_init(|| {
        let p = SolverParams::new(1.0, 4000).unwrap();
        let om = AngularSignal::constant_plus_cos(p.omega0(), 0.01, 4000, 4000).unwrap();
        let (f, _) = newton_solve(&om, &p, &SolveOptions::default()).unwrap();
        Profile::checked(&f, &om).unwrap()
    })
}

#[test]
fn forward_map_trivial_unit_point() {
    let z = trivial(1.0, 4000).forward(1.0, 0.0).unwrap();
    assert_relative_eq!(z[0], 1f64.cos(), epsilon = 1e-14);
    assert_relative_eq!(z[1], 1f64.sin(), epsilon = 1e-14);
}

#[test]
fn forward_map_trivial_radius_closed_form() {
    for mu in [0.8, 1.0, 1.5, 2.0] {
        let p = trivial(mu, 4000);
        for beta in [1e-3, 0.2, 1.0, 7.0, 300.0] {
            let z = p.forward(beta, 0.4).unwrap();
            let want = mu.powf(-0.5) * beta.powf(-mu);
            assert_relative_eq!(z[0].hypot(z[1]), want, max_relative = 1e-12);
        }
    }
}

#[test]
fn doubling_beta_halves_radius_at_mu_one() {
    let p = trivial(1.0, 4000);
    let a = p.forward(0.7, 0.0).unwrap();
    let b = p.forward(1.4, 0.0).unwrap();
    assert_relative_eq!(b[0].hypot(b[1]), 0.5 * a[0].hypot(a[1]), max_relative = 1e-13);
}

#[test]
fn forward_map_rejects_bad_beta() {
    let p = trivial(1.0, 4000);
    assert!(matches!(p.forward(0.0, 0.0), Err(Error::Domain(_))));
    assert!(matches!(p.forward(-1.0, 0.0), Err(Error::Domain(_))));
}

#[test]
fn invert_trivial_unit_point() {
    let (beta, phi) = trivial(1.0, 4000).invert([1.0, 0.0]).unwrap();
    assert_relative_eq!(beta, 1.0, epsilon = 1e-13);
    assert_relative_eq!(phi, 2.0 * PI - 1.0, epsilon = 1e-13);
}

#[test]
fn invert_rejects_origin() {
    assert!(matches!(trivial(1.0, 4000).invert([0.0, 0.0]), Err(Error::Domain(_))));
}

#[test]
fn solved_round_trip() {
    let p = solved();
    for k in 0..200 {
        let r = 10f64.powf(-1.0 + 2.0 * k as f64 / 199.0);
        let th = 0.37 * k as f64;
        let z = [r * th.cos(), r * th.sin()];
        let (b, ph) = p.invert(z).unwrap();
        let back = p.forward(b, ph).unwrap();
        assert!((back[0] - z[0]).hypot(back[1] - z[1]) <= 1e-10 * r);
    }
}

#[test]
fn trivial_vorticity_is_power_law() {
    for mu in [0.8, 1.0, 1.5] {
        let p = trivial(mu, 4000);
        let c = mu.powf(-0.5 / mu) * (2.0 - 1.0 / mu);
        for (x, t) in [([0.3f64, 0.2], 0.5), ([-1.5, 0.7], 2.0), ([0.0, 3.0], 0.01)] {
            let s = p.eval(x, t).unwrap();
            let r: f64 = x[0].hypot(x[1]);
            assert_relative_eq!(s.w, c * r.powf(-1.0 / mu), max_relative = 1e-12);
        }
    }
}

#[test]
fn trivial_vorticity_at_mu_one() {
    let s = trivial(1.0, 4000).eval([2.0, 0.0], 1.0).unwrap();
    assert_relative_eq!(s.w, 0.5, max_relative = 1e-13);
}

#[test]
fn trivial_profile_space_vorticity() {
    for mu in [0.8, 1.0, 2.0] {
        let p = trivial(mu, 4000);
        for beta in [0.1, 1.0, 5.0] {
            let cf = p.chart(beta, 0.2).unwrap();
            assert_relative_eq!(cf.w, (2.0 - 1.0 / mu) * beta, max_relative = 1e-12);
        }
    }
}

#[test]
fn trivial_velocity_matches_rotation_profile() {
    // u = mu^{-1/2mu} |x|^{1-1/mu} (-sin, cos)
    for mu in [0.8, 1.0, 1.5] {
        let p = trivial(mu, 4000);
        let x: [f64; 2] = [0.6, -0.9];
        let r: f64 = x[0].hypot(x[1]);
        let s = p.eval(x, 0.3).unwrap();
        let k = mu.powf(-0.5 / mu) * r.powf(1.0 - 1.0 / mu) / r;
        assert_relative_eq!(s.u[0], -k * x[1], max_relative = 1e-11);
        assert_relative_eq!(s.u[1], k * x[0], max_relative = 1e-11);
    }
}

#[test]
fn solved_velocity_is_perp_gradient_of_stream_function() {
    let p = solved();
    let (x, t, h) = ([0.7, 0.4], 0.3, 1e-6);
    let s = p.eval(x, t).unwrap();
    let psi = |dx: f64, dy: f64| p.eval([x[0] + dx, x[1] + dy], t).unwrap().psi;
    let px = (psi(h, 0.0) - psi(-h, 0.0)) / (2.0 * h);
    let py = (psi(0.0, h) - psi(0.0, -h)) / (2.0 * h);
    assert_relative_eq!(s.u[0], -py, max_relative = 1e-7);
    assert_relative_eq!(s.u[1], px, max_relative = 1e-7);
}

#[test]
fn eval_rejects_origin_and_negative_time() {
    let p = trivial(1.0, 4000);
    assert!(p.eval([0.0, 0.0], 1.0).is_err());
    assert!(p.eval([1.0, 0.0], -1.0).is_err());
}

#[test]
fn eval_at_time_zero_uses_initial_limit() {
    let p = solved();
    let x = [0.5, -0.25];
    let s0 = p.eval(x, 0.0).unwrap();
    assert!(s0.chart.is_none());
    let s = p.eval(x, 1e-9).unwrap();
    assert_relative_eq!(s.w, s0.w, max_relative = 1e-6);
    assert_relative_eq!(s.psi, s0.psi, max_relative = 1e-6);
}

#[test]
fn initial_factor_at_trivial_is_ring_constant() {
    for mu in [0.8, 1.0, 2.0] {
        let p = trivial(mu, 4000);
        let id = p.initial(1.1);
        assert_relative_eq!(id.w0, mu.powf(-0.5 / mu) * (2.0 - 1.0 / mu), max_relative = 1e-13);
    }
}

#[test]
fn initial_stream_factor_at_trivial() {
    for mu in [0.8, 1.0, 1.5, 2.0] {
        let p = trivial(mu, 4000);
        let c = mu.powf(-0.5 / mu) * (2.0 - 1.0 / mu);
        let closed = c / (2.0 - 1.0 / mu).powi(2);
        assert_relative_eq!(p.initial(0.0).psi0, closed, max_relative = 1e-12);
        // the trivial stream function is exactly self-similar, so any t > 0 gives the same factor
        let r: f64 = 1.3;
        let direct = p.eval([r, 0.0], 0.7).unwrap().psi / r.powf(2.0 - 1.0 / mu);
        assert_relative_eq!(direct, closed, max_relative = 1e-12);
    }
}

#[test]
fn spiral_extract_empty_without_zeros() {
    let p = trivial(1.0, 4000);
    assert!(spiral_extract(&p, 1.0, &SpiralOptions::default()).unwrap().is_empty());
    assert!(solved().omega_zeros().is_empty());
}

#[test]
fn spiral_extract_rejects_nonpositive_time() {
    assert!(spiral_extract(&trivial(1.0, 4000), 0.0, &SpiralOptions::default()).is_err());
}

#[test]
fn oracle_closed_form_at_unit_constants() {
    // d|z|/dtheta = -|z|^2 from |z0| = 2: |z| = 1 / (theta + 1/2)
    let f = spiral_ode_oracle(1.0, 1.0, [2.0, 0.0], 4.0 * PI).unwrap();
    for (th, r) in f.theta.iter().zip(&f.r) {
        assert_relative_eq!(*r, 1.0 / (th + 0.5), max_relative = 1e-10);
    }
    assert_relative_eq!(f.a, 1.0, max_relative = 1e-10);
    assert_relative_eq!(f.b, 0.5, max_relative = 1e-10);
}

#[test]
fn oracle_zero_span_is_exact() {
    let f = spiral_ode_oracle(1.3, 0.8, [0.0, 1.0], 0.0).unwrap();
    assert_eq!(f.theta.len(), 1);
    assert_eq!(f.max_rel_err, 0.0);
}

#[test]
fn oracle_rejects_degenerate_input() {
    assert!(matches!(spiral_ode_oracle(1.0, 0.0, [1.0, 0.0], 1.0), Err(Error::Parameter(_))));
    assert!(matches!(spiral_ode_oracle(1.0, 1.0, [0.0, 0.0], 1.0), Err(Error::Domain(_))));
}

#[test]
fn trivial_field_integral_curve_matches_oracle() {
    for mu in [0.8, 1.0, 1.5] {
        let p = trivial(mu, 4000);
        let c = mu.powf(-0.5 / mu) * (2.0 - 1.0 / mu);
        let f = integral_curve(&p, [1.0, 0.0], 4.0 * PI).unwrap();
        let o = spiral_ode_oracle(mu, c, [1.0, 0.0], 4.0 * PI).unwrap();
        assert!(f.max_rel_err < 1e-6);
        assert_relative_eq!(f.a, o.a, max_relative = 1e-8);
        assert_relative_eq!(f.b, o.b, max_relative = 1e-8);
    }
}

#[test]
fn lp_bound_closed_form_at_trivial() {
    // |x|^{-1} over the unit disk is 2 pi
    let p = trivial(1.0, 4000);
    let v = p.lp_norm_ball(0.5, 1.0, 1.0).unwrap();
    assert_relative_eq!(v, 2.0 * PI, max_relative = 1e-10);
    let bound = lp_bound(1.0, 1.0, p.omega.lp_norm(1.0), 1.0);
    assert_relative_eq!(bound, 6.0 * 2.0 * PI, max_relative = 1e-6);
    assert!(v <= bound);
}

#[test]
fn lp_norm_rejects_exponent_out_of_range() {
    assert!(trivial(1.0, 4000).lp_norm_ball(1.0, 1.0, 2.0).is_err());
}

#[test]
fn verify_trivial_selfsim_exact() {
    let opts = VerifyOptions { samples: 200, ..Default::default() };
    let r = verify(&trivial(1.0, 4000), &[Suite::Selfsim, Suite::Roundtrip], &opts).unwrap();
    assert!(r.pass);
    for row in &r.suite(Suite::Selfsim).unwrap().rows {
        assert!(row.value <= 1e-12, "{}: {}", row.label, row.value);
    }
}

#[test]
fn verify_trivial_weak_residuals() {
    let p = trivial(1.0, 40);
    let fs = test_functions(40, 5, 3);
    for f in &fs {
        let (r, m) = p.weak_residual(f).unwrap();
        assert!(r.abs() <= 1e-6 * m, "{r} vs {m}");
    }
}

#[test]
fn verify_report_serializes() {
    let opts = VerifyOptions { samples: 10, ..Default::default() };
    let r = verify(&trivial(1.0, 4000), &[Suite::Roundtrip], &opts).unwrap();
    let j = r.to_json().unwrap();
    assert!(j.contains("\"roundtrip\""));
    assert!(j.contains("\"seed\": 42"));
}

#[test]
fn suite_names_parse() {
    for s in Suite::ALL {
        assert_eq!(s.name().parse::<Suite>().unwrap(), s);
    }
    assert!("bogus".parse::<Suite>().is_err());
}

#[test]
fn csv_and_svg_exports() {
    let p = trivial(1.0, 4000);
    let s = vec![p.eval([1.0, 0.0], 1.0).unwrap()];
    let csv = samples_to_csv(&s).unwrap();
    assert!(csv.starts_with("x1,x2,t,w,u1,u2,psi\n"));
    let curve = SpiralCurve {
        phi0: 0.0,
        t: 1.0,
        points: vec![CurvePoint { beta: 1.0, x: [1.0, 0.0] }, CurvePoint { beta: 2.0, x: [0.0, 0.5] }],
        symmetry: 4000,
    };
    let c = curves_to_csv(std::slice::from_ref(&curve)).unwrap();
    assert_eq!(c.lines().count(), 3);
    let svg = curves_to_svg(&[curve], "a < b");
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("<polyline"));
    assert!(svg.contains("a &lt; b"));
    assert!(svg.contains(">x1<") && svg.contains(">x2<"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trivial_round_trip(mu in 0.7f64..2.5, lr in -2.0f64..2.0, th in -PI..PI) {
        let p = trivial(mu, 4000);
        let r = 10f64.powf(lr);
        let z = [r * th.cos(), r * th.sin()];
        let (b, ph) = p.invert(z).unwrap();
        prop_assert!((0.0..2.0 * PI).contains(&ph));
        let back = p.forward(b, ph).unwrap();
        prop_assert!((back[0] - z[0]).hypot(back[1] - z[1]) <= 1e-10 * r);
    }

    #[test]
    fn trivial_self_similarity(mu in 0.7f64..2.5, ll in -1.0f64..1.0, t in 0.01f64..2.0, x1 in -2.0f64..2.0, x2 in 0.1f64..2.0) {
        let p = trivial(mu, 4000);
        let lam = 10f64.powf(ll);
        let a = p.eval([x1, x2], t).unwrap();
        let lm = lam.powf(mu);
        let b = p.eval([lm * x1, lm * x2], lam * t).unwrap();
        prop_assert!((b.w - a.w / lam).abs() <= 1e-12 * (a.w / lam).abs());
        prop_assert!((b.psi - lam.powf(2.0 * mu - 1.0) * a.psi).abs() <= 1e-12 * b.psi.abs());
    }

    #[test]
    fn oracle_fit_is_algebraic(mu in 0.7f64..3.0, c in 0.2f64..3.0, lr in -1.0f64..1.0, th in -PI..PI) {
        let r = 10f64.powf(lr);
        let f = spiral_ode_oracle(mu, c, [r * th.cos(), r * th.sin()], 4.0 * PI).unwrap();
        prop_assert!(f.max_rel_err < 1e-6);
        prop_assert!((f.a - (2.0 - 1.0 / mu) / c).abs() <= 1e-8 * f.a.abs());
    }
}
