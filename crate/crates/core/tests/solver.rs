use spiral_core::grid_space::{AngularSignal, SolverParams, SpectralField, SpectralNorm, C64};
use spiral_core::nonlinear::eval_lbar;
use spiral_core::solver::*;
use spiral_core::Error;

fn cosine_omega(p: &SolverParams, amp: f64) -> AngularSignal {
    AngularSignal::constant_plus_cos(p.omega0(), amp, p.n_period as i64, p.n_period).unwrap()
}

#[test]
fn chord_newton_converges_on_cosine_perturbation() {
    let p = SolverParams::new(1.0, 4000).unwrap();
    let om = cosine_omega(&p, 0.01);
    let (field, rep) = newton_solve(&om, &p, &SolveOptions::default()).unwrap();
    assert!(rep.converged);
    assert!(rep.iterations <= 25, "{} iterations", rep.iterations);
    assert!(*rep.residual_history.last().unwrap() < 1e-10);
    assert!(rep.bounds_ok);
    let b = bounds_check(&field).unwrap();
    assert!(b.ok);
    assert_eq!(b.rows.len(), 6);
    // re-evaluated from the stored field; reassembly rounding costs about one digit
    let r = eval_lbar(&field, &om).unwrap();
    assert!(r.norm_report.aggregate < 1e-9, "{:e}", r.norm_report.aggregate);
    field.validate(1e-12).unwrap();
}

#[test]
fn chord_contracts_geometrically() {
    let p = SolverParams::new(1.0, 4000).unwrap();
    let (_, rep) = newton_solve(&cosine_omega(&p, 0.01), &p, &SolveOptions::default()).unwrap();
    let h = &rep.residual_history;
    assert!(h.len() >= 2);
    for w in h.windows(2) {
        assert!(w[1] < 0.5 * w[0], "history {h:?}");
    }
}

#[test]
fn neumann_backend_agrees_with_chord() {
    let p = SolverParams::new(1.0, 4000).unwrap();
    let om = cosine_omega(&p, 0.01);
    let (a, _) = newton_solve(&om, &p, &SolveOptions::default()).unwrap();
    let opts = SolveOptions { backend: Backend::Neumann, ..Default::default() };
    let (b, rep) = newton_solve(&om, &p, &opts).unwrap();
    assert!(rep.converged);
    let diff = a.axpy(-1.0, &b);
    let gap = diff
        .modes
        .iter()
        .flat_map(|m| m.to_extended())
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    assert!(gap < 1e-9, "{gap:e}");
}

#[test]
fn trivial_omega_returns_trivial_field() {
    let p = SolverParams::new(1.5, 4000).unwrap();
    let (field, rep) = newton_solve(&AngularSignal::constant(p.omega0(), 4000), &p, &SolveOptions::default()).unwrap();
    assert_eq!(rep.iterations, 1);
    assert_eq!(field, SpectralField::trivial(&p));
}

#[test]
fn continuation_reaches_large_amplitude() {
    let p = SolverParams::new(1.0, 4000).unwrap();
    let opts = SolveOptions { tol: 1e-8, ..Default::default() };
    let (_, rep) = continuation_solve(&cosine_omega(&p, 2.0), &p, &opts).unwrap();
    assert!(rep.converged && rep.bounds_ok);
}

#[test]
fn oversized_amplitude_fails_with_last_iterate() {
    let p = SolverParams::new(1.0, 4000).unwrap();
    match newton_solve(&cosine_omega(&p, 50.0), &p, &SolveOptions::default()) {
        Err(Error::NonConvergence { last, .. }) => {
            let last = last.expect("stalled iterate");
            assert!(!last.report.converged);
        }
        other => panic!("expected non-convergence, got {:?}", other.map(|r| r.1)),
    }
}

#[test]
fn initial_data_matching_recovers_cosine_profile() {
    let p = SolverParams::new(1.0, 4000).unwrap();
    let w0 = w0_ring(1.0);
    assert_eq!(w0, 1.0);
    let g = AngularSignal::constant_plus_cos(w0, 0.01 * w0, 4000, 4000).unwrap();
    let res = match_initial_data(&g, &p, &SolveOptions::default()).unwrap();
    let err = res.g0.sub(&res.h).weighted_sum(-0.5, false).unwrap();
    assert!(err < 1e-8, "{err:e}");
    assert!((res.report.time_scale - 1.0).abs() < 1e-15);
    assert!(res.report.bounds_ok);
    // the matched Omega differs from Omega0 at first order by mu^{1/2mu} (g0 - w0)
    let d = res.omega.coeff(4000) - C64::new(0.005, 0.0);
    assert!(d.norm() < 1e-3, "{d}");
}

#[test]
fn matching_rescales_time_for_other_means() {
    let p = SolverParams::new(1.0, 4000).unwrap();
    let g = AngularSignal::constant_plus_cos(2.0, 0.02, 4000, 4000).unwrap();
    let res = match_initial_data(&g, &p, &SolveOptions::default()).unwrap();
    assert!((res.report.time_scale - 2.0).abs() < 1e-15);
    assert!(res.g0.sub(&res.h).weighted_sum(-0.5, false).unwrap() < 1e-8);
}

#[test]
fn matching_rejects_bad_targets() {
    let p = SolverParams::new(1.0, 4000).unwrap();
    let off = AngularSignal { n_period: 4000, coeffs: [(0, C64::new(1.0, 0.0)), (3, C64::new(0.1, 0.0))].into() };
    assert!(match_initial_data(&off, &p, &SolveOptions::default()).is_err());
    let high = AngularSignal::constant_plus_cos(1.0, 0.01, 16000, 4000).unwrap();
    assert!(match_initial_data(&high, &p, &SolveOptions::default()).is_err());
    assert!(match_initial_data(&AngularSignal::constant(0.0, 4000), &p, &SolveOptions::default()).is_err());
}

/// Central difference of the initial-data map at `Omega0` is `mu^{-1/2mu}` times the identity.
#[test]
fn initial_data_map_derivative_at_trivial_point() {
    for mu in [0.8, 1.0, 1.5] {
        let p = SolverParams::new(mu, 4000).unwrap();
        let solver = Solver::new(&p, SolveOptions::default()).unwrap();
        let om0 = AngularSignal::constant(p.omega0(), 4000);
        let eps = 1e-4;
        for e in [
            AngularSignal::constant_plus_cos(0.0, 1.0, 4000, 4000).unwrap(),
            AngularSignal::from_coeffs(4000, [(8000, C64::new(0.0, 0.5)), (-8000, C64::new(0.0, -0.5))]).unwrap(),
        ] {
            let (hp, _, _) = solver.initial_data_map(&om0.add_scaled(eps, &e), None).unwrap();
            let (hm, _, _) = solver.initial_data_map(&om0.add_scaled(-eps, &e), None).unwrap();
            let d = hp.sub(&hm).scale(0.5 / eps);
            let want = e.scale(mu.powf(-0.5 / mu));
            let err = d.sub(&want).weighted_sum(0.0, false).unwrap();
            assert!(err < 1e-4, "mu {mu}: {err:e}");
        }
    }
}

#[test]
fn initial_factor_of_trivial_field_is_ring_value() {
    for mu in [0.8, 1.0, 2.0] {
        let p = SolverParams::new(mu, 4000).unwrap();
        let solver = Solver::new(&p, SolveOptions::default()).unwrap();
        let (h, _, _) = solver.initial_data_map(&AngularSignal::constant(p.omega0(), 4000), None).unwrap();
        assert!((h.coeff(0).re - w0_ring(mu)).abs() < 1e-12);
        assert!(h.weighted_sum(0.0, true).unwrap() < 1e-12);
    }
}

#[test]
fn backend_names_parse() {
    assert_eq!("chord".parse::<Backend>().unwrap(), Backend::Chord);
    assert_eq!("neumann".parse::<Backend>().unwrap(), Backend::Neumann);
    assert_eq!("fd".parse::<Backend>().unwrap(), Backend::FdJacobian);
    assert!("lu".parse::<Backend>().is_err());
}

#[test]
fn uncertified_period_solves_with_warning() {
    let p = SolverParams::new(1.0, 100).unwrap();
    let (_, rep) = newton_solve(&cosine_omega(&p, 0.01), &p, &SolveOptions::default()).unwrap();
    assert!(rep.converged);
    assert!(rep.warnings.iter().any(|w| w.contains("below the certified threshold")), "{:?}", rep.warnings);
    let p = SolverParams::new(1.0, 4000).unwrap();
    let (_, rep) = newton_solve(&cosine_omega(&p, 0.01), &p, &SolveOptions::default()).unwrap();
    assert!(rep.warnings.is_empty(), "{:?}", rep.warnings);
}
