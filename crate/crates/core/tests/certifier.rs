use spiral_core::certifier::*;
use spiral_core::grid_space::{build_grid, SolverParams};

#[test]
fn delta_values() {
    assert_eq!(delta_of(1.0).unwrap(), 0.5);
    assert_eq!(delta_of(3.0).unwrap(), 0.5);
    assert!((delta_of(0.75).unwrap() - 0.25).abs() < 1e-15);
    assert!(delta_of(0.6).is_err());
}

#[test]
fn threshold_polynomial_at_mu_one() {
    assert_eq!(threshold(1.0), 3792.0);
    // (2mu - 1)(397 + 1090/mu + 1264/mu^2 + 999/mu^3 + 42/mu^4) at mu = 2
    let want = 3.0 * (397.0 + 545.0 + 316.0 + 124.875 + 2.625);
    assert!((threshold(2.0) - want).abs() < 1e-9);
}

/// Smallest `N` with `K(1, N) < 1` under the tabulated cutoff norms, by bisection on the
/// monotone map `N -> K`, lies below the closed-form threshold.
#[test]
fn threshold_dominates_scan_of_k() {
    let k = |n: u32| k_from_norms(1.0, n, &CUTOFF_BOUNDS);
    let (mut lo, mut hi) = (4u32, 100_000u32);
    assert!(k(lo) >= 1.0 && k(hi) < 1.0);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if k(mid) < 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    assert!((hi as f64) <= threshold(1.0), "scan gives {hi}");
    for n in [hi, 3792, 4000, 10_000] {
        assert!(k(n) < 1.0);
    }
    // frozen from the scan above
    assert_eq!(hi, 3775);
}

#[test]
fn cutoff_suprema_within_table() {
    let grid = build_grid(257, 0.00934).unwrap();
    let table = cutoff_norm_table(&grid);
    assert_eq!(table.len(), 7);
    for (row, bound) in table.iter().zip(CUTOFF_BOUNDS) {
        assert!(row.computed <= bound, "{}: {} > {}", row.name, row.computed, bound);
        assert!(row.computed > 0.0);
        assert!(row.ok);
    }
    // xi_inf / beta peaks at 1/beta just past the support; sup is below 1 but close to 1/2
    assert!(table[3].computed > 0.4);
}

#[test]
fn minus_branch_gap_is_flagged_at_small_n() {
    let row = dist_gap(1.0, 4, 4, Branch::Minus).unwrap();
    assert_eq!(row.shift, -3.0);
    assert_eq!(row.exact, 2.5);
    assert!((row.bound_lower - (2.0 + 5.0 / 6.0)).abs() < 1e-12);
    assert!(row.flagged);
    let plus = dist_gap(1.0, 4, 4, Branch::Plus).unwrap();
    assert_eq!(plus.exact, 4.5);
    assert!(!plus.flagged);
    assert!(dist_gap(1.0, 4, 2, Branch::Plus).is_err());
    assert!(dist_gap(1.0, 3, 4, Branch::Plus).is_err());
}

#[test]
fn certificate_at_default_point() {
    let p = SolverParams::new(1.0, 4000).unwrap();
    let c = certify(&p).unwrap();
    assert_eq!(c.delta, 0.5);
    assert_eq!(c.threshold, 3792.0);
    assert!(c.k < 1.0, "K = {}", c.k);
    assert!(c.k_sampled <= c.k);
    assert!(c.passes);
    assert_eq!(c.dist_rows.len(), 12);
    for r in &c.dist_rows {
        assert_eq!(r.flagged, r.exact < r.bound_lower);
    }
    let flagged = c.dist_rows.iter().filter(|r| r.flagged).count();
    assert_eq!(c.notes.iter().filter(|n| n.starts_with("dist bound")).count(), flagged);
    for sc in &c.spot_checks {
        assert!(sc.cbd_estimate <= sc.cbd_bound);
        assert!(sc.below_k);
    }
    let json: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
    assert_eq!(json["N"], 4000);
    assert!(json["K"].as_f64().unwrap() < 1.0);
    assert!(c.table().contains("passes = true"));
}

#[test]
fn small_n_is_not_certified() {
    let p = SolverParams::new(1.0, 100).unwrap();
    let c = certify(&p).unwrap();
    assert!(!c.passes);
    assert!(c.notes.iter().any(|n| n.starts_with("not certified")));
}

#[test]
fn k_decreases_in_n() {
    let mut last = f64::INFINITY;
    for n in [1000u32, 2000, 4000, 8000, 16000] {
        let (k, _) = K_and_threshold(1.0, n);
        assert!(k < last);
        last = k;
    }
}
