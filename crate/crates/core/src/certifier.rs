//! Explicit constants behind the invertibility of the linearization:
//! `delta`, shift distances, cutoff norms, the contraction constant `K` and the
//! lower bound on `N`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid_space::{
    bracket, build_grid, eta, eta_prime, mode_norm, xi0, xi_inf, ModeProfile, NormVariant, RadialGrid,
    SolverParams, C64,
};
use crate::operators::{real_matvec, shifts, RadialOps};

pub fn delta_of(mu: f64) -> Result<f64> {
    if !(mu > 2.0 / 3.0) {
        return Err(Error::Domain(format!("mu must exceed 2/3, got {mu}")));
    }
    Ok(0.5 * (2.0 * mu - 1.0).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Branch {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistRow {
    pub n: i64,
    pub branch: Branch,
    pub shift: f64,
    pub exact: f64,
    pub bound_lower: f64,
    pub bound_upper: f64,
    pub flagged: bool,
}

/// `g(N) = (N - 2) mu + 5/6`.
fn gap_denominator(mu: f64, n_period: u32) -> f64 {
    (n_period as f64 - 2.0) * mu + 5.0 / 6.0
}

/// `dist([-delta, delta], (2 +- n) mu - 1)` against the closed-form bracket.
pub fn dist_gap(mu: f64, n_period: u32, n: i64, branch: Branch) -> Result<DistRow> {
    let delta = delta_of(mu)?;
    if n_period < 4 {
        return Err(Error::Domain(format!("distance bound needs N >= 4, got {n_period}")));
    }
    if n.unsigned_abs() < n_period as u64 {
        return Err(Error::Domain(format!("distance bound needs |n| >= N, got n = {n}")));
    }
    let (sp, sm) = shifts(n, mu);
    let shift = if branch == Branch::Plus { sp } else { sm };
    let exact = (shift.abs() - delta).max(0.0);
    let bn = bracket(n_period as f64);
    let bk = bracket(n as f64);
    let bound_lower = gap_denominator(mu, n_period) / bn * bk;
    let bound_upper = ((n_period as f64 + 2.0) * mu - 1.5) / bn * bk;
    Ok(DistRow { n, branch, shift, exact, bound_lower, bound_upper, flagged: exact < bound_lower })
}

#[derive(Clone, Debug, Serialize)]
pub struct CutoffNorm {
    pub name: &'static str,
    pub computed: f64,
    pub bound: f64,
    pub ok: bool,
}

pub const CUTOFF_BOUNDS: [f64; 7] = [5.0, 2.83, 3.5, 1.0, 7.5, 42.0, 1.42];
pub const CUTOFF_NAMES: [&str; 7] = [
    "beta d_beta xi0",
    "beta xi0",
    "d_beta xi_inf",
    "xi_inf / beta",
    "beta^2 d_beta xi0",
    "beta^2 d_beta^2 xi0",
    "max(beta^delta xi0, beta^-delta xi_inf)",
];

/// Sample points: log-spaced on `[1e-6, 1e6]`, the support `(1, 2)` refined, and the grid nodes.
pub fn cutoff_samples(grid: &RadialGrid) -> Vec<f64> {
    let mut b: Vec<f64> = (0..4096).map(|i| 10f64.powf(-6.0 + 12.0 * i as f64 / 4095.0)).collect();
    b.extend((0..=4096).map(|i| 1.0 + i as f64 / 4096.0));
    b.extend(grid.nodes.iter().copied().filter(|&x| x > 0.0));
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.dedup();
    b
}

/// Seven suprema, each maximized over `delta` in `[1/6, 1/2]`.
pub fn cutoff_norm_table(grid: &RadialGrid) -> Vec<CutoffNorm> {
    let betas = cutoff_samples(grid);
    let deltas: Vec<f64> = (0..=8).map(|i| 1.0 / 6.0 + (0.5 - 1.0 / 6.0) * i as f64 / 8.0).collect();
    let mut sup = [0.0f64; 7];
    for &b in &betas {
        let (e, ep, x0, xi) = (eta(b), eta_prime(b), xi0(b), xi_inf(b));
        for &d in &deltas {
            let w = b.powf(d).max(b.powf(-d));
            let vals = [
                w * b * e,
                w * b * x0,
                w * e,
                w * xi / b,
                w * b * b * e,
                w * b * b * ep.abs(),
                (b.powf(d) * x0).max(b.powf(-d) * xi),
            ];
            for (s, v) in sup.iter_mut().zip(vals) {
                *s = s.max(v);
            }
        }
    }
    (0..7)
        .map(|i| CutoffNorm {
            name: CUTOFF_NAMES[i],
            computed: sup[i],
            bound: CUTOFF_BOUNDS[i],
            ok: sup[i] <= CUTOFF_BOUNDS[i],
        })
        .collect()
}

/// Two-bracket product bounding `(2mu - 1) i n beta` from the seven cutoff norms.
pub fn k_from_norms(mu: f64, n_period: u32, c: &[f64; 7]) -> f64 {
    let g = gap_denominator(mu, n_period);
    let bn = bracket(n_period as f64);
    let [n1, n2, n3, n4, n5, n6, n7] = *c;
    let b1 = bn / g * ((n1 + bn * n2) / g + 2.0) + 1.05 / g * (n3 + 2.0 * mu * n4) + (bn * mu / g + 1.05) * n4;
    let b2 = (1.0 / g + 66.0 / 5.0 + ((bn + 1.0) / g + 66.0 / 5.0) * n7)
        * ((1.0 + 2.0 / g) * n1 + bn / g * n2 + bn / g * n5 + n6 / g + 1.0)
        + bn / g * n2;
    (2.0 * mu - 1.0) / bn * b1 * b2
}

pub fn threshold(mu: f64) -> f64 {
    (2.0 * mu - 1.0)
        * (397.0 + 1090.0 / mu + 1264.0 / mu.powi(2) + 999.0 / mu.powi(3) + 42.0 / mu.powi(4))
}

/// `K` with the tabulated cutoff bounds substituted, and the `N` threshold.
#[allow(non_snake_case)]
pub fn K_and_threshold(mu: f64, n_period: u32) -> (f64, f64) {
    (k_from_norms(mu, n_period, &CUTOFF_BOUNDS), threshold(mu))
}

#[derive(Clone, Debug, Serialize)]
pub struct SpotCheck {
    pub n: i64,
    pub samples: usize,
    /// Largest sampled `||i n beta (Q+1)^{-1} P_-^{-1} f|| / ||f||` over `f` in `C_b^delta`.
    pub cbd_estimate: f64,
    /// Closed-form bound for the same operator norm.
    pub cbd_bound: f64,
    /// `||i n beta (Q+1)^{-1} P_-^{-1} xi0||`.
    pub xi0_estimate: f64,
    /// `(2mu - 1) ||id||_{[W+, Z]} (cbd_estimate + xi0_estimate)` with the closed-form `id` bound.
    pub chain_estimate: f64,
    pub below_k: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub mu: f64,
    #[serde(rename = "N")]
    pub n_period: u32,
    pub delta: f64,
    pub dist_rows: Vec<DistRow>,
    pub cutoff_norms: Vec<CutoffNorm>,
    #[serde(rename = "K")]
    pub k: f64,
    /// `K` recomputed from the sampled cutoff norms instead of the tabulated bounds.
    pub k_sampled: f64,
    pub threshold: f64,
    pub spot_checks: Vec<SpotCheck>,
    pub passes: bool,
    pub notes: Vec<String>,
}

/// Random profile `sum_m c_m y^m (1 - y)^2`, `y = nu / (1 + nu)`, `nu = scale * beta`.
pub fn random_profile(rng: &mut ChaCha8Rng, scale: f64, betas: &[f64], degree: usize, with_origin: bool) -> Vec<C64> {
    let c: Vec<C64> = (0..=degree)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    betas
        .iter()
        .map(|&b| {
            if b.is_infinite() {
                return C64::new(0.0, 0.0);
            }
            let nu = scale * b;
            let y = nu / (1.0 + nu);
            let first = if with_origin { 0 } else { 1 };
            (first..=degree).map(|m| c[m] * y.powi(m as i32)).sum::<C64>() * (1.0 - y).powi(2)
        })
        .collect()
}

/// Closed-form bound of `i n beta (Q+1)^{-1} P_-^{-1}` on `C_b^delta` (tabulated cutoff norm substituted).
pub fn inbeta_bound(mu: f64, n_period: u32) -> f64 {
    let g = gap_denominator(mu, n_period);
    let bn = bracket(n_period as f64);
    1.0 / g + 66.0 / 5.0 + ((bn + 1.0) / g + 66.0 / 5.0) * CUTOFF_BOUNDS[6]
}

/// Closed-form bound of `id: W_+ -> Z_0` at mode `n`.
pub fn id_bound(mu: f64, n_period: u32, n: i64) -> f64 {
    let g = gap_denominator(mu, n_period);
    let bn = bracket(n_period as f64);
    let [n1, n2, n3, n4, ..] = CUTOFF_BOUNDS;
    let b1 = bn / g * ((n1 + bn * n2) / g + 2.0) + 1.05 / g * (n3 + 2.0 * mu * n4) + (bn * mu / g + 1.05) * n4;
    b1 / bracket(n as f64)
}

/// Sampled norms of `i n beta (Q + 1)^{-1} P_-^{-1}` from `C_b^delta` and on `xi0`,
/// measured in `C_b^delta + C xi_inf`.
pub fn spot_check(ops: &RadialOps, params: &SolverParams, n: i64, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let mu = params.mu;
    let delta = params.delta;
    let (_, sm) = shifts(n, mu);
    let betas = ops.basis.grid.beta_ext();
    let dm = ops.d(n, sm).lu();
    let q1 = ops.d(0, -1.0).lu();
    let apply = |f: Vec<C64>| -> Result<f64> {
        let sing = || Error::Solve(format!("singular factor at n = {n}"));
        let g = dm.solve(&nalgebra::DVector::from_vec(f)).ok_or_else(sing)?;
        let h = q1.solve(&g).ok_or_else(sing)?;
        let out: Vec<C64> = real_matvec(&ops.b0, h.as_slice())
            .into_iter()
            .map(|x| x * C64::new(0.0, n as f64))
            .collect();
        let op = ModeProfile::from_nodal(n, &ops.basis, &out);
        mode_norm(&op, NormVariant::Wplus, delta, &ops.basis)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n.unsigned_abs());
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        // radial scales between 10 and 1/|n|
        let scale = 10f64.powf(rng.gen_range(-1.0..(n.unsigned_abs() as f64).log10()));
        let f = random_profile(&mut rng, scale, &betas, 4, false);
        let fp = ModeProfile::from_nodal(n, &ops.basis, &f);
        let nf = mode_norm(&fp, NormVariant::Cbdelta, delta, &ops.basis)?;
        worst = worst.max(apply(f)? / nf);
    }
    let mut x0: Vec<C64> = ops.basis.xi0.iter().map(|&x| C64::new(x, 0.0)).collect();
    x0.push(C64::new(0.0, 0.0));
    Ok((worst, apply(x0)?))
}

pub const SPOT_SAMPLES: usize = 16;
pub const SPOT_SEED: u64 = 0x5eed;

pub fn certify(params: &SolverParams) -> Result<Certificate> {
    params.validate()?;
    let mu = params.mu;
    let nn = params.n_period;
    let delta = delta_of(mu)?;
    let mut notes = Vec::new();

    let mut dist_rows = Vec::new();
    if nn >= 4 {
        for k in 1..=params.harmonics as i64 {
            for sign in [1, -1] {
                for br in [Branch::Plus, Branch::Minus] {
                    let row = dist_gap(mu, nn, sign * k * nn as i64, br)?;
                    if row.flagged {
                        notes.push(format!(
                            "dist bound: n = {}, branch {:?}: exact gap {:.6} is below the closed-form lower bound {:.6}",
                            row.n, row.branch, row.exact, row.bound_lower
                        ));
                    }
                    dist_rows.push(row);
                }
            }
        }
    } else {
        notes.push(format!("N = {nn} < 4: distance bound not applicable"));
    }

    let grid = build_grid(params.grid_points, params.grid_scale)?;
    let cutoff_norms = cutoff_norm_table(&grid);
    for c in cutoff_norms.iter().filter(|c| !c.ok) {
        notes.push(format!("cutoff norm {} = {:.5} exceeds {}", c.name, c.computed, c.bound));
    }
    let sampled: [f64; 7] = std::array::from_fn(|i| cutoff_norms[i].computed);
    let (k, thr) = K_and_threshold(mu, nn);
    let k_sampled = k_from_norms(mu, nn, &sampled);
    if nn <= 2000 {
        notes.push(format!("N = {nn} <= 2000: the simplified threshold polynomial is outside its stated range"));
    }

    // Unit map scale so the cutoff support (1, 2) is resolved.
    let ops = RadialOps::new(crate::grid_space::Basis::new(params.grid_points, 1.0)?);
    let cbd_bound = inbeta_bound(mu, nn);
    let mut spot_checks = Vec::new();
    for k_h in 1..=params.harmonics.min(3) as i64 {
        let n = k_h * nn as i64;
        let (cbd, x0) = spot_check(&ops, params, n, SPOT_SAMPLES, SPOT_SEED)?;
        let chain = (2.0 * mu - 1.0) * id_bound(mu, nn, n) * (cbd + x0);
        if cbd > cbd_bound {
            notes.push(format!("spot check at n = {n}: sampled norm {cbd:.4} exceeds its bound {cbd_bound:.4}"));
        }
        if chain > k {
            notes.push(format!("spot check at n = {n}: chain estimate {chain:.4} exceeds K = {k:.4}"));
        }
        spot_checks.push(SpotCheck {
            n,
            samples: SPOT_SAMPLES,
            cbd_estimate: cbd,
            cbd_bound,
            xi0_estimate: x0,
            chain_estimate: chain,
            below_k: chain <= k,
        });
    }
    let passes = (nn as f64) > thr && k < 1.0;
    if !passes {
        notes.push(format!("not certified: N = {nn}, threshold = {thr:.3}, K = {k:.6}"));
    }
    Ok(Certificate {
        mu,
        n_period: nn,
        delta,
        dist_rows,
        cutoff_norms,
        k,
        k_sampled,
        threshold: thr,
        spot_checks,
        passes,
        notes,
    })
}

impl Certificate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("mu = {}  N = {}  delta = {}\n", self.mu, self.n_period, self.delta));
        s.push_str(&format!("{:<42} {:>12} {:>8} {:>4}\n", "cutoff norm", "computed", "bound", "ok"));
        for c in &self.cutoff_norms {
            s.push_str(&format!("{:<42} {:>12.6} {:>8} {:>4}\n", c.name, c.computed, c.bound, c.ok));
        }
        s.push_str(&format!("{:>8} {:>3} {:>14} {:>14} {:>14} {:>6}\n", "n", "br", "exact", "lower", "upper", "flag"));
        for r in &self.dist_rows {
            let br = if r.branch == Branch::Plus { "+" } else { "-" };
            s.push_str(&format!(
                "{:>8} {:>3} {:>14.6} {:>14.6} {:>14.6} {:>6}\n",
                r.n, br, r.exact, r.bound_lower, r.bound_upper, r.flagged
            ));
        }
        for sc in &self.spot_checks {
            s.push_str(&format!(
                "spot check n = {}: C_b^delta {:.4} (bound {:.4}), xi0 {:.4}, chain {:.3e} (K = {:.6})\n",
                sc.n, sc.cbd_estimate, sc.cbd_bound, sc.xi0_estimate, sc.chain_estimate, self.k
            ));
        }
        s.push_str(&format!("K = {:.9}  K(sampled) = {:.9}  threshold = {:.6}\n", self.k, self.k_sampled, self.threshold));
        s.push_str(&format!("passes = {}\n", self.passes));
        for n in &self.notes {
            s.push_str(&format!("note: {n}\n"));
        }
        s
    }
}
