//! Radial grids on `[0, inf)`, the cutoff functions `xi0` / `xi_inf`, profile
//! containers and the layered norms `C_b`, `C_b^delta`, `W_-`, `W_0`, `W_+`, `A^s`.
//!
//! A radial profile is stored by its values at Chebyshev–Lobatto points in
//! `s = beta / (L + beta)`, plus the structural value at `s = 1` (beta = inf).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Scalar parameters of the problem and discretization controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub mu: f64,
    #[serde(rename = "N")]
    pub n_period: u32,
    pub p: f64,
    pub delta: f64,
    /// Modes kept are `k * N` for `|k| <= harmonics`.
    pub harmonics: usize,
    pub grid_points: usize,
    pub grid_scale: f64,
}

pub fn delta_for(mu: f64) -> f64 {
    0.5 * (2.0 * mu - 1.0).min(1.0)
}

/// Radial map scale keeping `N * beta_max` near 1e6 for the default grid, where the
/// far-field rows are still asymptotic but round-off from `(n beta)^2` stays small.
pub fn default_grid_scale(n_period: u32, grid_points: usize) -> f64 {
    let m = grid_points as f64;
    let s = 1.0e6 * PI * PI / (4.0 * m * m * n_period.max(1) as f64);
    s.min(1.0)
}

impl SolverParams {
    pub fn new(mu: f64, n_period: u32) -> Result<Self> {
        let grid_points = 257;
        let p = SolverParams {
            mu,
            n_period,
            p: 1.0,
            delta: delta_for(mu),
            harmonics: 3,
            grid_points,
            grid_scale: default_grid_scale(n_period, grid_points),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_p(mut self, p: f64) -> Result<Self> {
        self.p = p;
        self.validate()?;
        Ok(self)
    }

    pub fn with_grid(mut self, grid_points: usize, grid_scale: f64) -> Result<Self> {
        self.grid_points = grid_points;
        self.grid_scale = grid_scale;
        self.validate()?;
        Ok(self)
    }

    pub fn with_harmonics(mut self, k: usize) -> Result<Self> {
        self.harmonics = k;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 2.0 / 3.0) {
            return Err(Error::Parameter(format!("mu must exceed 2/3, got {}", self.mu)));
        }
        if self.n_period < 2 {
            return Err(Error::Parameter(format!("N must be at least 2, got {}", self.n_period)));
        }
        if !(self.p >= 1.0 && self.p < 2.0 * self.mu) {
            return Err(Error::Parameter(format!(
                "p must lie in [1, 2mu) = [1, {}), got {}",
                2.0 * self.mu,
                self.p
            )));
        }
        if self.delta != delta_for(self.mu) {
            return Err(Error::Parameter(format!(
                "delta must equal 0.5*min(2mu-1,1) = {}, got {}",
                delta_for(self.mu),
                self.delta
            )));
        }
        if self.harmonics == 0 {
            return Err(Error::Parameter("harmonics must be positive".into()));
        }
        if self.grid_points < 16 {
            return Err(Error::Parameter(format!(
                "grid_points must be at least 16, got {}",
                self.grid_points
            )));
        }
        if !(self.grid_scale.is_finite() && self.grid_scale > 0.0) {
            return Err(Error::Parameter(format!(
                "grid_scale must be positive, got {}",
                self.grid_scale
            )));
        }
        for n in self.mode_indices() {
            for s in [(2 + n) as f64 * self.mu - 1.0, (2 - n) as f64 * self.mu - 1.0] {
                if s.abs() < 1e-12 {
                    return Err(Error::DegenerateShift(format!("shift vanishes for n = {n}")));
                }
            }
        }
        Ok(())
    }

    /// Mode indices `k * N`, `k = -K..=K`, in increasing order.
    pub fn mode_indices(&self) -> Vec<i64> {
        let k = self.harmonics as i64;
        (-k..=k).map(|j| j * self.n_period as i64).collect()
    }

    pub fn psibar0(&self) -> f64 {
        1.0 / (2.0 * self.mu - 1.0)
    }

    pub fn omega0(&self) -> f64 {
        2.0 - 1.0 / self.mu
    }
}

/// Japanese bracket `(1 + n^2)^(1/2)`.
pub fn bracket(n: f64) -> f64 {
    (1.0 + n * n).sqrt()
}

/// Radial grid: finite nodes of the Chebyshev–Lobatto set mapped by
/// `beta = scale * s / (1 - s)`. The endpoint `s = 1` is kept only in `s`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub map_scale: f64,
    s: Vec<f64>,
    /// `1 - s` at the nodes, computed directly so differences near `s = 1` keep their digits.
    #[serde(default)]
    t: Vec<f64>,
}

pub fn build_grid(m: usize, scale: f64) -> Result<RadialGrid> {
    if m < 16 {
        return Err(Error::Parameter(format!("grid needs M >= 16, got {m}")));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Parameter(format!("grid scale must be positive, got {scale}")));
    }
    let s: Vec<f64> = (0..=m)
        .map(|j| 0.5 * (1.0 - (PI * j as f64 / m as f64).cos()))
        .collect();
    let t: Vec<f64> = (0..=m)
        .map(|j| 0.5 * (1.0 + (PI * j as f64 / m as f64).cos()))
        .collect();
    let cc = clenshaw_curtis(m);
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for j in 0..m {
        let sj = s[j];
        nodes.push(scale * sj / (1.0 - sj));
        weights.push(0.5 * cc[j] * scale / ((1.0 - sj) * (1.0 - sj)));
    }
    Ok(RadialGrid { nodes, weights, map_scale: scale, s, t })
}

/// Clenshaw–Curtis weights on [-1, 1] for the points `cos(pi j / m)`.
fn clenshaw_curtis(m: usize) -> Vec<f64> {
    let mf = m as f64;
    let mut w = vec![0.0; m + 1];
    let theta: Vec<f64> = (0..=m).map(|j| PI * j as f64 / mf).collect();
    let mut v = vec![1.0; m + 1];
    if m % 2 == 0 {
        w[0] = 1.0 / (mf * mf - 1.0);
        w[m] = w[0];
        for k in 1..m / 2 {
            let kf = k as f64;
            for j in 1..m {
                v[j] -= 2.0 * (2.0 * kf * theta[j]).cos() / (4.0 * kf * kf - 1.0);
            }
        }
        for j in 1..m {
            v[j] -= (mf * theta[j]).cos() / (mf * mf - 1.0);
        }
    } else {
        w[0] = 1.0 / (mf * mf);
        w[m] = w[0];
        for k in 1..=(m - 1) / 2 {
            let kf = k as f64;
            for j in 1..m {
                v[j] -= 2.0 * (2.0 * kf * theta[j]).cos() / (4.0 * kf * kf - 1.0);
            }
        }
    }
    for j in 1..m {
        w[j] = 2.0 * v[j] / mf;
    }
    w
}

impl RadialGrid {
    /// Number of finite nodes `M`.
    pub fn m(&self) -> usize {
        self.nodes.len()
    }

    /// All `M + 1` collocation points in `s`, the last one being `s = 1`.
    pub fn s_points(&self) -> &[f64] {
        &self.s
    }

    /// Node values extended with `beta = inf` as entry `M`.
    pub fn beta_ext(&self) -> Vec<f64> {
        let mut b = self.nodes.clone();
        b.push(f64::INFINITY);
        b
    }

    pub fn s_of_beta(&self, beta: f64) -> f64 {
        if beta.is_infinite() {
            1.0
        } else {
            beta / (self.map_scale + beta)
        }
    }

    /// Spectral differentiation matrix in `s` on all `M + 1` points.
    pub fn diff_matrix(&self) -> DMatrix<f64> {
        let m = self.m();
        let np = m + 1;
        let x: Vec<f64> = self.s.iter().map(|s| 2.0 * s - 1.0).collect();
        let c: Vec<f64> = (0..np)
            .map(|j| {
                let e = if j == 0 || j == m { 2.0 } else { 1.0 };
                if j % 2 == 0 { e } else { -e }
            })
            .collect();
        let mut d = DMatrix::<f64>::zeros(np, np);
        for i in 0..np {
            let mut row = 0.0;
            for j in 0..np {
                if i != j {
                    let v = c[i] / c[j] / (x[i] - x[j]);
                    d[(i, j)] = v;
                    row += v;
                }
            }
            d[(i, i)] = -row;
        }
        d * 2.0
    }

    /// Barycentric weights of the Lobatto points.
    pub fn bary_weights(&self) -> Vec<f64> {
        let m = self.m();
        (0..=m)
            .map(|j| {
                let h = if j == 0 || j == m { 0.5 } else { 1.0 };
                if j % 2 == 0 { h } else { -h }
            })
            .collect()
    }

    /// Interpolation row: values at `beta` are `row . nodal`.
    pub fn interp_row(&self, beta: f64) -> Vec<f64> {
        self.interp_row_with(&self.bary_weights(), beta)
    }

    /// Barycentric row at `beta`, differencing in `1 - s` on the right half of the nodes.
    fn interp_row_with(&self, w: &[f64], beta: f64) -> Vec<f64> {
        let s = self.s_of_beta(beta);
        if self.t.len() != self.s.len() || s <= 0.5 {
            return interp_row_s(&self.s, w, s);
        }
        let t = if beta.is_infinite() { 0.0 } else { self.map_scale / (self.map_scale + beta) };
        let diff: Vec<f64> = (0..self.s.len())
            .map(|j| if self.s[j] <= 0.5 { s - self.s[j] } else { self.t[j] - t })
            .collect();
        interp_row_diff(&diff, w)
    }

    /// Samples refining the node set by `factor`, in increasing order, all finite.
    pub fn refined_betas(&self, factor: usize) -> Vec<f64> {
        let mr = self.m() * factor.max(1);
        let mut out: Vec<f64> = (0..mr)
            .map(|j| {
                let s = 0.5 * (1.0 - (PI * j as f64 / mr as f64).cos());
                self.map_scale * s / (1.0 - s)
            })
            .collect();
        out.extend_from_slice(&self.nodes);
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }
}

pub(crate) fn interp_row_s(nodes: &[f64], w: &[f64], s: f64) -> Vec<f64> {
    let diff: Vec<f64> = nodes.iter().map(|sj| s - sj).collect();
    interp_row_diff(&diff, w)
}

/// Barycentric row from the differences `s - s_j`.
fn interp_row_diff(diff: &[f64], w: &[f64]) -> Vec<f64> {
    let mut row = vec![0.0; diff.len()];
    if let Some(j) = diff.iter().position(|&d| d == 0.0) {
        row[j] = 1.0;
        return row;
    }
    let mut den = 0.0;
    for j in 0..diff.len() {
        let t = w[j] / diff[j];
        row[j] = t;
        den += t;
    }
    for r in row.iter_mut() {
        *r /= den;
    }
    row
}

// ---------------------------------------------------------------- cutoffs

fn gl_rule(n: usize) -> &'static [(f64, f64)] {
    static R64: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    static R200: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    let build = |k: usize| {
        GaussLegendre::new(NonZeroUsize::new(k).unwrap())
            .as_node_weight_pairs()
            .to_vec()
    };
    match n {
        64 => R64.get_or_init(|| build(64)),
        _ => R200.get_or_init(|| build(200)),
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1], for arbitrary order.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap())
        .as_node_weight_pairs()
        .to_vec()
}

fn bump_raw(b: f64) -> f64 {
    if b <= 1.0 || b >= 2.0 {
        return 0.0;
    }
    let d = (b - 1.5) * (b - 1.5) - 0.25;
    (1.0 / d).exp()
}

/// Normalizing constant of `eta` (integral over (1,2) equal to one).
pub fn eta_constant() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        // y = 2(beta - 3/2): integral = (1/2) int_{-1}^{1} exp(-4/(1-y^2)) dy, split at 0.
        let mut acc = 0.0;
        for &(a, b) in &[(-1.0, 0.0), (0.0, 1.0)] {
            let h = 0.5 * (b - a);
            let c = 0.5 * (b + a);
            for &(x, w) in gl_rule(200) {
                let y: f64 = c + h * x;
                acc += w * h * (-4.0 / (1.0 - y * y)).exp();
            }
        }
        1.0 / (0.5 * acc)
    })
}

pub fn eta(b: f64) -> f64 {
    eta_constant() * bump_raw(b)
}

pub fn eta_prime(b: f64) -> f64 {
    if b <= 1.0 || b >= 2.0 {
        return 0.0;
    }
    let d = (b - 1.5) * (b - 1.5) - 0.25;
    eta(b) * (-2.0 * (b - 1.5) / (d * d))
}

pub fn xi_inf(b: f64) -> f64 {
    if b <= 1.0 {
        return 0.0;
    }
    if b >= 2.0 {
        return 1.0;
    }
    // Integrate from the nearer end of the support.
    if b <= 1.5 {
        integrate_eta(1.0, b)
    } else {
        1.0 - integrate_eta(b, 2.0)
    }
}

pub fn xi0(b: f64) -> f64 {
    if b <= 1.0 {
        return 1.0;
    }
    if b >= 2.0 {
        return 0.0;
    }
    if b <= 1.5 {
        1.0 - integrate_eta(1.0, b)
    } else {
        integrate_eta(b, 2.0)
    }
}

fn integrate_eta(a: f64, b: f64) -> f64 {
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    gl_rule(64).iter().map(|&(x, w)| w * h * eta(c + h * x)).sum()
}

/// Cutoff functions and the derived quantities used by the norm table, at each node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CutoffSamples {
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub xi0: Vec<f64>,
    pub xi_inf: Vec<f64>,
    pub beta_xi0: Vec<f64>,
    pub beta_dxi0: Vec<f64>,
    pub beta2_dxi0: Vec<f64>,
    pub beta2_d2xi0: Vec<f64>,
    pub dxi_inf: Vec<f64>,
    pub xi_inf_over_beta: Vec<f64>,
}

pub fn sample_cutoffs(grid: &RadialGrid) -> CutoffSamples {
    sample_cutoffs_at(&grid.nodes)
}

pub fn sample_cutoffs_at(betas: &[f64]) -> CutoffSamples {
    let mut c = CutoffSamples {
        beta: betas.to_vec(),
        eta: vec![],
        xi0: vec![],
        xi_inf: vec![],
        beta_xi0: vec![],
        beta_dxi0: vec![],
        beta2_dxi0: vec![],
        beta2_d2xi0: vec![],
        dxi_inf: vec![],
        xi_inf_over_beta: vec![],
    };
    for &b in betas {
        let e = eta(b);
        let x0 = xi0(b);
        let xi = xi_inf(b);
        c.eta.push(e);
        c.xi0.push(x0);
        c.xi_inf.push(xi);
        c.beta_xi0.push(b * x0);
        c.beta_dxi0.push(-b * e);
        c.beta2_dxi0.push(-b * b * e);
        c.beta2_d2xi0.push(-b * b * eta_prime(b));
        c.dxi_inf.push(e);
        c.xi_inf_over_beta.push(if b > 0.0 { xi / b } else { 0.0 });
    }
    c
}

// ---------------------------------------------------------------- profiles

/// Collocation data shared by every profile on one grid.
#[derive(Clone, Debug)]
pub struct Basis {
    pub grid: RadialGrid,
    /// `xi0`, `xi_inf` at the finite nodes.
    pub xi0: Vec<f64>,
    pub xi_inf: Vec<f64>,
    bary: Vec<f64>,
}

impl Basis {
    pub fn new(m: usize, scale: f64) -> Result<Self> {
        let grid = build_grid(m, scale)?;
        Ok(Self::from_grid(grid))
    }

    pub fn from_params(p: &SolverParams) -> Result<Self> {
        Self::new(p.grid_points, p.grid_scale)
    }

    pub fn from_grid(grid: RadialGrid) -> Self {
        let xi0 = grid.nodes.iter().map(|&b| xi0(b)).collect();
        let xi_inf = grid.nodes.iter().map(|&b| xi_inf(b)).collect();
        let bary = grid.bary_weights();
        Basis { grid, xi0, xi_inf, bary }
    }

    pub fn m(&self) -> usize {
        self.grid.m()
    }

    pub fn interp_row(&self, beta: f64) -> Vec<f64> {
        self.grid.interp_row_with(&self.bary, beta)
    }

    /// Interpolate an `M + 1` nodal vector at `beta`.
    pub fn interp(&self, nodal: &[C64], beta: f64) -> C64 {
        let row = self.interp_row(beta);
        row.iter().zip(nodal).map(|(r, v)| v * *r).sum()
    }
}

/// One Fourier mode's radial function, `f = core + c0 xi0 + cinf xi_inf + cconst`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeProfile {
    pub n: i64,
    pub core: Vec<C64>,
    pub c0: C64,
    pub cinf: C64,
    pub cconst: C64,
}

impl ModeProfile {
    pub fn zero(n: i64, m: usize) -> Self {
        ModeProfile {
            n,
            core: vec![C64::new(0.0, 0.0); m],
            c0: C64::new(0.0, 0.0),
            cinf: C64::new(0.0, 0.0),
            cconst: C64::new(0.0, 0.0),
        }
    }

    /// Canonical decomposition of nodal values (length `M + 1`, last entry at inf).
    /// `n != 0`: `c0 = f(0)`, `cinf = f(inf)`; `n == 0`: `cconst = f(inf)`, `c0 = f(0) - f(inf)`.
    pub fn from_nodal(n: i64, basis: &Basis, v: &[C64]) -> Self {
        let m = basis.m();
        assert_eq!(v.len(), m + 1, "nodal vector length");
        let (c0, cinf, cconst) = if n != 0 {
            (v[0], v[m], C64::new(0.0, 0.0))
        } else {
            (v[0] - v[m], C64::new(0.0, 0.0), v[m])
        };
        let core = (0..m)
            .map(|j| v[j] - c0 * basis.xi0[j] - cinf * basis.xi_inf[j] - cconst)
            .collect();
        ModeProfile { n, core, c0, cinf, cconst }
    }

    pub fn to_nodal(&self, basis: &Basis) -> Vec<C64> {
        let m = basis.m();
        let mut v: Vec<C64> = (0..m)
            .map(|j| self.core[j] + self.c0 * basis.xi0[j] + self.cinf * basis.xi_inf[j] + self.cconst)
            .collect();
        v.push(self.cinf + self.cconst);
        v
    }

    /// Value at an arbitrary `beta` (interpolating the smooth nodal function).
    pub fn eval(&self, basis: &Basis, beta: f64) -> C64 {
        basis.interp(&self.to_nodal(basis), beta)
    }

    /// Extended coordinate vector `[core; c0; cinf; cconst]`.
    pub fn to_extended(&self) -> Vec<C64> {
        let mut v = self.core.clone();
        v.push(self.c0);
        v.push(self.cinf);
        v.push(self.cconst);
        v
    }

    pub fn from_extended(n: i64, x: &[C64]) -> Self {
        let m = x.len() - 3;
        ModeProfile {
            n,
            core: x[..m].to_vec(),
            c0: x[m],
            cinf: x[m + 1],
            cconst: x[m + 2],
        }
    }

    pub fn scale(&self, a: C64) -> Self {
        ModeProfile {
            n: self.n,
            core: self.core.iter().map(|c| c * a).collect(),
            c0: self.c0 * a,
            cinf: self.cinf * a,
            cconst: self.cconst * a,
        }
    }

    pub fn conj(&self) -> Self {
        ModeProfile {
            n: -self.n,
            core: self.core.iter().map(|c| c.conj()).collect(),
            c0: self.c0.conj(),
            cinf: self.cinf.conj(),
            cconst: self.cconst.conj(),
        }
    }
}

/// Norm variants of the layered radial spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormVariant {
    Cb,
    Cbdelta,
    Wminus,
    Wzero,
    Wplus,
}

/// Refinement factor of the sup-norm sampling grid.
pub const SUP_REFINE: usize = 4;

fn cbd_weight(beta: f64, delta: f64) -> f64 {
    beta.powf(delta).max(beta.powf(-delta))
}

/// Weighted sup of the core part on a refined grid; `inf` when the core is
/// nonzero at `beta = 0`.
fn core_sup_cbd(f: &ModeProfile, basis: &Basis, delta: f64, refine: usize) -> f64 {
    if f.core[0].norm() > 0.0 {
        return f64::INFINITY;
    }
    let nodal = f.to_nodal(basis);
    let mut sup: f64 = 0.0;
    for b in basis.grid.refined_betas(refine) {
        if b == 0.0 {
            continue;
        }
        let full = basis.interp(&nodal, b);
        let core = full - f.c0 * xi0(b) - f.cinf * xi_inf(b) - f.cconst;
        sup = sup.max(core.norm() * cbd_weight(b, delta));
    }
    sup
}

pub fn mode_norm(f: &ModeProfile, variant: NormVariant, delta: f64, basis: &Basis) -> Result<f64> {
    mode_norm_refined(f, variant, delta, basis, SUP_REFINE)
}

pub fn mode_norm_refined(
    f: &ModeProfile,
    variant: NormVariant,
    delta: f64,
    basis: &Basis,
    refine: usize,
) -> Result<f64> {
    let nz = |c: C64| c.norm() != 0.0;
    let forbid = |cond: bool, what: &str| -> Result<()> {
        if cond {
            Err(Error::Structure(format!(
                "{what} not admitted by {variant:?} at n = {}",
                f.n
            )))
        } else {
            Ok(())
        }
    };
    match variant {
        NormVariant::Cb => {
            let nodal = f.to_nodal(basis);
            let mut sup = nodal[basis.m()].norm();
            for b in basis.grid.refined_betas(refine) {
                sup = sup.max(basis.interp(&nodal, b).norm());
            }
            Ok(sup)
        }
        NormVariant::Cbdelta => {
            forbid(nz(f.c0), "xi0 component")?;
            forbid(nz(f.cinf), "xi_inf component")?;
            forbid(nz(f.cconst), "constant component")?;
            Ok(core_sup_cbd(f, basis, delta, refine))
        }
        NormVariant::Wminus => {
            forbid(nz(f.cinf), "xi_inf component")?;
            forbid(nz(f.cconst), "constant component")?;
            forbid(f.n != 0 && nz(f.c0), "xi0 component")?;
            Ok(core_sup_cbd(f, basis, delta, refine) + f.c0.norm())
        }
        NormVariant::Wzero => {
            forbid(nz(f.cinf), "xi_inf component")?;
            forbid(f.n != 0 && nz(f.cconst), "constant component")?;
            Ok(core_sup_cbd(f, basis, delta, refine) + f.c0.norm() + f.cconst.norm())
        }
        NormVariant::Wplus => {
            forbid(f.n != 0 && nz(f.cconst), "constant component")?;
            // For n = 0 a constant is xi0 + xi_inf.
            let c0 = f.c0 + f.cconst;
            let ci = f.cinf + f.cconst;
            let g = ModeProfile {
                n: f.n,
                core: f.core.clone(),
                c0,
                cinf: ci,
                cconst: C64::new(0.0, 0.0),
            };
            Ok(core_sup_cbd(&g, basis, delta, refine) + c0.norm() + ci.norm())
        }
    }
}

/// The full profile field: one `ModeProfile` per retained mode, sorted by `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub params: SolverParams,
    pub modes: Vec<ModeProfile>,
}

#[derive(Serialize, Deserialize)]
struct FieldDoc {
    mu: f64,
    #[serde(rename = "N")]
    n_period: u32,
    params: SolverParams,
    grid: Vec<f64>,
    modes: Vec<ModeProfile>,
}

impl SpectralField {
    pub fn zeros(params: &SolverParams) -> Self {
        let m = params.grid_points;
        SpectralField {
            params: params.clone(),
            modes: params.mode_indices().into_iter().map(|n| ModeProfile::zero(n, m)).collect(),
        }
    }

    /// The trivial profile `psibar0 = 1/(2 mu - 1)`.
    pub fn trivial(params: &SolverParams) -> Self {
        let mut f = Self::zeros(params);
        f.mode_mut(0).unwrap().cconst = C64::new(params.psibar0(), 0.0);
        f
    }

    pub fn mode(&self, n: i64) -> Option<&ModeProfile> {
        self.modes.iter().find(|m| m.n == n)
    }

    pub fn mode_mut(&mut self, n: i64) -> Option<&mut ModeProfile> {
        self.modes.iter_mut().find(|m| m.n == n)
    }

    pub fn from_nodal(params: &SolverParams, basis: &Basis, nodal: &[(i64, Vec<C64>)]) -> Self {
        let mut modes: Vec<ModeProfile> = nodal
            .iter()
            .map(|(n, v)| ModeProfile::from_nodal(*n, basis, v))
            .collect();
        modes.sort_by_key(|m| m.n);
        SpectralField { params: params.clone(), modes }
    }

    pub fn to_nodal(&self, basis: &Basis) -> Vec<(i64, Vec<C64>)> {
        self.modes.iter().map(|m| (m.n, m.to_nodal(basis))).collect()
    }

    /// Checks the structural invariants: mode lattice and conjugate symmetry.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let nn = self.params.n_period as i64;
        for m in &self.modes {
            if m.n % nn != 0 {
                return Err(Error::Structure(format!("mode {} not divisible by N = {nn}", m.n)));
            }
            if m.n != 0 && m.cconst.norm() != 0.0 {
                return Err(Error::Structure(format!("constant component in mode {}", m.n)));
            }
            if let Some(o) = self.mode(-m.n) {
                let c = o.conj();
                let d = m
                    .to_extended()
                    .iter()
                    .zip(c.to_extended())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                if d > tol {
                    return Err(Error::Structure(format!(
                        "modes {} and {} not conjugate (gap {d:.3e})",
                        m.n, -m.n
                    )));
                }
            } else {
                return Err(Error::Structure(format!("mode {} has no partner", -m.n)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let grid = build_grid(self.params.grid_points, self.params.grid_scale)?;
        let doc = FieldDoc {
            mu: self.params.mu,
            n_period: self.params.n_period,
            params: self.params.clone(),
            grid: grid.nodes,
            modes: self.modes.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: FieldDoc = serde_json::from_str(s)?;
        doc.params.validate()?;
        if doc.modes.iter().any(|m| m.core.len() != doc.params.grid_points) {
            return Err(Error::Structure("core length differs from grid_points".into()));
        }
        Ok(SpectralField { params: doc.params, modes: doc.modes })
    }

    pub fn axpy(&self, a: f64, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        for m in out.modes.iter_mut() {
            if let Some(o) = other.mode(m.n) {
                for (c, d) in m.core.iter_mut().zip(&o.core) {
                    *c += d * a;
                }
                m.c0 += o.c0 * a;
                m.cinf += o.cinf * a;
                m.cconst += o.cconst * a;
            }
        }
        out
    }
}

/// Angular signal `Omega(phi) = sum_n coeff(n) e^{i n phi}` on the lattice `N Z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularSignal {
    #[serde(rename = "N")]
    pub n_period: u32,
    pub coeffs: BTreeMap<i64, C64>,
}

impl AngularSignal {
    pub fn constant(c: f64, n_period: u32) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(0, C64::new(c, 0.0));
        AngularSignal { n_period, coeffs }
    }

    /// `c + amplitude * cos(harmonic * phi)`.
    pub fn constant_plus_cos(c: f64, amplitude: f64, harmonic: i64, n_period: u32) -> Result<Self> {
        if harmonic % n_period as i64 != 0 {
            return Err(Error::Parameter(format!(
                "harmonic {harmonic} is not a multiple of N = {n_period}"
            )));
        }
        let mut s = Self::constant(c, n_period);
        if harmonic != 0 {
            s.coeffs.insert(harmonic, C64::new(0.5 * amplitude, 0.0));
            s.coeffs.insert(-harmonic, C64::new(0.5 * amplitude, 0.0));
        } else {
            *s.coeffs.get_mut(&0).unwrap() += amplitude;
        }
        Ok(s)
    }

    pub fn from_coeffs(n_period: u32, coeffs: impl IntoIterator<Item = (i64, C64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, c) in coeffs {
            if n % n_period as i64 != 0 {
                return Err(Error::Parameter(format!("mode {n} is not a multiple of N = {n_period}")));
            }
            *map.entry(n).or_insert(C64::new(0.0, 0.0)) += c;
        }
        Ok(AngularSignal { n_period, coeffs: map })
    }

    pub fn coeff(&self, n: i64) -> C64 {
        self.coeffs.get(&n).copied().unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn max_mode(&self) -> i64 {
        self.coeffs.keys().map(|n| n.abs()).max().unwrap_or(0)
    }

    /// Real part of the Fourier sum.
    pub fn eval(&self, phi: f64) -> f64 {
        self.coeffs
            .iter()
            .map(|(n, c)| (c * C64::from_polar(1.0, *n as f64 * phi)).re)
            .sum()
    }

    pub fn eval_deriv(&self, phi: f64) -> f64 {
        self.coeffs
            .iter()
            .map(|(n, c)| (c * C64::new(0.0, *n as f64) * C64::from_polar(1.0, *n as f64 * phi)).re)
            .sum()
    }

    pub fn is_conjugate_symmetric(&self, tol: f64) -> bool {
        self.coeffs
            .iter()
            .all(|(n, c)| (self.coeff(-n).conj() - c).norm() <= tol)
    }

    /// `L^p(T)` norm by trapezoidal quadrature over one period, times `N`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let per = 2.0 * PI / self.n_period as f64;
        let nq = 4096;
        let h = per / nq as f64;
        let sum: f64 = (0..nq).map(|j| self.eval(j as f64 * h).abs().powf(p)).sum();
        (sum * h * self.n_period as f64).powf(1.0 / p)
    }

    pub fn sub(&self, other: &AngularSignal) -> AngularSignal {
        let mut out = self.clone();
        for (n, c) in &other.coeffs {
            *out.coeffs.entry(*n).or_insert(C64::new(0.0, 0.0)) -= c;
        }
        out
    }

    pub fn add_scaled(&self, a: f64, other: &AngularSignal) -> AngularSignal {
        let mut out = self.clone();
        for (n, c) in &other.coeffs {
            *out.coeffs.entry(*n).or_insert(C64::new(0.0, 0.0)) += c * a;
        }
        out
    }

    pub fn scale(&self, a: f64) -> AngularSignal {
        AngularSignal {
            n_period: self.n_period,
            coeffs: self.coeffs.iter().map(|(n, c)| (*n, c * a)).collect(),
        }
    }
}

/// Objects carrying an `A^s` norm.
pub trait SpectralNorm {
    /// `sum_n <n>^s * |mode n|`, optionally skipping `n = 0`.
    fn weighted_sum(&self, s: f64, skip_zero: bool) -> Result<f64>;
}

impl SpectralNorm for AngularSignal {
    fn weighted_sum(&self, s: f64, skip_zero: bool) -> Result<f64> {
        Ok(self
            .coeffs
            .iter()
            .filter(|(n, _)| !(skip_zero && **n == 0))
            .map(|(n, c)| bracket(*n as f64).powf(s) * c.norm())
            .sum())
    }
}

/// A `SpectralField` paired with the per-mode norm used inside the `A^s` sum.
pub struct FieldNorm<'a> {
    pub field: &'a SpectralField,
    pub basis: &'a Basis,
    pub variant: NormVariant,
}

impl SpectralNorm for FieldNorm<'_> {
    fn weighted_sum(&self, s: f64, skip_zero: bool) -> Result<f64> {
        let mut acc = 0.0;
        for m in &self.field.modes {
            if skip_zero && m.n == 0 {
                continue;
            }
            acc += bracket(m.n as f64).powf(s)
                * mode_norm(m, self.variant, self.field.params.delta, self.basis)?;
        }
        Ok(acc)
    }
}

pub fn spectral_norm<T: SpectralNorm>(f: &T, s: f64) -> Result<f64> {
    f.weighted_sum(s, false)
}

pub fn spectral_seminorm<T: SpectralNorm>(f: &T, s: f64) -> Result<f64> {
    f.weighted_sum(s, true)
}
