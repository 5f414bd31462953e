//! Mode operators `Q = beta d_beta`, `P^n = beta (d_beta - i n)`, `D^(n,s) = P^n - s`,
//! the bar derivatives, and the linearization at the trivial profile.
//!
//! All matrices act on the `M + 1` nodal values of a profile (last entry at
//! `beta = inf`). Row `M` of the `beta`-multiplication matrix holds
//! `lim beta f(beta)`, which is finite for the decaying profiles of nonzero modes.

use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid_space::{gauss_legendre, Basis, ModeProfile, SolverParams, SpectralField, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

fn ic(n: i64) -> C64 {
    C64::new(0.0, n as f64)
}

/// Real matrix times complex vector.
pub fn real_matvec(a: &DMatrix<f64>, v: &[C64]) -> Vec<C64> {
    let mut out = vec![ZERO; a.nrows()];
    for j in 0..a.ncols() {
        let vj = v[j];
        if vj == ZERO {
            continue;
        }
        for (o, &aij) in out.iter_mut().zip(a.column(j).iter()) {
            *o += vj * aij;
        }
    }
    out
}

pub fn complex_matvec(a: &DMatrix<C64>, v: &[C64]) -> Vec<C64> {
    let x = nalgebra::DVector::from_column_slice(v);
    (a * x).as_slice().to_vec()
}

fn to_complex(a: &DMatrix<f64>) -> DMatrix<C64> {
    a.map(|x| C64::new(x, 0.0))
}

/// Collocation matrices shared by all modes on one grid.
#[derive(Clone, Debug)]
pub struct RadialOps {
    pub basis: Basis,
    /// `d/ds` on all `M + 1` points.
    pub ds: DMatrix<f64>,
    /// `beta d_beta = s (1 - s) d_s`.
    pub q: DMatrix<f64>,
    /// Multiplication by `beta`.
    pub b0: DMatrix<f64>,
}

impl RadialOps {
    pub fn new(basis: Basis) -> Self {
        let m = basis.m();
        let ds = basis.grid.diff_matrix();
        let s = basis.grid.s_points().to_vec();
        let mut q = ds.clone();
        for i in 0..=m {
            let w = s[i] * (1.0 - s[i]);
            for j in 0..=m {
                q[(i, j)] *= w;
            }
        }
        let mut b0 = DMatrix::<f64>::zeros(m + 1, m + 1);
        for i in 0..m {
            b0[(i, i)] = basis.grid.nodes[i];
        }
        // f ~ c (1 - s) near s = 1 gives beta f -> -L f'(1).
        let l = basis.grid.map_scale;
        for j in 0..=m {
            b0[(m, j)] = -l * ds[(m, j)];
        }
        RadialOps { basis, ds, q, b0 }
    }

    pub fn from_params(p: &SolverParams) -> Result<Self> {
        Ok(Self::new(Basis::from_params(p)?))
    }

    pub fn m(&self) -> usize {
        self.basis.m()
    }

    pub fn q_complex(&self) -> DMatrix<C64> {
        to_complex(&self.q)
    }

    pub fn p(&self, n: i64) -> DMatrix<C64> {
        let mut p = to_complex(&self.q);
        if n != 0 {
            p -= to_complex(&self.b0) * ic(n);
        }
        p
    }

    pub fn d(&self, n: i64, s: f64) -> DMatrix<C64> {
        let mut d = self.p(n);
        for i in 0..d.nrows() {
            d[(i, i)] -= s;
        }
        d
    }

    pub fn apply_q(&self, v: &[C64]) -> Vec<C64> {
        real_matvec(&self.q, v)
    }

    pub fn apply_p(&self, n: i64, v: &[C64]) -> Vec<C64> {
        let mut out = real_matvec(&self.q, v);
        if n != 0 {
            let b = real_matvec(&self.b0, v);
            for (o, bv) in out.iter_mut().zip(b) {
                *o -= ic(n) * bv;
            }
        }
        out
    }

    pub fn apply_d(&self, n: i64, s: f64, v: &[C64]) -> Vec<C64> {
        let mut out = self.apply_p(n, v);
        for (o, x) in out.iter_mut().zip(v) {
            *o -= x * s;
        }
        out
    }

    pub fn solve_d(&self, n: i64, s: f64, f: &[C64]) -> Result<Vec<C64>> {
        if s == 0.0 {
            return Err(Error::Singular(format!("D^({n},0) has no bounded inverse")));
        }
        let lu = self.d(n, s).lu();
        let x = lu
            .solve(&nalgebra::DVector::from_column_slice(f))
            .ok_or_else(|| Error::Solve(format!("collocation matrix of D^({n},{s}) is singular")))?;
        Ok(x.as_slice().to_vec())
    }
}

/// The five bar-derivative combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BarKind {
    DbetaBar,
    DvarphiBar,
    Dphi,
    DphiDbetaBar,
    Dvarphi1DbetaBar,
}

impl FromStr for BarKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dbeta_bar" => BarKind::DbetaBar,
            "dvarphi_bar" => BarKind::DvarphiBar,
            "dphi" => BarKind::Dphi,
            "dphi_dbeta_bar" => BarKind::DphiDbetaBar,
            "dvarphi1_dbeta_bar" => BarKind::Dvarphi1DbetaBar,
            other => return Err(Error::Parameter(format!("unknown derivative kind '{other}'"))),
        })
    }
}

/// Nodal action of a bar derivative on mode `n`.
pub fn bar_nodal(ops: &RadialOps, kind: BarKind, n: i64, mu: f64, v: &[C64]) -> Vec<C64> {
    let dbeta = |v: &[C64]| -> Vec<C64> {
        let mut q = ops.apply_q(v);
        for (o, x) in q.iter_mut().zip(v) {
            *o += x * (1.0 - 2.0 * mu);
        }
        q
    };
    match kind {
        BarKind::DbetaBar => dbeta(v),
        BarKind::DvarphiBar => {
            let mut p = ops.apply_p(n, v);
            for (o, x) in p.iter_mut().zip(v) {
                *o = -*o + x * (2.0 * mu - 1.0);
            }
            p
        }
        BarKind::Dphi => v.iter().map(|x| x * ic(n)).collect(),
        BarKind::DphiDbetaBar => dbeta(v).into_iter().map(|x| x * ic(n)).collect(),
        BarKind::Dvarphi1DbetaBar => {
            let a = dbeta(v);
            let mut p = ops.apply_p(n, &a);
            for (o, x) in p.iter_mut().zip(&a) {
                *o = -*o + x * (2.0 * mu);
            }
            p
        }
    }
}

pub fn apply_bar_derivative(kind: &str, f: &SpectralField) -> Result<SpectralField> {
    let kind: BarKind = kind.parse()?;
    let ops = RadialOps::from_params(&f.params)?;
    apply_bar_derivative_with(&ops, kind, f)
}

pub fn apply_bar_derivative_with(ops: &RadialOps, kind: BarKind, f: &SpectralField) -> Result<SpectralField> {
    let mu = f.params.mu;
    let modes = f
        .modes
        .iter()
        .map(|m| {
            let v = m.to_nodal(&ops.basis);
            let out = bar_nodal(ops, kind, m.n, mu, &v);
            ModeProfile::from_nodal(m.n, &ops.basis, &out)
        })
        .collect();
    Ok(SpectralField { params: f.params.clone(), modes })
}

fn check_decaying(f: &ModeProfile) -> Result<()> {
    if f.n != 0 && (f.cinf.norm() != 0.0 || f.cconst.norm() != 0.0) {
        return Err(Error::Domain(format!(
            "mode {} has a nonzero limit at infinity; beta f is unbounded",
            f.n
        )));
    }
    Ok(())
}

/// `D^(n,s) f = beta (d_beta - i n) f - s f`.
pub fn apply_d(ops: &RadialOps, n: i64, s: f64, f: &ModeProfile) -> Result<ModeProfile> {
    let g = ModeProfile { n, ..f.clone() };
    check_decaying(&g)?;
    let v = g.to_nodal(&ops.basis);
    Ok(ModeProfile::from_nodal(n, &ops.basis, &ops.apply_d(n, s, &v)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InverseMethod {
    Quadrature,
    Matrix,
}

/// Bounded inverse of `D^(n,s)`.
pub fn invert_d(ops: &RadialOps, n: i64, s: f64, f: &ModeProfile, method: InverseMethod) -> Result<ModeProfile> {
    if s == 0.0 {
        return Err(Error::Singular(format!("D^({n},0) has no bounded inverse")));
    }
    let g = ModeProfile { n, ..f.clone() };
    check_decaying(&g)?;
    let v = g.to_nodal(&ops.basis);
    let m = ops.m();
    let out = match method {
        InverseMethod::Matrix => {
            if n == 0 {
                ops.solve_d(n, s, &v)?
            } else {
                // the last row becomes the structural condition g(inf) = 0
                let mut d = ops.d(n, s);
                d.row_mut(m).fill(ZERO);
                d[(m, m)] = C64::new(1.0, 0.0);
                let mut rhs = v.clone();
                rhs[m] = ZERO;
                let x = d
                    .lu()
                    .solve(&nalgebra::DVector::from_vec(rhs))
                    .ok_or_else(|| Error::Solve(format!("collocation matrix of D^({n},{s}) is singular")))?;
                x.as_slice().to_vec()
            }
        }
        InverseMethod::Quadrature => {
            let support = nodal_support(&ops.basis.grid.nodes, &v);
            let fe = |b: f64| ops.basis.interp(&v, b);
            // panels whose contribution is below round-off of the interpolant are accepted
            let fmax = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let opts = QuadOptions { noise: 1e-15 * fmax, ..QuadOptions::default() };
            let x = ops
                .basis
                .grid
                .nodes
                .par_iter()
                .map(|&b| invert_d_at(n, s, &fe, support, b, &opts))
                .collect::<Result<Vec<C64>>>()?;
            let mut x = x;
            x.push(if n == 0 { -v[m] / s } else { ZERO });
            x
        }
    };
    Ok(ModeProfile::from_nodal(n, &ops.basis, &out))
}

/// `(lo, hi)` such that the nodal values vanish outside `[lo, hi]`.
fn nodal_support(nodes: &[f64], v: &[C64]) -> (f64, f64) {
    let m = nodes.len();
    if v[m].norm() != 0.0 {
        return (0.0, f64::INFINITY);
    }
    let first = (0..m).find(|&j| v[j].norm() != 0.0);
    let last = (0..m).rev().find(|&j| v[j].norm() != 0.0);
    match (first, last) {
        (Some(a), Some(b)) => {
            let lo = if a == 0 { 0.0 } else { nodes[a - 1] };
            let hi = if b + 1 < m { nodes[b + 1] } else { f64::INFINITY };
            (lo, hi)
        }
        _ => (0.0, 0.0),
    }
}

#[derive(Clone, Debug)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Absolute error level of `f` itself; panels are accepted once their tail is below
    /// `noise * int |y^{-s-1}|`.
    pub noise: f64,
    pub max_depth: usize,
    /// Legendre degree of the per-panel expansion.
    pub order: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions { rel_tol: 1e-13, abs_tol: 1e-300, noise: 0.0, max_depth: 40, order: 24 }
    }
}

/// `ln` of the weight ratio below which the tail of `y^{-s-1}` is dropped.
const WEIGHT_CUT: f64 = 40.0;

/// Pointwise closed-form inverse:
/// `e^{i n b} int_c^1 f(b y) e^{-i n b y} y^{-s-1} dy`, `c = inf` for `s > 0`, `c = 0` for `s < 0`.
///
/// The oscillatory factor is integrated exactly against a Legendre expansion of the rest
/// on each panel, so the cost does not grow with `n beta`.
pub fn invert_d_at(
    n: i64,
    s: f64,
    f: &dyn Fn(f64) -> C64,
    support: (f64, f64),
    beta: f64,
    opts: &QuadOptions,
) -> Result<C64> {
    if s == 0.0 {
        return Err(Error::Singular(format!("D^({n},0) has no bounded inverse")));
    }
    if beta == 0.0 {
        return Ok(-f(0.0) / s);
    }
    let nb = n as f64 * beta;
    let h = |y: f64| -> (C64, f64) {
        let w = y.powf(-s - 1.0);
        (f(beta * y) * w, w)
    };
    let (lo, hi) = (support.0 / beta, support.1 / beta);
    let filon = Filon::new(opts.order);
    // rounding in y alone perturbs y^{-s-1} by about |s| eps
    let opts = &QuadOptions { rel_tol: opts.rel_tol.max(64.0 * f64::EPSILON * (1.0 + s.abs())), ..opts.clone() };
    let val = if s > 0.0 {
        // -int_1^inf; beyond `y_max` the weight is below e^-40 of its value at the panel start
        let a = lo.max(1.0);
        let y_max = a * (WEIGHT_CUT / s).exp().min(1e300);
        let b = hi.min(y_max);
        let mut acc = if b <= a { ZERO } else { -filon.geometric(&h, nb, a, b, true, opts)? };
        if n == 0 && hi.is_infinite() && b < hi {
            // the constant limit of an n = 0 profile carries a tail int_b^inf y^{-s-1} dy
            acc -= f(f64::INFINITY) * b.powf(-s) / s;
        }
        acc
    } else {
        let b = hi.min(1.0);
        let cut = if -s > 1.0 { (-WEIGHT_CUT / (-s - 1.0)).exp() * b } else { 0.0 };
        let a = lo.max(cut);
        if b <= a {
            ZERO
        } else if a > 0.0 {
            filon.geometric(&h, nb, a, b, false, opts)?
        } else {
            // integrable endpoint singularity: y = w u^m on the first panel
            let wave = if n != 0 { std::f64::consts::PI / nb.abs() } else { f64::INFINITY };
            let w = (b * 1e-3).min(wave);
            let m = ((2.0 / -s).ceil() as i32).clamp(1, 64);
            let g = |y: f64| -> C64 { h(y).0 * C64::from_polar(1.0, -nb * y) };
            let first = integrate_singular_panel(&g, w, m, &gauss_legendre(opts.order), opts)?;
            filon.geometric(&h, nb, w, b, false, opts)? + first
        }
    };
    Ok(C64::from_polar(1.0, nb) * val)
}

/// Legendre-moment quadrature for `int h(y) e^{-i omega y} dy`.
struct Filon {
    rule: Vec<(f64, f64)>,
    /// `P_k(x_j)` for every node `j` and degree `k`.
    legendre: Vec<Vec<f64>>,
}

impl Filon {
    fn new(order: usize) -> Self {
        let q = order.max(4);
        let rule = gauss_legendre(q);
        let legendre = rule
            .iter()
            .map(|&(x, _)| {
                let mut p = vec![1.0, x];
                for k in 1..q - 1 {
                    let kf = k as f64;
                    p.push(((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0));
                }
                p.truncate(q);
                p
            })
            .collect();
        Filon { rule, legendre }
    }

    /// Dyadic panels between `a` and `b`, starting at the end where `|h|` is largest
    /// (`from_left`), each refined until its tail is small against the mass seen so far.
    fn geometric(&self, h: &dyn Fn(f64) -> (C64, f64), omega: f64, a: f64, b: f64, from_left: bool, opts: &QuadOptions) -> Result<C64> {
        let mut acc = ZERO;
        let mut seen = 0.0;
        if from_left {
            let mut x0 = a;
            while x0 < b {
                let x1 = (2.0 * x0).min(b);
                acc += self.adapt(h, omega, x0, x1, opts, &mut seen, 0)?;
                x0 = x1;
            }
        } else {
            let mut x1 = b;
            while x1 > a {
                let x0 = (0.5 * x1).max(a);
                acc += self.adapt(h, omega, x0, x1, opts, &mut seen, 0)?;
                x1 = x0;
            }
        }
        Ok(acc)
    }

    /// Also returns `int |h|` and `int |weight|` over the panel.
    fn panel(&self, h: &dyn Fn(f64) -> (C64, f64), omega: f64, a: f64, b: f64) -> (C64, f64, f64, f64) {
        let q = self.rule.len();
        let c = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        let hw: Vec<(C64, f64)> = self.rule.iter().map(|&(x, _)| h(c + r * x)).collect();
        let vals: Vec<C64> = hw.iter().map(|p| p.0).collect();
        let mass: f64 = vals.iter().zip(&self.rule).map(|(v, &(_, w))| v.norm() * w * r).sum();
        let wmass: f64 = hw.iter().zip(&self.rule).map(|(p, &(_, w))| p.1.abs() * w * r).sum();
        let theta = omega * r;
        let j = spherical_bessel(q - 1, theta.abs());
        let rot = C64::new(0.0, -theta.signum());
        let mut sum = ZERO;
        let mut phase = C64::new(1.0, 0.0);
        let mut tail = 0.0;
        for k in 0..q {
            let ak: C64 = vals
                .iter()
                .zip(&self.rule)
                .zip(&self.legendre)
                .map(|((v, &(_, w)), p)| v * (w * p[k]))
                .sum::<C64>()
                * ((2 * k + 1) as f64 / 2.0);
            sum += ak * phase * (2.0 * j[k]);
            if k + 2 >= q {
                tail += ak.norm() * 2.0 * r;
            }
            phase *= rot;
        }
        (C64::from_polar(r, -omega * c) * sum, tail, mass, wmass)
    }

    #[allow(clippy::too_many_arguments)]
    fn adapt(
        &self,
        h: &dyn Fn(f64) -> (C64, f64),
        omega: f64,
        a: f64,
        b: f64,
        opts: &QuadOptions,
        seen: &mut f64,
        depth: usize,
    ) -> Result<C64> {
        let (v, tail, mass, wmass) = self.panel(h, omega, a, b);
        if tail <= opts.abs_tol.max(opts.rel_tol * (mass + *seen)).max(opts.noise * wmass) {
            *seen += mass;
            return Ok(v);
        }
        if depth >= opts.max_depth {
            return Err(Error::Accuracy { msg: format!("panel [{a:.3e}, {b:.3e}] did not converge"), estimate: tail });
        }
        let c = 0.5 * (a + b);
        let l = self.adapt(h, omega, a, c, opts, seen, depth + 1)?;
        Ok(l + self.adapt(h, omega, c, b, opts, seen, depth + 1)?)
    }
}

/// `j_0 .. j_kmax` at `x >= 0`: upward recurrence above `kmax`, Miller's method below.
fn spherical_bessel(kmax: usize, x: f64) -> Vec<f64> {
    let mut j = vec![0.0; kmax + 1];
    if x == 0.0 {
        j[0] = 1.0;
        return j;
    }
    let j0 = if x < 1e-4 { 1.0 - x * x / 6.0 } else { x.sin() / x };
    let j1 = if x < 1e-4 { x / 3.0 * (1.0 - x * x / 10.0) } else { (x.sin() / x - x.cos()) / x };
    if x > kmax as f64 {
        j[0] = j0;
        if kmax >= 1 {
            j[1] = j1;
        }
        for k in 1..kmax {
            j[k + 1] = (2 * k + 1) as f64 / x * j[k] - j[k - 1];
        }
        return j;
    }
    let start = kmax + 20 + x as usize;
    let (mut hi, mut cur) = (0.0f64, 1e-300f64);
    let mut down = vec![0.0; start + 1];
    down[start] = cur;
    for k in (1..=start).rev() {
        let next = (2 * k + 1) as f64 / x * cur - hi;
        hi = cur;
        cur = next;
        down[k - 1] = cur;
        if cur.abs() > 1e250 {
            for d in down.iter_mut().skip(k - 1) {
                *d *= 1e-250;
            }
            hi *= 1e-250;
            cur *= 1e-250;
        }
    }
    // normalize on whichever of j0, j1 is better conditioned
    let scale = if j0.abs() >= j1.abs() { j0 / down[0] } else { j1 / down[1] };
    for k in 0..=kmax {
        j[k] = down[k] * scale;
    }
    j
}

/// `int_0^w g(y) dy` under `y = w u^m`.
fn integrate_singular_panel(g: &dyn Fn(f64) -> C64, w: f64, m: i32, rule: &[(f64, f64)], opts: &QuadOptions) -> Result<C64> {
    let mf = m as f64;
    let sub = |u: f64| -> C64 {
        if u <= 0.0 {
            return ZERO;
        }
        g(w * u.powi(m)) * (w * mf * u.powi(m - 1))
    };
    let whole = gl(&sub, 0.0, 1.0, rule);
    adapt(&sub, 0.0, 1.0, whole, rule, opts, 0)
}

fn gl(g: &dyn Fn(f64) -> C64, a: f64, b: f64, rule: &[(f64, f64)]) -> C64 {
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    rule.iter().map(|&(x, w)| g(c + h * x) * (w * h)).sum()
}

fn adapt(
    g: &dyn Fn(f64) -> C64,
    a: f64,
    b: f64,
    whole: C64,
    rule: &[(f64, f64)],
    opts: &QuadOptions,
    depth: usize,
) -> Result<C64> {
    let c = 0.5 * (a + b);
    let l = gl(g, a, c, rule);
    let r = gl(g, c, b, rule);
    let err = (l + r - whole).norm();
    if err <= opts.abs_tol.max(opts.rel_tol * (l + r).norm()) || err <= f64::EPSILON * 16.0 * (l + r).norm() {
        return Ok(l + r);
    }
    if depth >= opts.max_depth {
        return Err(Error::Accuracy {
            msg: format!("panel [{a:.3e}, {b:.3e}] did not converge"),
            estimate: err,
        });
    }
    Ok(adapt(g, a, c, l, rule, opts, depth + 1)? + adapt(g, c, b, r, rule, opts, depth + 1)?)
}

/// Shifts `s_+ = (2 + n) mu - 1`, `s_- = (2 - n) mu - 1`.
pub fn shifts(n: i64, mu: f64) -> (f64, f64) {
    ((2 + n) as f64 * mu - 1.0, (2 - n) as f64 * mu - 1.0)
}

/// Dense per-mode operator on the extended vector `[core; c0; cinf; cconst]`.
#[derive(Clone, Debug, Serialize)]
pub struct LinearModeOperator {
    pub n: i64,
    pub label: String,
    #[serde(skip)]
    pub matrix: DMatrix<C64>,
    /// Same operator on nodal values.
    #[serde(skip)]
    pub nodal: DMatrix<C64>,
}

/// Extended coordinates to nodal values.
pub fn extension_matrix(basis: &Basis) -> DMatrix<f64> {
    let m = basis.m();
    let mut e = DMatrix::zeros(m + 1, m + 3);
    for j in 0..m {
        e[(j, j)] = 1.0;
        e[(j, m)] = basis.xi0[j];
        e[(j, m + 1)] = basis.xi_inf[j];
        e[(j, m + 2)] = 1.0;
    }
    e[(m, m + 1)] = 1.0;
    e[(m, m + 2)] = 1.0;
    e
}

/// Nodal values to canonical extended coordinates for mode `n`.
pub fn restriction_matrix(basis: &Basis, n: i64) -> DMatrix<f64> {
    let m = basis.m();
    let mut r = DMatrix::zeros(m + 3, m + 1);
    // c0, cinf, cconst rows
    if n != 0 {
        r[(m, 0)] = 1.0;
        r[(m + 1, m)] = 1.0;
    } else {
        r[(m, 0)] = 1.0;
        r[(m, m)] = -1.0;
        r[(m + 2, m)] = 1.0;
    }
    for j in 0..m {
        r[(j, j)] = 1.0;
        for k in 0..=m {
            let c = r[(m, k)] * basis.xi0[j] + r[(m + 1, k)] * basis.xi_inf[j] + r[(m + 2, k)];
            r[(j, k)] -= c;
        }
    }
    r
}

impl LinearModeOperator {
    /// Wraps a nodal operator; the structurally zero rows (core at 0 and the
    /// unused coefficient slot) become identity constraints.
    pub fn from_nodal(n: i64, label: &str, nodal: DMatrix<C64>, basis: &Basis) -> Self {
        let m = basis.m();
        let r = to_complex(&restriction_matrix(basis, n));
        let e = to_complex(&extension_matrix(basis));
        let mut matrix = r * &nodal * e;
        let forced = if n != 0 { m + 2 } else { m + 1 };
        for row in [0, forced] {
            for j in 0..m + 3 {
                matrix[(row, j)] = ZERO;
            }
            matrix[(row, row)] = C64::new(1.0, 0.0);
        }
        LinearModeOperator { n, label: label.to_string(), matrix, nodal }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, f: &ModeProfile) -> ModeProfile {
        let x = complex_matvec(&self.matrix, &f.to_extended());
        ModeProfile::from_extended(self.n, &x)
    }

    /// JSON dump: `{n, label, dim, re, im}` with row-major entries.
    pub fn to_json(&self) -> Result<String> {
        let d = self.dim();
        let mut re = Vec::with_capacity(d * d);
        let mut im = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                re.push(self.matrix[(i, j)].re);
                im.push(self.matrix[(i, j)].im);
            }
        }
        Ok(serde_json::to_string(&serde_json::json!({
            "n": self.n, "label": self.label, "dim": d, "re": re, "im": im
        }))?)
    }
}

/// `(P_+ P_- (Q + 1) + (2 mu - 1)(Q - P)) / (2 mu^2)` on nodal values.
pub fn linearization_nodal(ops: &RadialOps, n: i64, mu: f64) -> Result<DMatrix<C64>> {
    let (sp, sm) = shifts(n, mu);
    if sp.abs() < 1e-12 || sm.abs() < 1e-12 {
        return Err(Error::DegenerateShift(format!("(2 +- {n}) mu - 1 vanishes at mu = {mu}")));
    }
    let q1 = {
        let mut q = ops.q_complex();
        for i in 0..q.nrows() {
            q[(i, i)] += 1.0;
        }
        q
    };
    let pp = ops.d(n, sp);
    let pm = ops.d(n, sm);
    let mut a = pp * pm * q1;
    if n != 0 {
        a += to_complex(&ops.b0) * (ic(n) * (2.0 * mu - 1.0));
    }
    Ok(a / C64::new(2.0 * mu * mu, 0.0))
}

pub fn assemble_linearization(n: i64, params: &SolverParams) -> Result<LinearModeOperator> {
    let ops = RadialOps::from_params(params)?;
    assemble_linearization_with(&ops, n, params)
}

pub fn assemble_linearization_with(ops: &RadialOps, n: i64, params: &SolverParams) -> Result<LinearModeOperator> {
    let a = linearization_nodal(ops, n, params.mu)?;
    if n % params.n_period as i64 != 0 {
        return Err(Error::Parameter(format!("mode {n} is not a multiple of N = {}", params.n_period)));
    }
    Ok(LinearModeOperator::from_nodal(n, "P+P-(Q+1)+(2mu-1)(Q-P)", a, &ops.basis))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearMethod {
    Direct,
    Neumann,
}

/// Neumann series truncation.
pub const NEUMANN_TOL: f64 = 1e-12;
pub const NEUMANN_MAX_TERMS: usize = 64;

/// Factored `P_+`, `P_-`, `Q + 1` for the Neumann inverse of one mode.
pub struct NeumannFactors {
    pub n: i64,
    pub mu: f64,
    pp: nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
    pm: nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
    q1: nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl NeumannFactors {
    pub fn new(ops: &RadialOps, n: i64, mu: f64) -> Result<Self> {
        let (sp, sm) = shifts(n, mu);
        if sp.abs() < 1e-12 || sm.abs() < 1e-12 {
            return Err(Error::DegenerateShift(format!("(2 +- {n}) mu - 1 vanishes at mu = {mu}")));
        }
        Ok(NeumannFactors { n, mu, pp: ops.d(n, sp).lu(), pm: ops.d(n, sm).lu(), q1: ops.d(0, -1.0).lu() })
    }

    /// `M^{-1} v = (Q + 1)^{-1} P_-^{-1} P_+^{-1} v`.
    pub fn m_inverse(&self, v: &[C64]) -> Result<Vec<C64>> {
        let sing = || Error::Solve(format!("singular factor at mode {}", self.n));
        let a = self.pp.solve(&nalgebra::DVector::from_column_slice(v)).ok_or_else(sing)?;
        let b = self.pm.solve(&a).ok_or_else(sing)?;
        Ok(self.q1.solve(&b).ok_or_else(sing)?.as_slice().to_vec())
    }

    /// `A^{-1} z` via `2 mu^2 M^{-1} sum_k (-E M^{-1})^k z` with
    /// `M = P_+ P_- (Q + 1)` and `E = (2 mu - 1) i n beta`.
    pub fn solve(&self, ops: &RadialOps, z: &[C64]) -> Result<Vec<C64>> {
        let (n, mu) = (self.n, self.mu);
        let e = |v: &[C64]| -> Vec<C64> {
            real_matvec(&ops.b0, v).into_iter().map(|x| x * ic(n) * (2.0 * mu - 1.0)).collect()
        };
        let sup = |v: &[C64]| v.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let mut acc = z.to_vec();
        if n != 0 {
            let mut term = z.to_vec();
            let mut prev = f64::INFINITY;
            let scale = sup(z).max(f64::MIN_POSITIVE);
            for _ in 0..NEUMANN_MAX_TERMS {
                let next: Vec<C64> = e(&self.m_inverse(&term)?).into_iter().map(|x| -x).collect();
                let size = sup(&next);
                for (a, t) in acc.iter_mut().zip(&next) {
                    *a += t;
                }
                if size <= NEUMANN_TOL * scale {
                    break;
                }
                if size > prev && size > scale {
                    return Err(Error::Contraction(format!(
                        "Neumann increments grow at n = {n} ({size:.3e}); check the certificate's K"
                    )));
                }
                prev = size;
                term = next;
            }
        }
        Ok(self.m_inverse(&acc)?.into_iter().map(|x| x * (2.0 * mu * mu)).collect())
    }
}

pub fn neumann_solve_nodal(ops: &RadialOps, n: i64, mu: f64, z: &[C64]) -> Result<Vec<C64>> {
    NeumannFactors::new(ops, n, mu)?.solve(ops, z)
}

/// Applies the inverse of the per-mode linearization to every mode of `rhs`.
pub fn apply_linearization_inverse(
    ops: &RadialOps,
    opset: &[LinearModeOperator],
    rhs: &SpectralField,
    method: LinearMethod,
) -> Result<SpectralField> {
    let mu = rhs.params.mu;
    let mut modes = Vec::with_capacity(rhs.modes.len());
    for m in &rhs.modes {
        let op = opset
            .iter()
            .find(|o| o.n == m.n)
            .ok_or_else(|| Error::Structure(format!("no operator for mode {}", m.n)))?;
        let out = match method {
            LinearMethod::Direct => {
                let x = op
                    .matrix
                    .clone()
                    .lu()
                    .solve(&nalgebra::DVector::from_vec(m.to_extended()))
                    .ok_or_else(|| Error::Solve(format!("singular linearization at mode {}", m.n)))?;
                ModeProfile::from_extended(m.n, x.as_slice())
            }
            LinearMethod::Neumann => {
                let v = m.to_nodal(&ops.basis);
                let x = neumann_solve_nodal(ops, m.n, mu, &v)?;
                ModeProfile::from_nodal(m.n, &ops.basis, &x)
            }
        };
        modes.push(out);
    }
    Ok(SpectralField { params: rhs.params.clone(), modes })
}
