//! Reconstruction of the physical fields from a solved profile.
//!
//! A profile `psibar(beta, phi)` and angular datum `Omega(phi)` define the map
//! `T(beta, phi) = e^a (cos(beta + phi), sin(beta + phi))` with
//! `e^{2a} = -beta^{-2mu} dbeta_bar psibar / mu`, and through it the similarity
//! profiles of vorticity, velocity and stream function. Physical fields follow
//! from `z = x t^{-mu}`.

use std::f64::consts::PI;

use ode_solvers::{Dopri5, System, Vector1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid_space::{gauss_legendre, AngularSignal, Basis, SpectralField, C64};
use crate::nonlinear::Model;
use crate::operators::{bar_nodal, BarKind};
use crate::solver::bounds_check;
use crate::{Error, Result};

const Q_PSI: usize = 0;
const Q_B: usize = 1;
const Q_QB: usize = 2;
const Q_V: usize = 3;
const Q_E: usize = 4;

/// Pointwise values of `psibar` and the bar derivatives the reconstruction needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalBar {
    pub psibar: f64,
    /// `dbeta_bar psibar`
    pub b: f64,
    /// `beta d_beta dbeta_bar psibar`
    pub qb: f64,
    /// `dvarphi_bar psibar`
    pub v: f64,
    /// `(dvarphi_bar + 1) dbeta_bar psibar`
    pub e: f64,
    pub psibar_phi: f64,
    pub b_phi: f64,
}

/// Per-mode complex values at one radius.
#[derive(Clone, Debug)]
pub struct Slice {
    pub beta: f64,
    vals: Vec<[C64; 5]>,
}

/// Similarity-variable fields at a chart point `(beta, phi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartFields {
    pub beta: f64,
    pub phi: f64,
    pub z: [f64; 2],
    pub w: f64,
    pub psi: f64,
    pub u: [f64; 2],
    pub grad_psi: [f64; 2],
    /// `|det J_T|`.
    pub jac: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSample {
    pub x: [f64; 2],
    pub t: f64,
    pub w: f64,
    pub u: [f64; 2],
    pub psi: f64,
    /// `(beta, phi)` preimage of `x t^{-mu}`; absent at `t = 0`.
    pub chart: Option<[f64; 2]>,
}

/// Angular factors of the `t -> 0` limits: `w = |x|^{-1/mu} w0`,
/// `u = |x|^{1-1/mu} u0`, `psi = |x|^{2-1/mu} psi0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub theta: f64,
    pub w0: f64,
    pub u0: [f64; 2],
    pub psi0: f64,
}

/// Evaluator for one solved profile.
#[derive(Clone, Debug)]
pub struct Profile {
    pub psibar: SpectralField,
    pub omega: AngularSignal,
    pub mu: f64,
    pub n_period: u32,
    basis: Basis,
    modes: Vec<i64>,
    qty: Vec<[Vec<C64>; 5]>,
    base: [f64; 5],
}

impl Profile {
    pub fn new(psibar: &SpectralField, omega: &AngularSignal) -> Result<Self> {
        let model = Model::new(&psibar.params)?;
        let mu = model.params.mu;
        let delta = model.perturbation(psibar)?;
        let ops = &model.ops;
        let qty = model
            .modes
            .iter()
            .zip(&delta)
            .map(|(&n, v)| {
                let b = bar_nodal(ops, BarKind::DbetaBar, n, mu, v);
                let qb = ops.apply_q(&b);
                let vv = bar_nodal(ops, BarKind::DvarphiBar, n, mu, v);
                let e = bar_nodal(ops, BarKind::Dvarphi1DbetaBar, n, mu, v);
                [v.clone(), b, qb, vv, e]
            })
            .collect();
        Ok(Profile {
            psibar: psibar.clone(),
            omega: omega.clone(),
            mu,
            n_period: model.params.n_period,
            basis: model.ops.basis.clone(),
            modes: model.modes.clone(),
            qty,
            base: [model.params.psibar0(), -1.0, 0.0, 1.0, -2.0 * mu],
        })
    }

    /// As `new`, but refuses profiles that fail the pointwise bounds.
    pub fn checked(psibar: &SpectralField, omega: &AngularSignal) -> Result<Self> {
        let rep = bounds_check(psibar)?;
        if !rep.ok {
            return Err(Error::Domain(format!("bounds check failed ({})", rep.worst)));
        }
        Self::new(psibar, omega)
    }

    pub fn slice(&self, beta: f64) -> Slice {
        let row = self.basis.interp_row(beta);
        let vals = self
            .qty
            .iter()
            .map(|q| {
                let mut out = [C64::new(0.0, 0.0); 5];
                for (k, o) in out.iter_mut().enumerate() {
                    *o = row.iter().zip(&q[k]).map(|(r, v)| v * *r).sum();
                }
                out
            })
            .collect();
        Slice { beta, vals }
    }

    /// Phase factors `e^{i n phi}` for the retained modes.
    pub fn phases(&self, phi: f64) -> Vec<C64> {
        self.modes.iter().map(|&n| C64::from_polar(1.0, n as f64 * phi)).collect()
    }

    pub fn local_with(&self, s: &Slice, ph: &[C64]) -> LocalBar {
        let mut acc = [0.0; 5];
        let (mut pp, mut bp) = (0.0, 0.0);
        for ((vals, e), &n) in s.vals.iter().zip(ph).zip(&self.modes) {
            for k in 0..5 {
                acc[k] += (vals[k] * e).re;
            }
            let ine = e * C64::new(0.0, n as f64);
            pp += (vals[Q_PSI] * ine).re;
            bp += (vals[Q_B] * ine).re;
        }
        LocalBar {
            psibar: acc[Q_PSI] + self.base[Q_PSI],
            b: acc[Q_B] + self.base[Q_B],
            qb: acc[Q_QB] + self.base[Q_QB],
            v: acc[Q_V] + self.base[Q_V],
            e: acc[Q_E] + self.base[Q_E],
            psibar_phi: pp,
            b_phi: bp,
        }
    }

    pub fn local(&self, beta: f64, phi: f64) -> LocalBar {
        self.local_with(&self.slice(beta), &self.phases(phi))
    }

    fn log_radius(&self, l: &LocalBar, beta: f64, phi: f64) -> Result<f64> {
        if l.b >= 0.0 {
            return Err(Error::SignCondition { quantity: "dbeta_bar psibar", value: l.b, beta, phi });
        }
        Ok(0.5 * (-l.b / self.mu).ln() - self.mu * beta.ln())
    }

    /// `T(beta, phi)`.
    pub fn forward(&self, beta: f64, phi: f64) -> Result<[f64; 2]> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Domain(format!("beta = {beta} is not a positive finite number")));
        }
        let l = self.local(beta, phi);
        let r = self.log_radius(&l, beta, phi)?.exp();
        let th = beta + phi;
        Ok([r * th.cos(), r * th.sin()])
    }

    /// `T^{-1}(z)`, with `phi` reduced to `[0, 2 pi)`.
    pub fn invert(&self, z: [f64; 2]) -> Result<(f64, f64)> {
        let rz = z[0].hypot(z[1]);
        if rz == 0.0 || !rz.is_finite() {
            return Err(Error::Domain(format!("cannot invert T at z = ({}, {})", z[0], z[1])));
        }
        let theta = z[1].atan2(z[0]);
        let target = rz.ln();
        let mu = self.mu;
        // g(beta) = a(beta, theta - beta) - log|z| is strictly decreasing.
        let g = |beta: f64| -> Result<(f64, f64)> {
            let phi = theta - beta;
            let l = self.local(beta, phi);
            let a = self.log_radius(&l, beta, phi)?;
            if l.e >= 0.0 {
                return Err(Error::SignCondition { quantity: "(dvarphi_bar + 1) dbeta_bar psibar", value: l.e, beta, phi });
            }
            Ok((a - target, -l.e / (2.0 * beta * l.b)))
        };
        let b0 = (rz * mu.sqrt()).powf(-1.0 / mu);
        let (mut lo, mut hi) = (b0 * 0.5f64.powf(0.5 / mu) * 0.5, b0 * 1.5f64.powf(0.5 / mu) * 2.0);
        let mut tries = 0;
        while g(lo)?.0 <= 0.0 {
            lo *= 0.25;
            tries += 1;
            if tries > 40 {
                return Err(Error::Inversion(format!("no lower bracket for |z| = {rz:e}")));
            }
        }
        while g(hi)?.0 >= 0.0 {
            hi *= 4.0;
            tries += 1;
            if tries > 40 {
                return Err(Error::Inversion(format!("no upper bracket for |z| = {rz:e}")));
            }
        }
        let mut beta = b0.clamp(lo, hi);
        for _ in 0..200 {
            let (gv, slope) = g(beta)?;
            if gv == 0.0 {
                return Ok((beta, (theta - beta).rem_euclid(2.0 * PI)));
            }
            if gv > 0.0 {
                lo = beta;
            } else {
                hi = beta;
            }
            let mut next = beta - gv / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let done = (next - beta).abs() <= 4e-16 * beta || hi - lo <= 4e-16 * hi;
            beta = next;
            if done {
                return Ok((beta, (theta - beta).rem_euclid(2.0 * PI)));
            }
        }
        Err(Error::Inversion(format!("Newton iteration did not settle for |z| = {rz:e}")))
    }

    /// Similarity fields at a chart point, from precomputed local values.
    pub fn chart_from_local(&self, l: &LocalBar, beta: f64, phi: f64, omega_val: f64) -> Result<ChartFields> {
        let mu = self.mu;
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("chart fields need beta > 0, got {beta}")));
        }
        if l.v <= 0.0 {
            return Err(Error::SignCondition { quantity: "dvarphi_bar psibar", value: l.v, beta, phi });
        }
        let r = self.log_radius(l, beta, phi)?.exp();
        let th = beta + phi;
        let (s, c) = th.sin_cos();
        let psi_b = beta.powf(-2.0 * mu) * l.b;
        let psi_p = beta.powf(1.0 - 2.0 * mu) * l.psibar_phi;
        let a_b = (l.qb - 2.0 * mu * l.b) / (2.0 * beta * l.b);
        let a_p = l.b_phi / (2.0 * l.b);
        // J_T = r * j
        let (j11, j12, j21, j22) = (a_b * c - s, a_p * c - s, a_b * s + c, a_p * s + c);
        let det0 = j11 * j22 - j12 * j21;
        let k = 1.0 / (r * det0);
        let grad = [k * (j22 * psi_b - j21 * psi_p), k * (-j12 * psi_b + j11 * psi_p)];
        Ok(ChartFields {
            beta,
            phi,
            z: [r * c, r * s],
            w: beta * l.v.powf(-0.5 / mu) * omega_val,
            psi: beta.powf(1.0 - 2.0 * mu) * l.psibar,
            u: [-grad[1], grad[0]],
            grad_psi: grad,
            jac: r * r * det0.abs(),
        })
    }

    pub fn chart(&self, beta: f64, phi: f64) -> Result<ChartFields> {
        let l = self.local(beta, phi);
        self.chart_from_local(&l, beta, phi, self.omega.eval(phi))
    }

    /// Physical fields at `(x, t)`; `t = 0` gives the initial-data limit.
    pub fn eval(&self, x: [f64; 2], t: f64) -> Result<PhysicalSample> {
        let rx = x[0].hypot(x[1]);
        if rx == 0.0 {
            return Err(Error::Domain("fields are not evaluated at x = 0".into()));
        }
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
        }
        let mu = self.mu;
        if t == 0.0 {
            let id = self.initial(x[1].atan2(x[0]));
            return Ok(PhysicalSample {
                x,
                t,
                w: rx.powf(-1.0 / mu) * id.w0,
                u: [rx.powf(1.0 - 1.0 / mu) * id.u0[0], rx.powf(1.0 - 1.0 / mu) * id.u0[1]],
                psi: rx.powf(2.0 - 1.0 / mu) * id.psi0,
                chart: None,
            });
        }
        let tm = t.powf(-mu);
        let (beta, phi) = self.invert([x[0] * tm, x[1] * tm])?;
        let cf = self.chart(beta, phi)?;
        let tu = t.powf(mu - 1.0);
        Ok(PhysicalSample {
            x,
            t,
            w: cf.w / t,
            u: [tu * cf.u[0], tu * cf.u[1]],
            psi: t.powf(2.0 * mu - 1.0) * cf.psi,
            chart: Some([beta, phi]),
        })
    }

    /// Angular factors of the initial data, read from the `beta = 0` node.
    pub fn initial(&self, theta: f64) -> InitialData {
        let l = self.local(0.0, theta);
        self.initial_from_local(&l, theta)
    }

    fn initial_from_local(&self, l: &LocalBar, theta: f64) -> InitialData {
        let mu = self.mu;
        let (s, c) = theta.sin_cos();
        let pre = (-l.b / mu).powf(0.5 / mu - 1.0);
        let k = pre * 2.0 * l.b / l.e;
        let rad = (l.b_phi * l.v - l.e * l.psibar_phi) / (2.0 * l.b);
        InitialData {
            theta,
            w0: (l.b / (-mu * l.v)).powf(0.5 / mu) * self.omega.eval(theta),
            u0: [k * (rad * c - l.v * s), k * (rad * s + l.v * c)],
            psi0: pre * l.psibar,
        }
    }

    /// `sum |Omega_n|`, an upper bound for `max |Omega|`.
    pub fn omega_sup(&self) -> f64 {
        self.omega.coeffs.values().map(|c| c.norm()).sum()
    }

    /// Zeros of `Omega` on one period `[0, 2 pi / N)`.
    pub fn omega_zeros(&self) -> Vec<f64> {
        let per = 2.0 * PI / self.n_period as f64;
        let kmax = (self.omega.max_mode() / self.n_period as i64).max(1) as usize;
        let ns = 64 * kmax;
        let h = per / ns as f64;
        let f = |p: f64| self.omega.eval(p);
        let mut zeros = Vec::new();
        let mut prev = f(0.0);
        for j in 1..=ns {
            let p = j as f64 * h;
            let cur = f(p);
            if prev == 0.0 {
                zeros.push((j - 1) as f64 * h);
            } else if prev * cur < 0.0 {
                let (mut a, mut b, mut fa) = (p - h, p, prev);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    let fm = f(m);
                    if fm == 0.0 || b - a <= 1e-16 * per {
                        a = m;
                        b = m;
                        break;
                    }
                    if fa * fm < 0.0 {
                        b = m;
                    } else {
                        a = m;
                        fa = fm;
                    }
                }
                zeros.push(0.5 * (a + b));
            }
            prev = cur;
        }
        zeros
    }
}

pub fn forward_map_t(psibar: &SpectralField, beta: f64, phi: f64) -> Result<[f64; 2]> {
    let om = AngularSignal::constant(psibar.params.omega0(), psibar.params.n_period);
    Profile::new(psibar, &om)?.forward(beta, phi)
}

pub fn invert_map_t(psibar: &SpectralField, z: [f64; 2]) -> Result<(f64, f64)> {
    let om = AngularSignal::constant(psibar.params.omega0(), psibar.params.n_period);
    Profile::new(psibar, &om)?.invert(z)
}

pub fn eval_fields(psibar: &SpectralField, omega: &AngularSignal, x: [f64; 2], t: f64) -> Result<PhysicalSample> {
    Profile::new(psibar, omega)?.eval(x, t)
}

pub fn initial_data(psibar: &SpectralField, omega: &AngularSignal, theta: f64) -> Result<InitialData> {
    Ok(Profile::new(psibar, omega)?.initial(theta))
}

// ---------------------------------------------------------------- spirals

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub beta: f64,
    pub x: [f64; 2],
}

/// Image `t^mu T(l)` of the line `phi = phi0` where `Omega(phi0) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiralCurve {
    pub phi0: f64,
    pub t: f64,
    pub points: Vec<CurvePoint>,
    /// Rotations by `2 pi k / symmetry` of this curve are also zero-set curves.
    pub symmetry: u32,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpiralOptions {
    /// Radial window of the sampled part of the curve.
    pub r_min: f64,
    pub r_max: f64,
    pub points: usize,
}

impl Default for SpiralOptions {
    fn default() -> Self {
        SpiralOptions { r_min: 0.1, r_max: 1.0, points: 512 }
    }
}

/// Zero-set curves for the zeros of `Omega` in one period.
pub fn spiral_extract(profile: &Profile, t: f64, opts: &SpiralOptions) -> Result<Vec<SpiralCurve>> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("spiral extraction needs t > 0, got {t}")));
    }
    let mu = profile.mu;
    // |x| = (t / beta)^mu sqrt(-B / mu) with -B in [1/2, 3/2]
    let b_lo = t * opts.r_max.powf(-1.0 / mu) * (0.5 / mu).powf(0.5 / mu);
    let b_hi = t * opts.r_min.powf(-1.0 / mu) * (1.5 / mu).powf(0.5 / mu);
    let np = opts.points.max(2);
    let tm = t.powf(mu);
    profile
        .omega_zeros()
        .into_iter()
        .map(|phi0| {
            let points = (0..np)
                .map(|i| {
                    let beta = b_lo + (b_hi - b_lo) * i as f64 / (np - 1) as f64;
                    let z = profile.forward(beta, phi0)?;
                    Ok(CurvePoint { beta, x: [tm * z[0], tm * z[1]] })
                })
                .collect::<Result<Vec<_>>>()?;
            let curve = SpiralCurve { phi0, t, points, symmetry: profile.n_period };
            let chk = check_spiral(profile, &curve)?;
            if chk.max_w_rel > SPIRAL_W_TOL {
                return Err(Error::Accuracy {
                    msg: format!("w does not vanish along the curve from phi0 = {phi0}"),
                    estimate: chk.max_w_rel,
                });
            }
            Ok(curve)
        })
        .collect()
}

/// Bound on `|w|` along a zero-set curve relative to the local vorticity scale.
pub const SPIRAL_W_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct SpiralCheck {
    pub phi0: f64,
    /// `max |w| / (|x|^{-1/mu} mu^{-1/2mu} max|Omega|)` along the curve.
    pub max_w_rel: f64,
    /// Range of `|x| (beta / t)^mu` against `[sqrt(1/2mu), sqrt(3/2mu)]`.
    pub envelope_min: f64,
    pub envelope_max: f64,
    pub envelope_ok: bool,
    /// Smallest relative `|w|` half-way to the next zero.
    pub off_curve_min_rel: f64,
}

pub fn check_spiral(profile: &Profile, curve: &SpiralCurve) -> Result<SpiralCheck> {
    let mu = profile.mu;
    let t = curve.t;
    let om_max = profile.omega_sup();
    let zeros = profile.omega_zeros();
    let per = 2.0 * PI / profile.n_period as f64;
    let next = zeros
        .iter()
        .map(|&z| (z - curve.phi0).rem_euclid(per))
        .filter(|&d| d > 1e-12)
        .fold(per, f64::min);
    let phi1 = curve.phi0 + 0.5 * next;
    let scale = |x: [f64; 2]| x[0].hypot(x[1]).powf(-1.0 / mu) * mu.powf(-0.5 / mu) * om_max;
    let rows: Vec<(f64, f64, f64)> = curve
        .points
        .par_iter()
        .map(|p| {
            let s = profile.eval(p.x, t)?;
            let env = p.x[0].hypot(p.x[1]) * (p.beta / t).powf(mu);
            let z1 = profile.forward(p.beta, phi1)?;
            let tm = t.powf(mu);
            let off = profile.eval([tm * z1[0], tm * z1[1]], t)?;
            Ok((s.w.abs() / scale(p.x), env, off.w.abs() / scale(off.x)))
        })
        .collect::<Result<Vec<_>>>()?;
    let lo = (0.5 / mu).sqrt();
    let hi = (1.5 / mu).sqrt();
    let envelope_min = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let envelope_max = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(SpiralCheck {
        phi0: curve.phi0,
        max_w_rel: rows.iter().map(|r| r.0).fold(0.0, f64::max),
        envelope_min,
        envelope_max,
        envelope_ok: envelope_min >= lo && envelope_max <= hi,
        off_curve_min_rel: rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min),
    })
}

/// Integrated spiral and its fit `|z| = (a theta + b)^{-mu}`.
#[derive(Clone, Debug, Serialize)]
pub struct SpiralFit {
    pub theta: Vec<f64>,
    pub r: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub max_rel_err: f64,
}

struct RadialOde<F: Fn(f64, f64) -> f64> {
    rhs: F,
}

impl<F: Fn(f64, f64) -> f64> System<f64, Vector1<f64>> for RadialOde<F> {
    fn system(&self, th: f64, y: &Vector1<f64>, dy: &mut Vector1<f64>) {
        dy[0] = (self.rhs)(th, y[0]);
    }
}

fn integrate_radial<F: Fn(f64, f64) -> f64>(rhs: F, th0: f64, r0: f64, span: f64, mu: f64, slope: f64) -> Result<SpiralFit> {
    if span == 0.0 {
        return Ok(SpiralFit {
            theta: vec![th0],
            r: vec![r0],
            a: slope,
            b: r0.powf(-1.0 / mu) - slope * th0,
            max_rel_err: 0.0,
        });
    }
    // the stepper's dense output assumes a nonnegative, increasing abscissa
    let sg = span.signum();
    let shifted = move |s: f64, r: f64| sg * rhs(th0 + sg * s, r);
    let mut st = Dopri5::new(RadialOde { rhs: shifted }, 0.0, span.abs(), span.abs() / 400.0, Vector1::new(r0), 1e-13, 1e-15);
    st.integrate()
        .map_err(|e| Error::Numeric(format!("spiral integration failed: {e:?}")))?;
    let theta: Vec<f64> = st.x_out().iter().map(|s| th0 + sg * s).collect();
    let r: Vec<f64> = st.y_out().iter().map(|y| y[0]).collect();
    if r.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::Numeric("spiral radius left (0, inf)".into()));
    }
    // least squares for r^{-1/mu} = a theta + b
    let n = theta.len() as f64;
    let ys: Vec<f64> = r.iter().map(|v| v.powf(-1.0 / mu)).collect();
    let mx = theta.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = theta.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = theta.iter().map(|x| (x - mx) * (x - mx)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let max_rel_err = theta
        .iter()
        .zip(&r)
        .map(|(th, rv)| ((a * th + b).powf(-mu) - rv).abs() / rv)
        .fold(0.0, f64::max);
    Ok(SpiralFit { theta, r, a, b, max_rel_err })
}

/// Integrates `d|z|/dtheta = -(mu/C)(2 - 1/mu)|z|^{1+1/mu}` from `z0` over `theta_span`.
pub fn spiral_ode_oracle(mu: f64, c: f64, z0: [f64; 2], theta_span: f64) -> Result<SpiralFit> {
    if c == 0.0 {
        return Err(Error::Parameter("C must be nonzero".into()));
    }
    let r0 = z0[0].hypot(z0[1]);
    if r0 == 0.0 {
        return Err(Error::Domain("z0 must be nonzero".into()));
    }
    let k = mu / c * (2.0 - 1.0 / mu);
    integrate_radial(move |_, r| -k * r.powf(1.0 + 1.0 / mu), z0[1].atan2(z0[0]), r0, theta_span, mu, (2.0 - 1.0 / mu) / c)
}

/// Integral curve of `u~ - mu z` for a reconstructed profile, parametrized by angle.
pub fn integral_curve(profile: &Profile, z0: [f64; 2], theta_span: f64) -> Result<SpiralFit> {
    let mu = profile.mu;
    let r0 = z0[0].hypot(z0[1]);
    if r0 == 0.0 {
        return Err(Error::Domain("z0 must be nonzero".into()));
    }
    let failed = std::cell::Cell::new(None::<String>);
    let rhs = |th: f64, r: f64| -> f64 {
        let z = [r * th.cos(), r * th.sin()];
        match profile.invert(z).and_then(|(b, p)| profile.chart(b, p)) {
            Ok(cf) => {
                let v = [cf.u[0] - mu * z[0], cf.u[1] - mu * z[1]];
                let vr = (v[0] * z[0] + v[1] * z[1]) / r;
                let vt = (-v[0] * z[1] + v[1] * z[0]) / r;
                r * vr / vt
            }
            Err(e) => {
                failed.set(Some(e.to_string()));
                0.0
            }
        }
    };
    let c = mu.powf(-0.5 / mu) * (2.0 - 1.0 / mu);
    let fit = integrate_radial(rhs, z0[1].atan2(z0[0]), r0, theta_span, mu, (2.0 - 1.0 / mu) / c)?;
    if let Some(msg) = failed.take() {
        return Err(Error::Numeric(format!("field evaluation failed along the curve: {msg}")));
    }
    Ok(fit)
}

// ---------------------------------------------------------------- quadrature

/// Smooth bump on `(lo, hi)`, equal to one at the midpoint, and its derivative.
fn bump(y: f64, lo: f64, hi: f64) -> (f64, f64) {
    let s = (2.0 * y - lo - hi) / (hi - lo);
    if s.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - s * s;
    let v = (1.0 - 1.0 / q).exp();
    (v, v * (-2.0 * s / (q * q)) * 2.0 / (hi - lo))
}

/// `f(x, t) = rho(|x|) tau(t) (1 + amp cos(N (theta - theta_c)))`.
///
/// With `t_lo = 0` the time factor is the right half of a bump, so `f(x, 0) != 0`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TestFunction {
    pub r_lo: f64,
    pub r_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub theta_c: f64,
    pub amp: f64,
    pub harmonic: u32,
}

impl TestFunction {
    fn tau(&self, t: f64) -> (f64, f64) {
        if self.t_lo == 0.0 {
            bump(t, -self.t_hi, self.t_hi)
        } else {
            bump(t, self.t_lo, self.t_hi)
        }
    }

    fn space(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let r = x[0].hypot(x[1]);
        let (rho, drho) = bump(r, self.r_lo, self.r_hi);
        if rho == 0.0 {
            return (0.0, [0.0, 0.0]);
        }
        let th = x[1].atan2(x[0]);
        let h = self.harmonic as f64;
        let (sa, ca) = (h * (th - self.theta_c)).sin_cos();
        let ang = 1.0 + self.amp * ca;
        let dang = -self.amp * h * sa;
        let (rx, ry) = (x[0] / r, x[1] / r);
        let fr = drho * ang;
        let ft = rho * dang / r;
        (rho * ang, [fr * rx - ft * ry, fr * ry + ft * rx])
    }

    /// `(f, f_t, grad f)`.
    pub fn eval(&self, x: [f64; 2], t: f64) -> (f64, f64, [f64; 2]) {
        let (tau, dtau) = self.tau(t);
        let (g, dg) = self.space(x);
        (g * tau, g * dtau, [dg[0] * tau, dg[1] * tau])
    }
}

fn composite_gl(lo: f64, hi: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let gl = gauss_legendre(order);
    let h = (hi - lo) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let a = lo + p as f64 * h;
        for &(x, w) in &gl {
            out.push((a + 0.5 * h * (x + 1.0), 0.5 * h * w));
        }
    }
    out
}

/// Points per period in the angular chart variable; exact for the retained harmonic content.
pub const PHI_POINTS: usize = 32;

const T_PANELS: usize = 8;

impl Profile {
    /// `gamma = beta / t` range containing `r_lo <= |x| <= r_hi` at every time.
    fn gamma_range(&self, r_lo: f64, r_hi: f64) -> (f64, f64) {
        let mu = self.mu;
        (r_hi.powf(-1.0 / mu) * (0.5 / mu).powf(0.5 / mu) * 0.98, r_lo.powf(-1.0 / mu) * (1.5 / mu).powf(0.5 / mu) * 1.02)
    }

    fn gamma_nodes(&self, t: f64, glo: f64, ghi: f64, harmonic: u32) -> Vec<(f64, f64)> {
        let phase = (self.n_period.max(harmonic) as f64) * t * (ghi - glo);
        let panels = ((phase / PI).ceil() as usize).max(24);
        composite_gl(glo, ghi, panels, 16)
    }

    /// Integrates `g(x, t, fields)` over `x` at fixed `t > 0`, in chart coordinates
    /// `beta = t gamma`, one angular period times `N`.
    fn space_integral<const K: usize>(
        &self,
        t: f64,
        r_lo: f64,
        r_hi: f64,
        harmonic: u32,
        g: &(dyn Fn([f64; 2], f64, &ChartFields) -> [f64; K] + Sync),
    ) -> Result<[f64; K]> {
        let mu = self.mu;
        let (glo, ghi) = self.gamma_range(r_lo, r_hi);
        let nodes = self.gamma_nodes(t, glo, ghi, harmonic);
        let nn = self.n_period as f64;
        let per = 2.0 * PI / nn;
        let hphi = per / PHI_POINTS as f64;
        let phis: Vec<f64> = (0..PHI_POINTS).map(|j| j as f64 * hphi).collect();
        let phases: Vec<Vec<C64>> = phis.iter().map(|&p| self.phases(p)).collect();
        let oms: Vec<f64> = phis.iter().map(|&p| self.omega.eval(p)).collect();
        let tm = t.powf(mu);
        let parts = nodes
            .par_iter()
            .map(|&(gm, wg)| -> Result<[f64; K]> {
                let beta = t * gm;
                let sl = self.slice(beta);
                let mut acc = [0.0; K];
                for j in 0..PHI_POINTS {
                    let l = self.local_with(&sl, &phases[j]);
                    let cf = self.chart_from_local(&l, beta, phis[j], oms[j])?;
                    let x = [tm * cf.z[0], tm * cf.z[1]];
                    // dx = t^{2mu} |J_T| t dgamma dphi
                    let wt = t.powf(2.0 * mu + 1.0) * cf.jac * wg * hphi * nn;
                    let v = g(x, t, &cf);
                    for k in 0..K {
                        acc[k] += wt * v[k];
                    }
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = [0.0; K];
        for p in parts {
            for k in 0..K {
                out[k] += p[k];
            }
        }
        Ok(out)
    }
}

impl Profile {
    /// Integrates `g(x, t, fields)` over the support of `f` in chart coordinates
    /// `(beta, phi, t)`, where the chart fields are constant along each `t` line.
    pub fn spacetime_integral<const K: usize>(
        &self,
        f: &TestFunction,
        g: &(dyn Fn([f64; 2], f64, &ChartFields) -> [f64; K] + Sync),
    ) -> Result<[f64; K]> {
        let mu = self.mu;
        let (glo, ghi) = self.gamma_range(f.r_lo, f.r_hi);
        let (b_lo, b_hi) = (f.t_lo * glo, f.t_hi * ghi);
        let freq = self.n_period.max(f.harmonic) as f64;
        let panels = ((freq * (b_hi - b_lo) / PI).ceil() as usize).max(24);
        let nodes = composite_gl(b_lo, b_hi, panels, 16);
        let nn = self.n_period as f64;
        let hphi = 2.0 * PI / nn / PHI_POINTS as f64;
        let phis: Vec<f64> = (0..PHI_POINTS).map(|j| j as f64 * hphi).collect();
        let phases: Vec<Vec<C64>> = phis.iter().map(|&p| self.phases(p)).collect();
        let oms: Vec<f64> = phis.iter().map(|&p| self.omega.eval(p)).collect();
        let tq = gauss_legendre(16);
        let parts = nodes
            .par_iter()
            .map(|&(beta, wb)| -> Result<[f64; K]> {
                let sl = self.slice(beta);
                let mut acc = [0.0; K];
                for j in 0..PHI_POINTS {
                    let l = self.local_with(&sl, &phases[j]);
                    let cf = self.chart_from_local(&l, beta, phis[j], oms[j])?;
                    let rz = cf.z[0].hypot(cf.z[1]);
                    let ta = f.t_lo.max((f.r_lo / rz).powf(1.0 / mu));
                    let tb = f.t_hi.min((f.r_hi / rz).powf(1.0 / mu));
                    if ta >= tb {
                        continue;
                    }
                    let ht = (tb - ta) / T_PANELS as f64;
                    for pnl in 0..T_PANELS {
                        let a = ta + pnl as f64 * ht;
                        for &(y, wy) in &tq {
                            let t = a + 0.5 * ht * (y + 1.0);
                            let tm = t.powf(mu);
                            // dx = t^{2mu} |J_T| dbeta dphi
                            let wt = t.powf(2.0 * mu) * cf.jac * wb * hphi * nn * 0.5 * ht * wy;
                            let v = g([tm * cf.z[0], tm * cf.z[1]], t, &cf);
                            for k in 0..K {
                                acc[k] += wt * v[k];
                            }
                        }
                    }
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = [0.0; K];
        for p in parts {
            for k in 0..K {
                out[k] += p[k];
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------- verification

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Selfsim,
    Roundtrip,
    Lp,
    Initial,
    Weak,
    Divfree,
    Poisson,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Selfsim,
        Suite::Roundtrip,
        Suite::Lp,
        Suite::Initial,
        Suite::Weak,
        Suite::Divfree,
        Suite::Poisson,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Selfsim => "selfsim",
            Suite::Roundtrip => "roundtrip",
            Suite::Lp => "lp",
            Suite::Initial => "initial",
            Suite::Weak => "weak",
            Suite::Divfree => "divfree",
            Suite::Poisson => "poisson",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .iter()
            .find(|x| x.name() == s)
            .copied()
            .ok_or_else(|| Error::Parameter(format!("unknown verification suite '{s}'")))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub samples: usize,
    pub selfsim_tol: f64,
    pub roundtrip_tol: f64,
    pub weak_tol: f64,
    pub weak_tests: usize,
    pub lp_times: Vec<f64>,
    pub lp_radii: Vec<f64>,
    pub lp_exponents: Vec<f64>,
    pub initial_times: Vec<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 42,
            samples: 1000,
            selfsim_tol: 1e-10,
            roundtrip_tol: 1e-8,
            weak_tol: 1e-5,
            weak_tests: 5,
            lp_times: vec![0.01, 0.1, 1.0],
            lp_radii: vec![0.5, 1.0, 2.0],
            lp_exponents: vec![1.0, 1.5],
            initial_times: vec![0.1, 0.01, 0.001],
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub label: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub pass: bool,
    pub rows: Vec<CheckRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub pass: bool,
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn suite(&self, s: Suite) -> Option<&SuiteReport> {
        self.suites.iter().find(|r| r.suite == s)
    }
}

fn row(label: String, value: f64, bound: f64) -> CheckRow {
    CheckRow { pass: value <= bound, label, value, bound }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn rel2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1]) / b[0].hypot(b[1]).max(1e-300)
}

/// Runs the requested verification suites on a reconstructed profile.
pub fn verify(profile: &Profile, suites: &[Suite], opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut out = Vec::new();
    for &s in suites {
        let rows = match s {
            Suite::Selfsim => verify_selfsim(profile, opts)?,
            Suite::Roundtrip => verify_roundtrip(profile, opts)?,
            Suite::Lp => verify_lp(profile, opts)?,
            Suite::Initial => verify_initial(profile, opts)?,
            Suite::Weak => verify_weak(profile, opts)?,
            Suite::Divfree => verify_divfree(profile, opts)?,
            Suite::Poisson => verify_poisson(profile, opts)?,
        };
        out.push(SuiteReport { suite: s, pass: rows.iter().all(|r| r.pass), rows });
    }
    Ok(VerifyReport { seed: opts.seed, pass: out.iter().all(|s| s.pass), suites: out })
}

fn suite_rng(opts: &VerifyOptions, s: Suite) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(opts.seed ^ (s as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn verify_selfsim(p: &Profile, opts: &VerifyOptions) -> Result<Vec<CheckRow>> {
    let mu = p.mu;
    let om_sup = p.omega_sup();
    let mut rng = suite_rng(opts, Suite::Selfsim);
    let cases: Vec<(f64, [f64; 2], f64)> = (0..opts.samples)
        .map(|_| {
            let lam = 10f64.powf(rng.gen_range(-1.0..1.0));
            let r = 10f64.powf(rng.gen_range(-0.7..0.7));
            let th = rng.gen_range(0.0..2.0 * PI);
            let t = 10f64.powf(rng.gen_range(-2.0..0.0));
            (lam, [r * th.cos(), r * th.sin()], t)
        })
        .collect();
    let errs = cases
        .par_iter()
        .map(|&(lam, x, t)| {
            let a = p.eval(x, t)?;
            let lm = lam.powf(mu);
            let b = p.eval([lm * x[0], lm * x[1]], lam * t)?;
            let lu = lam.powf(mu - 1.0);
            // w vanishes on the spiral curves, so errors are measured against its local size
            let rb = b.x[0].hypot(b.x[1]);
            let wscale = rb.powf(-1.0 / mu) * mu.powf(-0.5 / mu) * om_sup;
            let wref = a.w / lam;
            Ok([
                (b.w - wref).abs() / wref.abs().max(wscale),
                rel2(b.u, [lu * a.u[0], lu * a.u[1]]),
                rel(b.psi, lam.powf(2.0 * mu - 1.0) * a.psi),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let names = ["w", "u", "psi"];
    Ok((0..3)
        .map(|k| {
            let m = errs.iter().map(|e| e[k]).fold(0.0, f64::max);
            row(format!("max relative scaling defect of {} over {} samples", names[k], opts.samples), m, opts.selfsim_tol)
        })
        .collect())
}

fn verify_roundtrip(p: &Profile, opts: &VerifyOptions) -> Result<Vec<CheckRow>> {
    let mut rng = suite_rng(opts, Suite::Roundtrip);
    let zs: Vec<[f64; 2]> = (0..opts.samples)
        .map(|_| {
            let r = 10f64.powf(rng.gen_range(-1.0..1.0));
            let th = rng.gen_range(0.0..2.0 * PI);
            [r * th.cos(), r * th.sin()]
        })
        .collect();
    let errs = zs
        .par_iter()
        .map(|&z| {
            let (b, ph) = p.invert(z)?;
            Ok(rel2(p.forward(b, ph)?, z))
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = errs.iter().copied().fold(0.0, f64::max);
    Ok(vec![row(format!("max |T(T^-1 z) - z| / |z| over {} samples", opts.samples), m, opts.roundtrip_tol)])
}

/// Right-hand side of the time-independent `L^p(B(0, R))` bound.
pub fn lp_bound(mu: f64, p: f64, omega_lp: f64, r: f64) -> f64 {
    (6.0 * mu / (2.0 * mu - p)).powf(1.0 / p) * mu.powf(-0.5 / mu) * omega_lp * r.powf(2.0 / p - 1.0 / mu)
}

impl Profile {
    /// `gamma` with `|x| = R` on the chart ray `phi` at time `t`.
    fn gamma_at_radius(&self, t: f64, phi: f64, r: f64) -> Result<f64> {
        let mu = self.mu;
        let f = |g: f64| -> Result<f64> {
            let l = self.local(t * g, phi);
            Ok(self.log_radius(&l, t * g, phi)? + mu * t.ln() - r.ln())
        };
        let (mut lo, mut hi) = self.gamma_range(r, r);
        lo *= 0.5;
        hi *= 2.0;
        let (mut flo, fhi) = (f(lo)?, f(hi)?);
        if flo < 0.0 || fhi > 0.0 {
            return Err(Error::Inversion(format!("radius {r} not bracketed on phi = {phi}")));
        }
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            let fm = f(m)?;
            if (fm > 0.0) == (flo > 0.0) {
                lo = m;
                flo = fm;
            } else {
                hi = m;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `||w(., t)||_{L^p(B(0, R))}` by quadrature in `(gamma, phi)`; the region is `gamma >= gamma_R(phi)`.
    pub fn lp_norm_ball(&self, t: f64, r: f64, p: f64) -> Result<f64> {
        let mu = self.mu;
        if !(p >= 1.0 && p < 2.0 * mu) {
            return Err(Error::Parameter(format!("need 1 <= p < 2 mu, got p = {p}")));
        }
        let nn = self.n_period as f64;
        let per = 2.0 * PI / nn;
        let nphi = 64;
        let hphi = per / nphi as f64;
        // gamma = gamma_R v^{-m}: integrand ~ v^{(2mu - p) m - 1}
        let m = (1.0 / (2.0 * mu - p)).ceil().max(1.0);
        let gl = composite_gl(0.0, 1.0, 4, 16);
        let tot = (0..nphi)
            .into_par_iter()
            .map(|j| -> Result<f64> {
                let phi = j as f64 * hphi;
                let g0 = self.gamma_at_radius(t, phi, r)?;
                let om = self.omega.eval(phi).abs().powf(p);
                let ph = self.phases(phi);
                let mut acc = 0.0;
                for &(v, wv) in &gl {
                    let gm = g0 * v.powf(-m);
                    let dg = g0 * m * v.powf(-m - 1.0);
                    let beta = t * gm;
                    let l = self.local_with(&self.slice(beta), &ph);
                    // |w|^p dx = gamma^{p - 2mu - 1} V^{-p/2mu} |Omega|^p |E| / (2mu) dgamma dphi
                    let f = gm.powf(p - 2.0 * mu - 1.0) * l.v.powf(-p / (2.0 * mu)) * om * l.e.abs() / (2.0 * mu);
                    acc += f * dg * wv;
                }
                Ok(acc * hphi * nn)
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .sum::<f64>();
        Ok(tot.powf(1.0 / p))
    }

    /// `||w(., t) - w(., 0)||_{L^1}` over the annulus `r_lo <= |x| <= r_hi`.
    pub fn l1_initial_gap(&self, t: f64, r_lo: f64, r_hi: f64) -> Result<f64> {
        let mu = self.mu;
        let nn = self.n_period as f64;
        let per = 2.0 * PI / nn;
        let nphi = 512;
        let hphi = per / nphi as f64;
        let gl = composite_gl(0.0, 1.0, 4, 16);
        let beta0 = self.slice(0.0);
        let tot = (0..nphi)
            .into_par_iter()
            .map(|j| -> Result<f64> {
                let phi = j as f64 * hphi;
                let ga = self.gamma_at_radius(t, phi, r_hi)?;
                let gb = self.gamma_at_radius(t, phi, r_lo)?;
                let ph = self.phases(phi);
                let om = self.omega.eval(phi);
                let mut acc = 0.0;
                for &(y, wy) in &gl {
                    let gm = ga + (gb - ga) * y;
                    let beta = t * gm;
                    let l = self.local_with(&self.slice(beta), &ph);
                    let cf = self.chart_from_local(&l, beta, phi, om)?;
                    let x = [t.powf(mu) * cf.z[0], t.powf(mu) * cf.z[1]];
                    let th = beta + phi;
                    let l0 = self.local_with(&beta0, &self.phases(th));
                    let w0 = x[0].hypot(x[1]).powf(-1.0 / mu) * self.initial_from_local(&l0, th).w0;
                    let wt = t.powf(2.0 * mu + 1.0) * cf.jac * (gb - ga) * wy;
                    acc += (cf.w / t - w0).abs() * wt;
                }
                Ok(acc * hphi * nn)
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .sum::<f64>();
        Ok(tot)
    }
}

fn verify_lp(p: &Profile, opts: &VerifyOptions) -> Result<Vec<CheckRow>> {
    let mu = p.mu;
    let mut rows = Vec::new();
    for &e in &opts.lp_exponents {
        if e >= 2.0 * mu {
            continue;
        }
        let olp = p.omega.lp_norm(e);
        for &t in &opts.lp_times {
            for &r in &opts.lp_radii {
                let v = p.lp_norm_ball(t, r, e)?;
                rows.push(row(format!("||w(., {t})||_L^{e}(B(0, {r}))"), v, lp_bound(mu, e, olp, r)));
            }
        }
    }
    Ok(rows)
}

/// Annulus where the initial-data gap is in its asymptotic regime for `t <= 0.1`.
pub fn initial_annulus(mu: f64, n_period: u32) -> (f64, f64) {
    let r = (0.1 * n_period as f64).max(1.0).powf(mu) / mu.sqrt();
    (r, 2.0 * r)
}

fn verify_initial(p: &Profile, opts: &VerifyOptions) -> Result<Vec<CheckRow>> {
    let (r_lo, r_hi) = initial_annulus(p.mu, p.n_period);
    let gaps = opts
        .initial_times
        .iter()
        .map(|&t| p.l1_initial_gap(t, r_lo, r_hi))
        .collect::<Result<Vec<f64>>>()?;
    // ring mass of w(., 0) sets the slack for the non-strict comparison
    let scale = p.initial(0.0).w0.abs() * 2.0 * PI * (r_hi.powf(2.0 - 1.0 / p.mu) - r_lo.powf(2.0 - 1.0 / p.mu)).abs();
    let mut rows = Vec::new();
    for k in 1..gaps.len() {
        rows.push(CheckRow {
            label: format!(
                "L1 gap on [{r_lo:.4}, {r_hi:.4}] at t = {} vs t = {}",
                opts.initial_times[k],
                opts.initial_times[k - 1]
            ),
            value: gaps[k],
            bound: gaps[k - 1],
            pass: gaps[k] <= gaps[k - 1] + 1e-12 * scale,
        });
    }
    Ok(rows)
}

/// Seeded family of test functions supported in `[0.5, 2] x [0, 1]`.
pub fn test_functions(n_period: u32, count: usize, seed: u64) -> Vec<TestFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let rc = rng.gen_range(0.9..1.4);
            let rw = rng.gen_range(0.25..0.4);
            let tc = rng.gen_range(0.15..0.3);
            let tw = rng.gen_range(0.05..0.1);
            let (t_lo, t_hi) = if i == 0 { (0.0, tc + tw) } else { (tc - tw, tc + tw) };
            TestFunction {
                r_lo: rc - rw,
                r_hi: rc + rw,
                t_lo,
                t_hi,
                theta_c: rng.gen_range(0.0..2.0 * PI),
                amp: 0.5,
                harmonic: n_period,
            }
        })
        .collect()
}

impl Profile {
    /// `int w(x, 0) f(x, 0) dx` from the initial-data factors.
    fn initial_term(&self, f: &TestFunction) -> f64 {
        let mu = self.mu;
        let nn = self.n_period as f64;
        let per = 2.0 * PI / nn;
        let nth = 64;
        let h = per / nth as f64;
        let rad = composite_gl(f.r_lo, f.r_hi, 24, 16);
        let mut acc = 0.0;
        for j in 0..nth {
            let th = j as f64 * h;
            let w0 = self.initial(th).w0;
            for &(r, wr) in &rad {
                let (g, _) = f.space([r * th.cos(), r * th.sin()]);
                acc += r.powf(-1.0 / mu) * w0 * g * (f.tau(0.0).0) * r * wr * h * nn;
            }
        }
        acc
    }

    /// Weak vorticity residual and the total absolute magnitude of its terms.
    pub fn weak_residual(&self, f: &TestFunction) -> Result<(f64, f64)> {
        let mu = self.mu;
        let g = |x: [f64; 2], t: f64, cf: &ChartFields| -> [f64; 2] {
            let (_, ft, gf) = f.eval(x, t);
            let w = cf.w / t;
            let a = w * ft;
            let b = w * t.powf(mu - 1.0) * (cf.u[0] * gf[0] + cf.u[1] * gf[1]);
            [a + b, a.abs() + b.abs()]
        };
        let [mut res, mut mag] = self.spacetime_integral(f, &g)?;
        if f.t_lo == 0.0 {
            let i0 = self.initial_term(f);
            res += i0;
            mag += i0.abs();
        }
        Ok((res, mag))
    }

    /// `int u . grad f dx` at time `t` and its magnitude.
    pub fn divfree_residual(&self, f: &TestFunction, t: f64) -> Result<(f64, f64)> {
        let mu = self.mu;
        let g = |x: [f64; 2], t: f64, cf: &ChartFields| -> [f64; 2] {
            let (_, gf) = f.space(x);
            let v = t.powf(mu - 1.0) * (cf.u[0] * gf[0] + cf.u[1] * gf[1]);
            [v, v.abs()]
        };
        let v = self.space_integral(t, f.r_lo, f.r_hi, f.harmonic, &g)?;
        Ok((v[0], v[1]))
    }

    /// `int grad psi . grad f + w f dx` at time `t` and its magnitude.
    pub fn poisson_residual(&self, f: &TestFunction, t: f64) -> Result<(f64, f64)> {
        let mu = self.mu;
        let g = |x: [f64; 2], t: f64, cf: &ChartFields| -> [f64; 2] {
            let (fv, gf) = f.space(x);
            let a = t.powf(mu - 1.0) * (cf.grad_psi[0] * gf[0] + cf.grad_psi[1] * gf[1]);
            let b = cf.w / t * fv;
            [a + b, a.abs() + b.abs()]
        };
        let v = self.space_integral(t, f.r_lo, f.r_hi, f.harmonic, &g)?;
        Ok((v[0], v[1]))
    }
}

fn weak_rows(
    p: &Profile,
    opts: &VerifyOptions,
    s: Suite,
    run: impl Fn(&TestFunction) -> Result<(f64, f64)>,
) -> Result<Vec<CheckRow>> {
    test_functions(p.n_period, opts.weak_tests, opts.seed ^ s as u64)
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let (r, m) = run(f)?;
            Ok(row(format!("test function {i}: |residual| / magnitude (residual {r:.3e}, magnitude {m:.3e})"), r.abs() / m.max(1e-300), opts.weak_tol))
        })
        .collect()
}

fn verify_weak(p: &Profile, opts: &VerifyOptions) -> Result<Vec<CheckRow>> {
    weak_rows(p, opts, Suite::Weak, |f| p.weak_residual(f))
}

fn verify_divfree(p: &Profile, opts: &VerifyOptions) -> Result<Vec<CheckRow>> {
    weak_rows(p, opts, Suite::Divfree, |f| p.divfree_residual(f, 0.5 * (f.t_lo + f.t_hi)))
}

fn verify_poisson(p: &Profile, opts: &VerifyOptions) -> Result<Vec<CheckRow>> {
    weak_rows(p, opts, Suite::Poisson, |f| p.poisson_residual(f, 0.5 * (f.t_lo + f.t_hi)))
}

// ---------------------------------------------------------------- export

#[derive(Serialize)]
struct SampleRow {
    x1: f64,
    x2: f64,
    t: f64,
    w: f64,
    u1: f64,
    u2: f64,
    psi: f64,
}

pub fn samples_to_csv(samples: &[PhysicalSample]) -> Result<String> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    for s in samples {
        wr.serialize(SampleRow { x1: s.x[0], x2: s.x[1], t: s.t, w: s.w, u1: s.u[0], u2: s.u[1], psi: s.psi })
            .map_err(|e| Error::Numeric(format!("csv: {e}")))?;
    }
    let bytes = wr.into_inner().map_err(|e| Error::Numeric(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Numeric(format!("csv: {e}")))
}

#[derive(Serialize)]
struct CurveRow {
    curve: usize,
    phi0: f64,
    t: f64,
    beta: f64,
    x1: f64,
    x2: f64,
}

pub fn curves_to_csv(curves: &[SpiralCurve]) -> Result<String> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    for (i, c) in curves.iter().enumerate() {
        for p in &c.points {
            wr.serialize(CurveRow { curve: i, phi0: c.phi0, t: c.t, beta: p.beta, x1: p.x[0], x2: p.x[1] })
                .map_err(|e| Error::Numeric(format!("csv: {e}")))?;
        }
    }
    let bytes = wr.into_inner().map_err(|e| Error::Numeric(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Numeric(format!("csv: {e}")))
}

/// Standalone SVG with one polyline per curve and annotated axes.
pub fn curves_to_svg(curves: &[SpiralCurve], title: &str) -> String {
    let size = 640.0;
    let pad = 48.0;
    let ext = curves
        .iter()
        .flat_map(|c| c.points.iter())
        .map(|p| p.x[0].abs().max(p.x[1].abs()))
        .fold(0.0, f64::max)
        .max(1e-12)
        * 1.05;
    let half = 0.5 * (size - 2.0 * pad);
    let cx = size / 2.0;
    let map = |x: [f64; 2]| (cx + x[0] / ext * half, cx - x[1] / ext * half);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!("<text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n", xml_escape(title)));
    let (l, r) = (pad, size - pad);
    s.push_str(&format!("<line x1=\"{l}\" y1=\"{cx}\" x2=\"{r}\" y2=\"{cx}\" stroke=\"#888\" stroke-width=\"1\"/>\n"));
    s.push_str(&format!("<line x1=\"{cx}\" y1=\"{l}\" x2=\"{cx}\" y2=\"{r}\" stroke=\"#888\" stroke-width=\"1\"/>\n"));
    s.push_str(&format!("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">x1</text>\n", r + 6.0, cx + 4.0));
    s.push_str(&format!("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">x2</text>\n", cx + 4.0, l - 6.0));
    for k in [-1.0, -0.5, 0.5, 1.0] {
        let v = k * ext;
        let (px, _) = map([v, 0.0]);
        let (_, py) = map([0.0, v]);
        s.push_str(&format!("<line x1=\"{px:.2}\" y1=\"{}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"#888\"/>\n", cx - 4.0, cx + 4.0));
        s.push_str(&format!("<text x=\"{px:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{v:.3}</text>\n", cx + 16.0));
        s.push_str(&format!("<line x1=\"{}\" y1=\"{py:.2}\" x2=\"{}\" y2=\"{py:.2}\" stroke=\"#888\"/>\n", cx - 4.0, cx + 4.0));
        s.push_str(&format!("<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\">{v:.3}</text>\n", cx + 6.0, py + 3.0));
    }
    for c in curves {
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|p| {
                let (a, b) = map(p.x);
                format!("{a:.3},{b:.3}")
            })
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"1.2\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
