//! The nonlinear operator `Lbar(psibar, Omega)` and its derivative at the trivial profile.
//!
//! Evaluation is written in the perturbation `delta = psibar - psibar0`, so the
//! O(1) parts of the bar derivatives cancel analytically and round-off scales
//! with the size of the perturbation rather than with the base state.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid_space::{bracket, AngularSignal, ModeProfile, SolverParams, SpectralField, C64};
use crate::operators::{shifts, BarKind, LinearModeOperator, RadialOps, bar_nodal, linearization_nodal};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Dropped-harmonic mass above this fraction of the residual norm is reported.
pub const TRUNCATION_WARN: f64 = 1e-8;

/// Angular collocation count for `K` harmonics: twice the next power of two above `4K + 1`.
pub fn angle_count(harmonics: usize) -> usize {
    2 * (4 * harmonics + 1).next_power_of_two()
}

/// Operators and transforms reused across evaluations.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: SolverParams,
    pub ops: RadialOps,
    pub modes: Vec<i64>,
    pub n_angles: usize,
}

impl Model {
    pub fn new(params: &SolverParams) -> Result<Self> {
        params.validate()?;
        let ops = RadialOps::from_params(params)?;
        Ok(Model {
            params: params.clone(),
            ops,
            modes: params.mode_indices(),
            n_angles: angle_count(params.harmonics),
        })
    }

    pub fn m(&self) -> usize {
        self.ops.m()
    }

    /// Reduced angles `theta_j = N phi_j` on one period.
    pub fn reduced_angles(&self) -> Vec<f64> {
        let j = self.n_angles as f64;
        (0..self.n_angles).map(|i| 2.0 * std::f64::consts::PI * i as f64 / j).collect()
    }

    fn harmonic(&self, n: i64) -> i64 {
        n / self.params.n_period as i64
    }

    /// Mode values to angular samples, `out[j][i]` at angle `j`, node `i`.
    pub fn to_angles(&self, nodal: &[Vec<C64>]) -> (Vec<Vec<f64>>, f64) {
        let th = self.reduced_angles();
        let np = nodal[0].len();
        let mut imag: f64 = 0.0;
        let out = th
            .iter()
            .map(|&t| {
                let mut row = vec![ZERO; np];
                for (k, v) in self.modes.iter().zip(nodal) {
                    let e = C64::from_polar(1.0, self.harmonic(*k) as f64 * t);
                    for (r, x) in row.iter_mut().zip(v) {
                        *r += x * e;
                    }
                }
                row.iter().for_each(|r| imag = imag.max(r.im.abs()));
                row.into_iter().map(|r| r.re).collect()
            })
            .collect();
        (out, imag)
    }

    /// Angular samples to retained modes, plus the max modulus of dropped harmonics.
    pub fn to_modes(&self, vals: &[Vec<f64>]) -> (Vec<Vec<C64>>, f64) {
        let j = self.n_angles;
        let th = self.reduced_angles();
        let np = vals[0].len();
        let coeff = |k: i64| -> Vec<C64> {
            let mut c = vec![ZERO; np];
            for (t, row) in th.iter().zip(vals) {
                let e = C64::from_polar(1.0 / j as f64, -(k as f64) * t);
                for (ci, &v) in c.iter_mut().zip(row) {
                    *ci += e * v;
                }
            }
            c
        };
        let kept: Vec<Vec<C64>> = self.modes.iter().map(|&n| coeff(self.harmonic(n))).collect();
        let kmax = self.params.harmonics as i64;
        let mut dropped: f64 = 0.0;
        for k in (kmax + 1)..=(j as i64 / 2) {
            let c = coeff(k);
            dropped = dropped.max(c.iter().map(|x| x.norm()).fold(0.0, f64::max));
        }
        (kept, dropped)
    }

    /// `Omega` at the collocation angles.
    pub fn omega_samples(&self, omega: &AngularSignal) -> Result<Vec<f64>> {
        let nn = self.params.n_period as i64;
        if omega.coeffs.keys().any(|n| n % nn != 0) {
            return Err(Error::Parameter(format!("Omega has modes outside N Z (N = {nn})")));
        }
        Ok(self
            .reduced_angles()
            .iter()
            .map(|t| omega.eval(t / self.params.n_period as f64))
            .collect())
    }

    /// Nodal perturbation `psibar - psibar0`, one vector per retained mode.
    pub fn perturbation(&self, psibar: &SpectralField) -> Result<Vec<Vec<C64>>> {
        let m = self.m();
        let p0 = self.params.psibar0();
        self.modes
            .iter()
            .map(|&n| {
                let mut v = match psibar.mode(n) {
                    Some(mp) => {
                        if mp.core.len() != m {
                            return Err(Error::Structure(format!("mode {n} has {} nodes, grid has {m}", mp.core.len())));
                        }
                        mp.to_nodal(&self.ops.basis)
                    }
                    None => vec![ZERO; m + 1],
                };
                if n == 0 {
                    v.iter_mut().for_each(|x| *x -= p0);
                }
                Ok(v)
            })
            .collect()
    }

    pub fn field_from_perturbation(&self, delta: &[Vec<C64>]) -> SpectralField {
        let p0 = self.params.psibar0();
        let nodal: Vec<(i64, Vec<C64>)> = self
            .modes
            .iter()
            .zip(delta)
            .map(|(&n, v)| {
                let mut v = v.clone();
                if n == 0 {
                    v.iter_mut().for_each(|x| *x += p0);
                }
                (n, v)
            })
            .collect();
        SpectralField::from_nodal(&self.params, &self.ops.basis, &nodal)
    }
}

/// Pointwise bar derivatives of `psibar` at the collocation points, as
/// perturbations of their trivial values `(-1, 1, -2mu, 0, 0)`.
pub struct BarSamples {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub imag: f64,
}

pub fn bar_samples(model: &Model, delta: &[Vec<C64>]) -> BarSamples {
    let mu = model.params.mu;
    let ops = &model.ops;
    let per_mode: Vec<[Vec<C64>; 5]> = model
        .modes
        .par_iter()
        .zip(delta.par_iter())
        .map(|(&n, v)| {
            let a = bar_nodal(ops, BarKind::DbetaBar, n, mu, v);
            let b = bar_nodal(ops, BarKind::DvarphiBar, n, mu, v);
            let d = bar_nodal(ops, BarKind::Dphi, n, mu, v);
            let e = bar_nodal(ops, BarKind::Dphi, n, mu, &a);
            let mut c = ops.apply_p(n, &a);
            for (o, x) in c.iter_mut().zip(&a) {
                *o = -*o + x * (2.0 * mu);
            }
            [a, b, c, d, e]
        })
        .collect();
    let pick = |i: usize| -> Vec<Vec<C64>> { per_mode.iter().map(|q| q[i].clone()).collect() };
    let mut imag: f64 = 0.0;
    let mut ang = |i: usize| {
        let (v, im) = model.to_angles(&pick(i));
        imag = imag.max(im);
        v
    };
    let (a, b, c, d, e) = (ang(0), ang(1), ang(2), ang(3), ang(4));
    BarSamples { a, b, c, d, e, imag }
}

#[derive(Clone, Debug, Serialize)]
pub struct NormReport {
    /// `sum_n <n>^0.5 max_j |r_n(beta_j)|`.
    pub aggregate: f64,
    pub per_mode: Vec<(i64, f64)>,
    pub dropped_mass: f64,
    pub imag_residue: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ResidualField {
    pub field: SpectralField,
    /// Nodal residual per retained mode, in `Model::modes` order.
    pub nodal: Vec<Vec<C64>>,
    pub norm_report: NormReport,
}

impl ResidualField {
    pub fn to_json(&self) -> Result<String> {
        let mut v: serde_json::Value = serde_json::from_str(&self.field.to_json()?)?;
        v["norm_report"] = serde_json::to_value(&self.norm_report)?;
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

pub fn residual_norm(modes: &[i64], nodal: &[Vec<C64>]) -> (f64, Vec<(i64, f64)>) {
    let per: Vec<(i64, f64)> = modes
        .iter()
        .zip(nodal)
        .map(|(&n, v)| (n, v.iter().map(|x| x.norm()).fold(0.0, f64::max)))
        .collect();
    let agg = per.iter().map(|(n, r)| bracket(*n as f64).sqrt() * r).sum();
    (agg, per)
}

pub fn eval_lbar(psibar: &SpectralField, omega: &AngularSignal) -> Result<ResidualField> {
    let model = Model::new(&psibar.params)?;
    let delta = model.perturbation(psibar)?;
    eval_lbar_nodal(&model, &delta, omega)
}

/// `Lbar` at `psibar0 + delta` (nodal perturbation per mode).
pub fn eval_lbar_nodal(model: &Model, delta: &[Vec<C64>], omega: &AngularSignal) -> Result<ResidualField> {
    let mu = model.params.mu;
    let om0 = model.params.omega0();
    let om = model.omega_samples(omega)?;
    let bs = bar_samples(model, delta);
    let betas = model.ops.basis.grid.beta_ext();
    let th = model.reduced_angles();
    let nper = model.params.n_period as f64;

    let nj = th.len();
    let np = betas.len();
    let mut r_vals = vec![vec![0.0; np]; nj];
    let mut s_vals = vec![vec![0.0; np]; nj];
    let mut src_vals = vec![vec![0.0; np]; nj];
    for j in 0..nj {
        let w = om[j] - om0;
        for i in 0..np {
            let (a, b, c, d, e) = (bs.a[j][i], bs.b[j][i], bs.c[j][i], bs.d[j][i], bs.e[j][i]);
            let sign_err = |q: &'static str, v: f64| Error::SignCondition {
                quantity: q,
                value: v,
                beta: betas[i],
                phi: th[j] / nper,
            };
            if -1.0 + a >= 0.0 {
                return Err(sign_err("dbeta_bar psibar", -1.0 + a));
            }
            if 1.0 + b <= 0.0 {
                return Err(sign_err("dvarphi_bar psibar", 1.0 + b));
            }
            if -2.0 * mu + c >= 0.0 {
                return Err(sign_err("(dvarphi_bar + 1) dbeta_bar psibar", -2.0 * mu + c));
            }
            let z = -2.0 * mu + c;
            let xz = 2.0 * (a - 1.0) * (1.0 + b) / z;
            let xz_m = (2.0 * mu * (a - b + a * b) - c) / (mu * z);
            let k = e / (2.0 * (a - 1.0));
            r_vals[j][i] = xz_m + xz * k * k - e * d / (2.0 * (a - 1.0));
            s_vals[j][i] = (z * d - e * (1.0 + b)) / (2.0 * (a - 1.0));
            let q = (-(b.ln_1p()) / (2.0 * mu)).exp_m1();
            src_vals[j][i] = (-2.0 * mu * (om0 * q + w + q * w) + c * (1.0 + q) * (om0 + w)) / (2.0 * mu);
        }
    }
    let (rm, d1) = model.to_modes(&r_vals);
    let (sm, d2) = model.to_modes(&s_vals);
    let (srcm, d3) = model.to_modes(&src_vals);
    let ops = &model.ops;
    let nodal: Vec<Vec<C64>> = model
        .modes
        .par_iter()
        .enumerate()
        .map(|(idx, &n)| {
            let mut out = bar_nodal(ops, BarKind::DvarphiBar, n, mu, &rm[idx]);
            for i in 0..out.len() {
                out[i] += C64::new(0.0, n as f64) * sm[idx][i] + srcm[idx][i];
            }
            out
        })
        .collect();
    let (aggregate, per_mode) = residual_norm(&model.modes, &nodal);
    let dropped = d1.max(d2).max(d3);
    let mut warnings = Vec::new();
    if dropped > TRUNCATION_WARN * aggregate.max(f64::MIN_POSITIVE) && dropped > 1e-14 {
        warnings.push(format!("dropped harmonic mass {dropped:.3e} exceeds {TRUNCATION_WARN:e} of residual"));
    }
    let modes = model
        .modes
        .iter()
        .zip(&nodal)
        .map(|(&n, v)| ModeProfile::from_nodal(n, &ops.basis, v))
        .collect();
    Ok(ResidualField {
        field: SpectralField { params: model.params.clone(), modes },
        nodal,
        norm_report: NormReport { aggregate, per_mode, dropped_mass: dropped, imag_residue: bs.imag, warnings },
    })
}

/// Derivative at `(psibar0, Omega0)` assembled from the bar-derivative form
/// `((dvb dvb + mu^2 dphi dphi)(dbb + 2mu) + (2mu - 1)(dbb + dvb)) / (2 mu^2)`.
pub fn frechet_at_trivial(params: &SolverParams) -> Result<Vec<LinearModeOperator>> {
    let ops = RadialOps::from_params(params)?;
    frechet_at_trivial_with(&ops, params)
}

pub fn frechet_nodal(ops: &RadialOps, n: i64, mu: f64) -> DMatrix<C64> {
    let np = ops.m() + 1;
    let id = DMatrix::<C64>::identity(np, np);
    let dbb = ops.q_complex() + &id * C64::new(1.0 - 2.0 * mu, 0.0);
    let dvb = -ops.p(n) + &id * C64::new(2.0 * mu - 1.0, 0.0);
    let dphi2 = &id * C64::new(-(n as f64) * (n as f64), 0.0);
    let lead = &dvb * &dvb + dphi2 * C64::new(mu * mu, 0.0);
    let a = lead * (&dbb + &id * C64::new(2.0 * mu, 0.0)) + (dbb + dvb) * C64::new(2.0 * mu - 1.0, 0.0);
    a / C64::new(2.0 * mu * mu, 0.0)
}

pub fn frechet_at_trivial_with(ops: &RadialOps, params: &SolverParams) -> Result<Vec<LinearModeOperator>> {
    params
        .mode_indices()
        .into_iter()
        .map(|n| {
            let (sp, sm) = shifts(n, params.mu);
            if sp.abs() < 1e-12 || sm.abs() < 1e-12 {
                return Err(Error::DegenerateShift(format!("shift vanishes at n = {n}")));
            }
            Ok(LinearModeOperator::from_nodal(
                n,
                "frechet(psibar0, Omega0)",
                frechet_nodal(ops, n, params.mu),
                &ops.basis,
            ))
        })
        .collect()
}

fn is_trivial(model: &Model, delta: &[Vec<C64>], omega: &AngularSignal) -> bool {
    let om0 = model.params.omega0();
    delta.iter().all(|v| v.iter().all(|x| *x == ZERO))
        && omega.coeffs.iter().all(|(n, c)| if *n == 0 { (c - om0).norm() == 0.0 } else { c.norm() == 0.0 })
}

fn sup_aggregate(model: &Model, v: &[Vec<C64>]) -> f64 {
    residual_norm(&model.modes, v).0
}

/// Central difference of `Lbar` along `d` at `psibar0 + delta`.
pub fn central_difference(model: &Model, delta: &[Vec<C64>], dir: &[Vec<C64>], omega: &AngularSignal, h: f64) -> Result<Vec<Vec<C64>>> {
    let shift = |sgn: f64| -> Vec<Vec<C64>> {
        delta.iter().zip(dir).map(|(x, d)| x.iter().zip(d).map(|(a, b)| a + b * (sgn * h)).collect()).collect()
    };
    let step_err = |e: Error| match e {
        Error::SignCondition { .. } => Error::Step(format!("step {h:e} breaks the sign conditions: {e}")),
        other => other,
    };
    let rp = eval_lbar_nodal(model, &shift(1.0), omega).map_err(step_err)?;
    let rm = eval_lbar_nodal(model, &shift(-1.0), omega).map_err(step_err)?;
    Ok(rp
        .nodal
        .iter()
        .zip(&rm.nodal)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) / (2.0 * h)).collect())
        .collect())
}

pub fn fd_derivative_check(psibar: &SpectralField, omega: &AngularSignal, direction: &SpectralField, h: f64) -> Result<f64> {
    let model = Model::new(&psibar.params)?;
    let delta = model.perturbation(psibar)?;
    let dir = model.perturbation(direction)?;
    // perturbation() removes psibar0 from mode 0; the direction is a pure increment.
    let dir: Vec<Vec<C64>> = model
        .modes
        .iter()
        .zip(dir)
        .map(|(&n, mut v)| {
            if n == 0 {
                let p0 = model.params.psibar0();
                v.iter_mut().for_each(|x| *x += p0);
            }
            v
        })
        .collect();
    fd_derivative_check_nodal(&model, &delta, omega, &dir, h)
}

pub fn fd_derivative_check_nodal(model: &Model, delta: &[Vec<C64>], omega: &AngularSignal, dir: &[Vec<C64>], h: f64) -> Result<f64> {
    if !(1e-8..=1e-3).contains(&h) {
        return Err(Error::Step(format!("h = {h:e} outside [1e-8, 1e-3]")));
    }
    if dir.iter().all(|v| v.iter().all(|x| *x == ZERO)) {
        return Ok(0.0);
    }
    let fd = central_difference(model, delta, dir, omega, h)?;
    let reference = if is_trivial(model, delta, omega) {
        model
            .modes
            .iter()
            .zip(dir)
            .map(|(&n, v)| {
                let a = linearization_nodal(&model.ops, n, model.params.mu)?;
                Ok(crate::operators::complex_matvec(&a, v))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        central_difference(model, delta, dir, omega, 0.5 * h)?
    };
    let diff: Vec<Vec<C64>> = fd
        .iter()
        .zip(&reference)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    let den = sup_aggregate(model, &reference);
    if den == 0.0 {
        return Ok(sup_aggregate(model, &diff));
    }
    Ok(sup_aggregate(model, &diff) / den)
}
