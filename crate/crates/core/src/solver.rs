//! Chord Newton for `Lbar(psibar, Omega) = 0`, bar-derivative bounds, and the
//! outer loop matching a prescribed initial angular vorticity.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::certifier::{certify, Certificate};
use crate::error::{Error, Result};
use crate::grid_space::{AngularSignal, SolverParams, SpectralField, SpectralNorm, C64};
use crate::nonlinear::{bar_samples, eval_lbar_nodal, Model};
use crate::operators::{linearization_nodal, NeumannFactors};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Frozen trivial-point linearization, dense LU per mode.
    Chord,
    /// Frozen linearization inverted by the Neumann series.
    Neumann,
    /// Full Newton with a finite-difference Jacobian over all real unknowns.
    FdJacobian,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chord" => Ok(Backend::Chord),
            "neumann" => Ok(Backend::Neumann),
            "fd_jacobian" | "fd" => Ok(Backend::FdJacobian),
            o => Err(Error::Parameter(format!("unknown backend '{o}'"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub backend: Backend,
    /// Iterations without a new residual minimum before giving up.
    pub stall_window: usize,
    pub max_outer: usize,
    pub outer_tol: f64,
    pub attach_certificate: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: 100,
            backend: Backend::Chord,
            stall_window: 6,
            max_outer: 50,
            outer_tol: 1e-8,
            attach_certificate: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub bounds_ok: bool,
    pub certificate_ref: Option<Certificate>,
    /// `A^{-0.5}` seminorm of `Omega - Omega0` actually solved for.
    pub epsilon_used: f64,
    /// Time rescaling `lambda` of the matched initial data (1 for plain solves).
    pub time_scale: f64,
    pub outer_history: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Last iterate of a failed solve.
#[derive(Clone, Debug)]
pub struct Stalled {
    pub field: SpectralField,
    pub report: SolveReport,
}

fn omega_gap(omega: &AngularSignal, params: &SolverParams) -> f64 {
    omega
        .sub(&AngularSignal::constant(params.omega0(), params.n_period))
        .weighted_sum(-0.5, false)
        .unwrap_or(f64::INFINITY)
}

enum LinearSolver {
    Lu(Vec<LU<C64, Dyn, Dyn>>),
    Neumann(Vec<NeumannFactors>),
    None,
}

/// Model plus factored linearization, reused across solves.
pub struct Solver {
    pub model: Model,
    pub opts: SolveOptions,
    lin: LinearSolver,
}

impl Solver {
    pub fn new(params: &SolverParams, opts: SolveOptions) -> Result<Self> {
        let model = Model::new(params)?;
        let mu = params.mu;
        let lin = match opts.backend {
            Backend::Chord => LinearSolver::Lu(
                model
                    .modes
                    .iter()
                    .map(|&n| Ok(linearization_nodal(&model.ops, n, mu)?.lu()))
                    .collect::<Result<_>>()?,
            ),
            Backend::Neumann => LinearSolver::Neumann(
                model
                    .modes
                    .iter()
                    .map(|&n| NeumannFactors::new(&model.ops, n, mu))
                    .collect::<Result<_>>()?,
            ),
            Backend::FdJacobian => LinearSolver::None,
        };
        Ok(Solver { model, opts, lin })
    }

    fn chord_step(&self, r: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
        let m = self.model.m();
        let mut out = Vec::with_capacity(r.len());
        for (k, &n) in self.model.modes.iter().enumerate() {
            let mut x = match &self.lin {
                LinearSolver::Lu(lus) => lus[k]
                    .solve(&DVector::from_column_slice(&r[k]))
                    .ok_or_else(|| Error::Solve(format!("singular linearization at mode {n}")))?
                    .as_slice()
                    .to_vec(),
                LinearSolver::Neumann(f) => f[k].solve(&self.model.ops, &r[k])?,
                LinearSolver::None => unreachable!(),
            };
            if n != 0 {
                x[m] = ZERO;
            }
            out.push(x);
        }
        Ok(out)
    }

    /// Solves from `psibar0`, or from `start` when given.
    pub fn solve(&self, omega: &AngularSignal, start: Option<&SpectralField>) -> Result<(SpectralField, SolveReport)> {
        let params = &self.model.params;
        let mut warnings = Vec::new();
        let th = crate::certifier::threshold(params.mu);
        if (params.n_period as f64) < th {
            warnings.push(format!("N = {} is below the certified threshold {th:.0}", params.n_period));
        }
        if (omega.coeff(0).re - params.omega0()).abs() > 0.5 * params.omega0() {
            warnings.push(format!(
                "Omega mean {:.4} is far from Omega0 = {:.4}",
                omega.coeff(0).re,
                params.omega0()
            ));
        }
        let mut delta = match start {
            Some(f) => self.model.perturbation(f)?,
            None => vec![vec![ZERO; self.model.m() + 1]; self.model.modes.len()],
        };
        let mut report = SolveReport {
            converged: false,
            iterations: 0,
            residual_history: vec![],
            bounds_ok: false,
            certificate_ref: None,
            epsilon_used: omega_gap(omega, params),
            time_scale: 1.0,
            outer_history: vec![],
            warnings,
        };
        let mut best = (f64::INFINITY, delta.clone(), 0usize);
        let fail = |msg: String, delta: &[Vec<C64>], report: SolveReport, model: &Model| Error::NonConvergence {
            msg: format!("{msg}; try a smaller Omega amplitude (continuation)"),
            last: Some(Box::new(Stalled { field: model.field_from_perturbation(delta), report })),
        };
        for it in 0..self.opts.max_iter {
            let r = match eval_lbar_nodal(&self.model, &delta, omega) {
                Ok(r) => r,
                Err(e @ Error::SignCondition { .. }) => {
                    report.iterations = it;
                    return Err(fail(format!("iterate left the admissible set: {e}"), &best.1, report, &self.model));
                }
                Err(e) => return Err(e),
            };
            let res = r.norm_report.aggregate;
            report.residual_history.push(res);
            report.iterations = it + 1;
            if !res.is_finite() {
                return Err(fail("residual is not finite".into(), &best.1, report, &self.model));
            }
            if res < best.0 {
                best = (res, delta.clone(), it);
            }
            if res < self.opts.tol {
                report.converged = true;
                let field = self.model.field_from_perturbation(&delta);
                report.bounds_ok = bounds_check(&field)?.ok;
                if self.opts.attach_certificate {
                    report.certificate_ref = Some(certify(params)?);
                }
                return Ok((field, report));
            }
            if res > 1e6 * report.residual_history[0].max(1.0) {
                return Err(fail(format!("residual diverged to {res:.3e}"), &best.1, report, &self.model));
            }
            if it >= best.2 + self.opts.stall_window {
                return Err(fail(
                    format!("residual stalled at {:.3e} above tol {:.1e}", best.0, self.opts.tol),
                    &best.1,
                    report,
                    &self.model,
                ));
            }
            let step = match self.opts.backend {
                Backend::FdJacobian => fd_newton_step(&self.model, &delta, omega, &r.nodal)?,
                _ => self.chord_step(&r.nodal)?,
            };
            for (d, s) in delta.iter_mut().zip(step) {
                for (x, y) in d.iter_mut().zip(s) {
                    *x -= y;
                }
            }
        }
        Err(fail(format!("max_iter = {} reached", self.opts.max_iter), &best.1, report, &self.model))
    }

    /// `h^(Omega)(theta) = (dbeta_bar psibar / (-mu dvarphi_bar psibar))^(1/2mu) Omega` at `beta = 0`.
    pub fn initial_data_map(&self, omega: &AngularSignal, start: Option<&SpectralField>) -> Result<(AngularSignal, SpectralField, SolveReport)> {
        let (field, report) = self.solve(omega, start)?;
        let h = initial_factor(&self.model, &field, omega)?;
        Ok((h, field, report))
    }
}

/// `w0` angular factor as retained Fourier modes.
pub fn initial_factor(model: &Model, field: &SpectralField, omega: &AngularSignal) -> Result<AngularSignal> {
    let mu = model.params.mu;
    let delta = model.perturbation(field)?;
    let bs = bar_samples(model, &delta);
    let om = model.omega_samples(omega)?;
    let vals: Vec<Vec<f64>> = (0..model.n_angles)
        .map(|j| {
            let ab = -1.0 + bs.a[j][0];
            let ph = 1.0 + bs.b[j][0];
            vec![(ab / (-mu * ph)).powf(0.5 / mu) * om[j]]
        })
        .collect();
    let (modes, _) = model.to_modes(&vals);
    AngularSignal::from_coeffs(
        model.params.n_period,
        model.modes.iter().zip(modes).map(|(&n, v)| (n, v[0])),
    )
}

pub fn newton_solve(omega: &AngularSignal, params: &SolverParams, opts: &SolveOptions) -> Result<(SpectralField, SolveReport)> {
    Solver::new(params, opts.clone())?.solve(omega, None)
}

/// Amplitude continuation `Omega0 + t (Omega - Omega0)`: doubles the step on
/// success, halves it on failure.
pub fn continuation_solve(omega: &AngularSignal, params: &SolverParams, opts: &SolveOptions) -> Result<(SpectralField, SolveReport)> {
    let solver = Solver::new(params, opts.clone())?;
    let base = AngularSignal::constant(params.omega0(), params.n_period);
    let gap = omega.sub(&base);
    let mut t = 0.0;
    let mut step: f64 = 1.0;
    let mut current: Option<(SpectralField, SolveReport)> = None;
    while t < 1.0 {
        let target = (t + step).min(1.0);
        let om = base.add_scaled(target, &gap);
        match solver.solve(&om, current.as_ref().map(|c| &c.0)) {
            Ok(sol) => {
                t = target;
                current = Some(sol);
                step *= 2.0;
            }
            Err(Error::NonConvergence { .. }) if step > 1.0 / 1024.0 => step *= 0.5,
            Err(Error::NonConvergence { msg, .. }) => {
                let (field, mut report) = current.unwrap_or_else(|| (SpectralField::trivial(params), empty_report()));
                report.epsilon_used = omega_gap(&base.add_scaled(t, &gap), params);
                report.converged = false;
                return Err(Error::NonConvergence {
                    msg: format!("continuation stopped at t = {t:.4}: {msg}"),
                    last: Some(Box::new(Stalled { field, report })),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(current.expect("t reached 1"))
}

fn empty_report() -> SolveReport {
    SolveReport {
        converged: false,
        iterations: 0,
        residual_history: vec![],
        bounds_ok: false,
        certificate_ref: None,
        epsilon_used: 0.0,
        time_scale: 1.0,
        outer_history: vec![],
        warnings: vec![],
    }
}

/// Newton step with a forward-difference Jacobian over the real unknowns:
/// mode 0 real part, and real/imaginary parts of modes `k > 0` at finite nodes.
fn fd_newton_step(model: &Model, delta: &[Vec<C64>], omega: &AngularSignal, r: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
    let m = model.m();
    let betas = model.ops.basis.grid.beta_ext();
    // (mode position, node, imaginary?)
    let mut unknowns: Vec<(usize, usize, bool)> = Vec::new();
    for (k, &n) in model.modes.iter().enumerate() {
        if n == 0 {
            (0..=m).for_each(|i| unknowns.push((k, i, false)));
        } else if n > 0 {
            for i in 0..m {
                unknowns.push((k, i, false));
                unknowns.push((k, i, true));
            }
        }
    }
    let pack = |v: &[Vec<C64>]| -> Vec<f64> {
        unknowns
            .iter()
            .map(|&(k, i, im)| if im { v[k][i].im } else { v[k][i].re })
            .collect()
    };
    let partner = |k: usize| model.modes.iter().position(|&x| x == -model.modes[k]).unwrap();
    let dim = unknowns.len();
    let r0 = pack(r);
    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    for (col, &(k, i, im)) in unknowns.iter().enumerate() {
        let nb = model.modes[k].unsigned_abs() as f64 * betas[i].min(1e300);
        let h = 1e-7 / (1.0 + nb).powi(2);
        let mut d = delta.to_vec();
        let inc = if im { C64::new(0.0, h) } else { C64::new(h, 0.0) };
        d[k][i] += inc;
        if model.modes[k] != 0 {
            d[partner(k)][i] += inc.conj();
        }
        let rp = eval_lbar_nodal(model, &d, omega)?;
        let rp = pack(&rp.nodal);
        for row in 0..dim {
            jac[(row, col)] = (rp[row] - r0[row]) / h;
        }
    }
    let x = jac
        .lu()
        .solve(&DVector::from_vec(r0))
        .ok_or_else(|| Error::Solve("finite-difference Jacobian is singular".into()))?;
    let mut step = vec![vec![ZERO; m + 1]; model.modes.len()];
    for (&(k, i, im), &v) in unknowns.iter().zip(x.iter()) {
        if im {
            step[k][i].im = v;
        } else {
            step[k][i].re = v;
        }
    }
    for k in 0..model.modes.len() {
        if model.modes[k] < 0 {
            let p = partner(k);
            step[k] = step[p].iter().map(|x| x.conj()).collect();
        }
    }
    Ok(step)
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundRow {
    pub name: &'static str,
    pub lower: f64,
    pub upper: f64,
    pub min: f64,
    pub max: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundsReport {
    pub ok: bool,
    pub rows: Vec<BoundRow>,
    pub worst: &'static str,
}

/// Number of angles per period and beta refinement used by `bounds_check`.
pub const BOUNDS_ANGLES: usize = 128;
pub const BOUNDS_REFINE: usize = 2;

/// The six pointwise bounds on `psibar` and its bar derivatives, on a dense sample.
pub fn bounds_check(psibar: &SpectralField) -> Result<BoundsReport> {
    let model = Model::new(&psibar.params)?;
    let mu = model.params.mu;
    let ops = &model.ops;
    let nodal = model.perturbation(psibar)?;
    let p0 = model.params.psibar0();
    // Quantities per mode: psibar, Ab, Ph, PB, Fp, FB (perturbations).
    use crate::operators::{bar_nodal, BarKind};
    let qty: Vec<[Vec<C64>; 6]> = model
        .modes
        .iter()
        .zip(&nodal)
        .map(|(&n, v)| {
            let a = bar_nodal(ops, BarKind::DbetaBar, n, mu, v);
            let b = bar_nodal(ops, BarKind::DvarphiBar, n, mu, v);
            let c = bar_nodal(ops, BarKind::Dvarphi1DbetaBar, n, mu, v);
            let d = bar_nodal(ops, BarKind::Dphi, n, mu, v);
            let e = bar_nodal(ops, BarKind::DphiDbetaBar, n, mu, v);
            [v.clone(), a, b, c, d, e]
        })
        .collect();
    let mut betas = ops.basis.grid.refined_betas(BOUNDS_REFINE);
    betas.push(f64::INFINITY);
    let rows: Vec<Vec<f64>> = betas.iter().map(|&b| ops.basis.interp_row(b)).collect();
    let base = [p0, -1.0, 1.0, -2.0 * mu, 0.0, 0.0];
    let names = [
        "psibar",
        "dbeta_bar psibar",
        "dvarphi_bar psibar",
        "(dvarphi_bar + 1) dbeta_bar psibar",
        "dphi psibar",
        "dphi dbeta_bar psibar",
    ];
    let bounds = [
        (1.0 / (4.0 * mu - 2.0), 3.0 / (4.0 * mu - 2.0)),
        (-1.5, -0.5),
        (0.5, 1.5),
        (-3.0 * mu, -mu),
        (-1.0, 1.0),
        (-1.0, 1.0),
    ];
    let nn = model.params.n_period as i64;
    let mut out = Vec::new();
    for q in 0..6 {
        // values at refined betas per mode
        let per_mode: Vec<Vec<C64>> = qty
            .iter()
            .map(|arr| rows.iter().map(|row| row.iter().zip(&arr[q]).map(|(r, v)| v * *r).sum()).collect())
            .collect();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in 0..BOUNDS_ANGLES {
            let th = 2.0 * std::f64::consts::PI * j as f64 / BOUNDS_ANGLES as f64;
            let es: Vec<C64> = model.modes.iter().map(|&n| C64::from_polar(1.0, (n / nn) as f64 * th)).collect();
            for i in 0..betas.len() {
                let v: f64 = per_mode.iter().zip(&es).map(|(pm, e)| (pm[i] * e).re).sum::<f64>() + base[q];
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let (l, u) = bounds[q];
        out.push(BoundRow { name: names[q], lower: l, upper: u, min: lo, max: hi, margin: (lo - l).min(u - hi) });
    }
    let worst = out
        .iter()
        .min_by(|a, b| a.margin.partial_cmp(&b.margin).unwrap())
        .map(|r| r.name)
        .unwrap();
    Ok(BoundsReport { ok: out.iter().all(|r| r.margin >= 0.0), rows: out, worst })
}

/// `ring w0 = mu^(-1/2mu) (2 - 1/mu)`.
pub fn w0_ring(mu: f64) -> f64 {
    mu.powf(-0.5 / mu) * (2.0 - 1.0 / mu)
}

#[derive(Clone, Debug)]
pub struct MatchResult {
    pub omega: AngularSignal,
    pub psibar: SpectralField,
    pub report: SolveReport,
    /// Normalized target `g / lambda`.
    pub g0: AngularSignal,
    pub h: AngularSignal,
}

/// Outer loop `Omega <- Omega + mu^(1/2mu) (g0 - h^(Omega))`.
pub fn match_initial_data(g: &AngularSignal, params: &SolverParams, opts: &SolveOptions) -> Result<MatchResult> {
    let mu = params.mu;
    let nn = params.n_period as i64;
    if g.coeffs.keys().any(|n| n % nn != 0) {
        return Err(Error::Parameter(format!("g has modes outside N Z (N = {nn})")));
    }
    if g.max_mode() > nn * params.harmonics as i64 {
        return Err(Error::Parameter(format!(
            "g has modes above N * harmonics = {}",
            nn * params.harmonics as i64
        )));
    }
    let g_mean = g.coeff(0).re;
    if g_mean == 0.0 {
        return Err(Error::Parameter("g has zero mean".into()));
    }
    let w0 = w0_ring(mu);
    let lambda = g_mean / w0;
    let g0 = g.scale(1.0 / lambda);
    let mut warnings = Vec::new();
    let semi = g0.weighted_sum(-0.5, true)?;
    if semi > 0.5 * w0 {
        warnings.push(format!("A^-0.5 seminorm of g0 ({semi:.3e}) is not small relative to its mean {w0:.3e}"));
    }
    let solver = Solver::new(params, opts.clone())?;
    let step = mu.powf(0.5 / mu);
    let mut omega = AngularSignal::constant(params.omega0(), params.n_period);
    let mut start: Option<SpectralField> = None;
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for _ in 0..opts.max_outer {
        let (h, field, mut report) = solver.initial_data_map(&omega, start.as_ref())?;
        let gap = g0.sub(&h);
        let err = gap.weighted_sum(-0.5, false)?;
        history.push(err);
        if err < opts.outer_tol {
            report.outer_history = history;
            report.time_scale = lambda;
            report.warnings.extend(warnings);
            return Ok(MatchResult { omega, psibar: field, report, g0, h });
        }
        if err < best {
            best = err;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= 3 {
                report.outer_history = history;
                return Err(Error::NonConvergence {
                    msg: format!("initial-data matching stagnated at {best:.3e}"),
                    last: Some(Box::new(Stalled { field, report })),
                });
            }
        }
        omega = omega.add_scaled(step, &gap);
        start = Some(field);
    }
    Err(Error::NonConvergence { msg: format!("outer loop reached {} iterations", opts.max_outer), last: None })
}
