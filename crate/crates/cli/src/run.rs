use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use spiral_core::certifier::certify;
use spiral_core::grid_space::{AngularSignal, SpectralField};
use spiral_core::physical::{
    check_spiral, curves_to_csv, curves_to_svg, samples_to_csv, spiral_extract, verify, PhysicalSample, Profile,
    SpiralCheck, SpiralCurve, SpiralOptions,
};
use spiral_core::solver::{bounds_check, continuation_solve, match_initial_data, newton_solve, SolveReport};

use crate::config::{Format, Method, OmegaSpec, RunConfig};

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Certificate(String),
    Solve(String),
    Verify(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) | Failure::Io(_) => 1,
            Failure::Certificate(_) => 2,
            Failure::Solve(_) => 3,
            Failure::Verify(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Certificate(m) | Failure::Solve(m) | Failure::Verify(m) | Failure::Io(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Certify,
    Solve,
    Reconstruct,
    Verify,
    Render,
}

/// A solved profile with the `Omega` it was solved for.
pub struct Solution {
    pub omega: AngularSignal,
    pub field: SpectralField,
    pub report: SolveReport,
}

const SOLUTION_FILE: &str = "solution.json";

fn io<E: std::fmt::Display>(ctx: &Path) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", ctx.display()))
}

struct Out<'a> {
    cfg: &'a RunConfig,
    hash: String,
}

impl Out<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn wants(&self, f: Format) -> bool {
        self.cfg.formats.contains(&f)
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf, Failure> {
        let p = self.path(name);
        fs::write(&p, body).map_err(io(&p))?;
        Ok(p)
    }

    fn json<T: Serialize>(&self, name: &str, kind: &str, value: &T) -> Result<PathBuf, Failure> {
        let v = serde_json::to_value(value).map_err(|e| Failure::Io(e.to_string()))?;
        let doc = json!({ "config_hash": self.hash, "seed": self.cfg.seed, "kind": kind, "data": v });
        let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }

    fn csv(&self, name: &str, body: &str) -> Result<PathBuf, Failure> {
        self.write(name, &format!("# config_hash = {}\n{body}", self.hash))
    }
}

/// Runs one subcommand and returns the artifact paths it wrote.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    fs::create_dir_all(&cfg.out_dir).map_err(io(&cfg.out_dir))?;
    let out = Out { cfg, hash: cfg.hash() };
    let mut written = vec![out.write("config.echo", &cfg.echo())?];
    match cmd {
        Command::Certify => {
            let cert = certify(&cfg.params).map_err(|e| Failure::Certificate(e.to_string()))?;
            let table = cert.table();
            print!("{table}");
            written.push(out.write("certificate.txt", &format!("# config_hash = {}\n{table}", out.hash))?);
            if out.wants(Format::Json) {
                written.push(out.json("certificate.json", "certificate", &cert)?);
            }
            if !cert.passes {
                return Err(Failure::Certificate(format!(
                    "certificate fails: K = {:.6}, threshold = {:.1}, N = {}",
                    cert.k, cert.threshold, cert.n_period
                )));
            }
        }
        Command::Solve => {
            let sol = solve(cfg)?;
            println!(
                "converged in {} iterations, residual {:.3e}, bounds ok = {}",
                sol.report.iterations,
                sol.report.residual_history.last().copied().unwrap_or(f64::NAN),
                sol.report.bounds_ok
            );
            written.push(save_solution(&out, &sol)?);
        }
        Command::Reconstruct => {
            let sol = load_or_solve(&out, &mut written)?;
            let profile = Profile::new(&sol.field, &sol.omega).map_err(|e| Failure::Solve(e.to_string()))?;
            let samples = field_samples(cfg, &profile, sol.report.time_scale)?;
            let (curves, checks) = spirals(cfg, &profile, sol.report.time_scale)?;
            println!("{} field samples, {} spiral curves per period", samples.len(), curves.len());
            if out.wants(Format::Csv) {
                let s = samples_to_csv(&samples).map_err(|e| Failure::Io(e.to_string()))?;
                written.push(out.csv("fields.csv", &s)?);
                let c = curves_to_csv(&curves).map_err(|e| Failure::Io(e.to_string()))?;
                written.push(out.csv("curves.csv", &c)?);
            }
            if out.wants(Format::Svg) {
                written.push(out.write("spiral.svg", &svg(&out, &curves))?);
            }
            if out.wants(Format::Json) {
                let body = json!({ "samples": samples, "curves": curves, "spiral_checks": checks });
                written.push(out.json("reconstruct.json", "reconstruct", &body)?);
            }
        }
        Command::Verify => {
            let sol = load_or_solve(&out, &mut written)?;
            let profile = Profile::checked(&sol.field, &sol.omega).map_err(|e| Failure::Solve(e.to_string()))?;
            let report = verify(&profile, &cfg.suites, &cfg.verify).map_err(|e| Failure::Verify(e.to_string()))?;
            for s in &report.suites {
                for r in &s.rows {
                    println!("{:<9} {} {:.3e} (bound {:.3e})", s.suite.name(), if r.pass { "pass" } else { "FAIL" }, r.value, r.bound);
                }
            }
            if out.wants(Format::Json) {
                written.push(out.json("verify.json", "verify", &report)?);
            }
            if !report.pass {
                let failed: Vec<&str> = report.suites.iter().filter(|s| !s.pass).map(|s| s.suite.name()).collect();
                return Err(Failure::Verify(format!("verification failed in: {}", failed.join(", "))));
            }
        }
        Command::Render => {
            let sol = load_solution(&out)?.ok_or_else(|| {
                Failure::Config(format!("no saved field at {} for this config; run `solve` first", out.path(SOLUTION_FILE).display()))
            })?;
            let profile = Profile::new(&sol.field, &sol.omega).map_err(|e| Failure::Solve(e.to_string()))?;
            let (curves, _) = spirals(cfg, &profile, sol.report.time_scale)?;
            written.push(out.write("spiral.svg", &svg(&out, &curves))?);
        }
    }
    Ok(written)
}

pub fn solve(cfg: &RunConfig) -> Result<Solution, Failure> {
    let fail = |e: spiral_core::Error| Failure::Solve(e.to_string());
    let omega = cfg.omega_signal().map_err(|e| Failure::Config(e.to_string()))?;
    let (omega, field, report) = match (&cfg.omega, cfg.method) {
        (OmegaSpec::Match(_), _) => {
            let m = match_initial_data(&omega, &cfg.params, &cfg.solver).map_err(fail)?;
            (m.omega, m.psibar, m.report)
        }
        (_, Method::Newton) => {
            let (f, r) = newton_solve(&omega, &cfg.params, &cfg.solver).map_err(fail)?;
            (omega, f, r)
        }
        (_, Method::Continuation) => {
            let (f, r) = continuation_solve(&omega, &cfg.params, &cfg.solver).map_err(fail)?;
            (omega, f, r)
        }
    };
    if !report.bounds_ok {
        let rep = bounds_check(&field).map_err(fail)?;
        return Err(Failure::Solve(format!("solved field violates the pointwise bounds ({})", rep.worst)));
    }
    Ok(Solution { omega, field, report })
}

fn save_solution(out: &Out, sol: &Solution) -> Result<PathBuf, Failure> {
    let field: Value = serde_json::from_str(&sol.field.to_json().map_err(|e| Failure::Io(e.to_string()))?)
        .map_err(|e| Failure::Io(e.to_string()))?;
    let body = json!({ "omega": sol.omega, "report": sol.report, "field": field });
    out.json(SOLUTION_FILE, "solution", &body)
}

fn load_solution(out: &Out) -> Result<Option<Solution>, Failure> {
    let p = out.path(SOLUTION_FILE);
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p).map_err(io(&p))?;
    let doc: Value = serde_json::from_str(&text).map_err(io(&p))?;
    if doc["config_hash"].as_str() != Some(out.hash.as_str()) {
        return Ok(None);
    }
    let data = &doc["data"];
    let omega: AngularSignal = serde_json::from_value(data["omega"].clone()).map_err(io(&p))?;
    let field = SpectralField::from_json(&data["field"].to_string()).map_err(io(&p))?;
    let r = &data["report"];
    let report = SolveReport {
        converged: r["converged"].as_bool().unwrap_or(false),
        iterations: r["iterations"].as_u64().unwrap_or(0) as usize,
        residual_history: serde_json::from_value(r["residual_history"].clone()).unwrap_or_default(),
        bounds_ok: r["bounds_ok"].as_bool().unwrap_or(false),
        certificate_ref: None,
        epsilon_used: r["epsilon_used"].as_f64().unwrap_or(f64::NAN),
        time_scale: r["time_scale"].as_f64().unwrap_or(1.0),
        outer_history: serde_json::from_value(r["outer_history"].clone()).unwrap_or_default(),
        warnings: serde_json::from_value(r["warnings"].clone()).unwrap_or_default(),
    };
    Ok(Some(Solution { omega, field, report }))
}

fn load_or_solve(out: &Out, written: &mut Vec<PathBuf>) -> Result<Solution, Failure> {
    if let Some(s) = load_solution(out)? {
        return Ok(s);
    }
    let sol = solve(out.cfg)?;
    written.push(save_solution(out, &sol)?);
    Ok(sol)
}

/// Samples on a square grid at the configured time. A matched solution with time
/// scale `lambda` is evaluated as `lambda * f(x, lambda t)`.
pub fn field_samples(cfg: &RunConfig, profile: &Profile, lambda: f64) -> Result<Vec<PhysicalSample>, Failure> {
    let n = cfg.resolution;
    let e = cfg.extent;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = [-e + 2.0 * e * (j as f64 + 0.5) / n as f64, -e + 2.0 * e * (i as f64 + 0.5) / n as f64];
            let mut s = profile.eval(x, lambda * cfg.time).map_err(|e| Failure::Solve(e.to_string()))?;
            s.t = cfg.time;
            s.w *= lambda;
            s.u = [lambda * s.u[0], lambda * s.u[1]];
            s.psi *= lambda;
            out.push(s);
        }
    }
    Ok(out)
}

fn spirals(cfg: &RunConfig, profile: &Profile, lambda: f64) -> Result<(Vec<SpiralCurve>, Vec<SpiralCheck>), Failure> {
    let opts = SpiralOptions { r_min: cfg.spiral_r_min, r_max: cfg.spiral_r_max, points: cfg.spiral_points };
    let mut curves = spiral_extract(profile, lambda * cfg.time, &opts).map_err(|e| Failure::Solve(e.to_string()))?;
    let checks = curves
        .iter()
        .map(|c| check_spiral(profile, c))
        .collect::<spiral_core::Result<Vec<_>>>()
        .map_err(|e| Failure::Solve(e.to_string()))?;
    for c in &mut curves {
        c.t = cfg.time;
    }
    Ok((curves, checks))
}

fn svg(out: &Out, curves: &[SpiralCurve]) -> String {
    let p = &out.cfg.params;
    let title = format!("zero-set curves, mu = {}, N = {}, t = {}", p.mu, p.n_period, out.cfg.time);
    let body = curves_to_svg(curves, &title);
    body.replacen('\n', &format!("\n<!-- config_hash = {} -->\n", out.hash), 1)
}
