//! Flat `key = value` run configuration.
//!
//! Lines are `dotted.key = value`; `#` starts a comment. Unknown keys and
//! malformed values are rejected with their line number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use spiral_core::grid_space::{default_grid_scale, AngularSignal, SolverParams, C64};
use spiral_core::physical::{Suite, VerifyOptions};
use spiral_core::solver::{w0_ring, Backend, SolveOptions};

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io(String),
    Parse { line: usize, msg: String },
    Invalid { field: String, msg: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Parse { line, msg } => write!(f, "config line {line}: {msg}"),
            ConfigError::Invalid { field, msg } => write!(f, "invalid config field '{field}': {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

impl Format {
    pub fn parse(s: &str) -> Option<Format> {
        match s {
            "json" => Some(Format::Json),
            "csv" => Some(Format::Csv),
            "svg" => Some(Format::Svg),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Svg => "svg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OmegaSpec {
    ConstantPlusCos { amplitude: f64, harmonic: i64 },
    Coefficients(Vec<(i64, C64)>),
    /// Solve for the `Omega` whose initial vorticity factor is `g`.
    Match(Vec<(i64, C64)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Newton,
    Continuation,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: SolverParams,
    pub omega: OmegaSpec,
    pub solver: SolveOptions,
    pub method: Method,
    pub seed: u64,
    pub suites: Vec<Suite>,
    pub verify: VerifyOptions,
    pub time: f64,
    pub extent: f64,
    pub resolution: usize,
    pub spiral_r_min: f64,
    pub spiral_r_max: f64,
    pub spiral_points: usize,
    pub out_dir: PathBuf,
    pub formats: Vec<Format>,
}

const KEYS: &[&str] = &[
    "mu",
    "N",
    "p",
    "harmonics",
    "grid.points",
    "grid.scale",
    "omega.kind",
    "omega.amplitude",
    "omega.harmonic",
    "omega.coeffs",
    "g.amplitude",
    "g.harmonic",
    "g.coeffs",
    "solver.tol",
    "solver.max_iter",
    "solver.backend",
    "solver.method",
    "solver.outer_tol",
    "verify.seed",
    "verify.suites",
    "verify.samples",
    "verify.weak_tests",
    "verify.weak_tol",
    "reconstruct.t",
    "reconstruct.extent",
    "reconstruct.resolution",
    "spiral.r_min",
    "spiral.r_max",
    "spiral.points",
    "output.dir",
    "output.formats",
];

/// Raw key/value pairs with the line each came from.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse { line, msg: format!("expected 'key = value', found '{body}'") })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Parse { line, msg: "empty key".into() });
        }
        if !KEYS.contains(&k) {
            return Err(ConfigError::Parse { line, msg: format!("unknown key '{k}'") });
        }
        if v.is_empty() {
            return Err(ConfigError::Parse { line, msg: format!("missing value for '{k}'") });
        }
        if out.insert(k.to_string(), (line, v.to_string())).is_some() {
            return Err(ConfigError::Parse { line, msg: format!("duplicate key '{k}'") });
        }
    }
    Ok(out)
}

struct Reader {
    pairs: BTreeMap<String, (usize, String)>,
}

impl Reader {
    fn raw(&self, k: &str) -> Option<&(usize, String)> {
        self.pairs.get(k)
    }

    fn get<T: std::str::FromStr>(&self, k: &str, default: T) -> Result<T, ConfigError> {
        match self.raw(k) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|_| ConfigError::Parse { line: *line, msg: format!("cannot parse '{v}' for '{k}'") }),
        }
    }

    fn list(&self, k: &str) -> Option<(usize, Vec<String>)> {
        self.raw(k).map(|(l, v)| {
            (*l, v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        })
    }

    /// `n:re[:im]` entries separated by commas.
    fn coeffs(&self, k: &str) -> Result<Option<Vec<(i64, C64)>>, ConfigError> {
        let Some((line, items)) = self.list(k) else { return Ok(None) };
        let bad = |s: &str| ConfigError::Parse { line, msg: format!("bad coefficient '{s}' in '{k}', expected n:re[:im]") };
        items
            .iter()
            .map(|it| {
                let parts: Vec<&str> = it.split(':').map(str::trim).collect();
                if parts.len() < 2 || parts.len() > 3 {
                    return Err(bad(it));
                }
                let n: i64 = parts[0].parse().map_err(|_| bad(it))?;
                let re: f64 = parts[1].parse().map_err(|_| bad(it))?;
                let im: f64 = if parts.len() == 3 { parts[2].parse().map_err(|_| bad(it))? } else { 0.0 };
                Ok((n, C64::new(re, im)))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let r = Reader { pairs: parse_pairs(text)? };
        let mu: f64 = match r.raw("mu") {
            Some(_) => r.get("mu", 0.0)?,
            None => return Err(invalid("mu", "required")),
        };
        let n: u32 = match r.raw("N") {
            Some(_) => r.get("N", 0)?,
            None => return Err(invalid("N", "required")),
        };
        if !(mu.is_finite() && mu > 2.0 / 3.0) {
            return Err(invalid("mu", format!("must exceed 2/3, got {mu}")));
        }
        if n < 2 {
            return Err(invalid("N", format!("must be at least 2, got {n}")));
        }
        let mut params = SolverParams::new(mu, n).map_err(|e| invalid("mu", e.to_string()))?;
        let p = r.get("p", 1.0)?;
        if !(p >= 1.0 && p < 2.0 * mu) {
            return Err(invalid("p", format!("must lie in [1, 2mu), got {p}")));
        }
        params.p = p;
        params.harmonics = r.get("harmonics", params.harmonics)?;
        if params.harmonics == 0 {
            return Err(invalid("harmonics", "must be positive"));
        }
        params.grid_points = r.get("grid.points", params.grid_points)?;
        if params.grid_points < 16 {
            return Err(invalid("grid.points", format!("must be at least 16, got {}", params.grid_points)));
        }
        params.grid_scale = match r.raw("grid.scale").map(|x| x.1.as_str()) {
            None | Some("auto") => default_grid_scale(n, params.grid_points),
            Some(_) => r.get("grid.scale", 0.0)?,
        };
        if !(params.grid_scale.is_finite() && params.grid_scale > 0.0) {
            return Err(invalid("grid.scale", "must be positive"));
        }
        params.validate().map_err(|e| invalid("params", e.to_string()))?;

        let kind: String = r.get("omega.kind", "constant_plus_cos".to_string())?;
        let nn = n as i64;
        let omega = match kind.as_str() {
            "constant_plus_cos" => {
                let amplitude: f64 = r.get("omega.amplitude", 0.0)?;
                let harmonic: i64 = r.get("omega.harmonic", nn)?;
                if !amplitude.is_finite() {
                    return Err(invalid("omega.amplitude", "must be finite"));
                }
                if harmonic % nn != 0 {
                    return Err(invalid("omega.harmonic", format!("{harmonic} is not a multiple of N = {n}")));
                }
                OmegaSpec::ConstantPlusCos { amplitude, harmonic }
            }
            "coefficients" => {
                let c = r.coeffs("omega.coeffs")?.ok_or_else(|| invalid("omega.coeffs", "required for omega.kind = coefficients"))?;
                check_modes("omega.coeffs", &c, nn)?;
                OmegaSpec::Coefficients(c)
            }
            "match" => {
                let c = match r.coeffs("g.coeffs")? {
                    Some(c) => c,
                    None => {
                        let amp: f64 = r.get("g.amplitude", 0.0)?;
                        let h: i64 = r.get("g.harmonic", nn)?;
                        if h % nn != 0 || h == 0 {
                            return Err(invalid("g.harmonic", format!("{h} is not a nonzero multiple of N = {n}")));
                        }
                        let w0 = w0_ring(mu);
                        vec![(0, C64::new(w0, 0.0)), (h, C64::new(0.5 * amp * w0, 0.0)), (-h, C64::new(0.5 * amp * w0, 0.0))]
                    }
                };
                check_modes("g.coeffs", &c, nn)?;
                OmegaSpec::Match(c)
            }
            o => return Err(invalid("omega.kind", format!("unknown kind '{o}' (constant_plus_cos, coefficients, match)"))),
        };
        let top = nn * params.harmonics as i64;
        let modes: Vec<i64> = match &omega {
            OmegaSpec::ConstantPlusCos { harmonic, amplitude } => {
                if *amplitude != 0.0 {
                    vec![*harmonic]
                } else {
                    vec![]
                }
            }
            OmegaSpec::Coefficients(c) | OmegaSpec::Match(c) => c.iter().map(|x| x.0).collect(),
        };
        if let Some(m) = modes.iter().find(|m| m.abs() > top) {
            return Err(invalid("harmonics", format!("omega mode {m} exceeds N * harmonics = {top}")));
        }

        let mut solver = SolveOptions::default();
        solver.tol = r.get("solver.tol", solver.tol)?;
        if !(solver.tol > 0.0) {
            return Err(invalid("solver.tol", "must be positive"));
        }
        solver.max_iter = r.get("solver.max_iter", solver.max_iter)?;
        if solver.max_iter == 0 {
            return Err(invalid("solver.max_iter", "must be positive"));
        }
        solver.outer_tol = r.get("solver.outer_tol", solver.outer_tol)?;
        if let Some((_, b)) = r.raw("solver.backend") {
            solver.backend = b.parse::<Backend>().map_err(|e| invalid("solver.backend", e.to_string()))?;
        }
        let method = match r.get("solver.method", "newton".to_string())?.as_str() {
            "newton" => Method::Newton,
            "continuation" => Method::Continuation,
            o => return Err(invalid("solver.method", format!("unknown method '{o}' (newton, continuation)"))),
        };

        let seed: u64 = r.get("verify.seed", 42)?;
        let suites = match r.list("verify.suites") {
            None => Suite::ALL.to_vec(),
            Some((_, items)) => items
                .iter()
                .map(|s| s.parse::<Suite>().map_err(|e| invalid("verify.suites", e.to_string())))
                .collect::<Result<Vec<_>, _>>()?,
        };
        let mut verify = VerifyOptions { seed, ..Default::default() };
        verify.samples = r.get("verify.samples", verify.samples)?;
        verify.weak_tests = r.get("verify.weak_tests", verify.weak_tests)?;
        verify.weak_tol = r.get("verify.weak_tol", verify.weak_tol)?;
        if verify.samples == 0 {
            return Err(invalid("verify.samples", "must be positive"));
        }

        let time: f64 = r.get("reconstruct.t", 1.0)?;
        if !(time > 0.0 && time.is_finite()) {
            return Err(invalid("reconstruct.t", format!("must be positive, got {time}")));
        }
        let extent: f64 = r.get("reconstruct.extent", 1.0)?;
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(invalid("reconstruct.extent", "must be positive"));
        }
        let resolution: usize = r.get("reconstruct.resolution", 32)?;
        if resolution < 2 {
            return Err(invalid("reconstruct.resolution", "must be at least 2"));
        }
        let spiral_r_min: f64 = r.get("spiral.r_min", 0.1)?;
        let spiral_r_max: f64 = r.get("spiral.r_max", 1.0)?;
        if !(spiral_r_min > 0.0 && spiral_r_max > spiral_r_min) {
            return Err(invalid("spiral.r_min", "need 0 < spiral.r_min < spiral.r_max"));
        }
        let spiral_points: usize = r.get("spiral.points", 512)?;
        if spiral_points < 2 {
            return Err(invalid("spiral.points", "must be at least 2"));
        }

        let out_dir = PathBuf::from(r.get("output.dir", "out".to_string())?);
        let formats = match r.list("output.formats") {
            None => vec![Format::Json, Format::Csv, Format::Svg],
            Some((_, items)) => {
                let mut f = items
                    .iter()
                    .map(|s| Format::parse(s).ok_or_else(|| invalid("output.formats", format!("unknown format '{s}'"))))
                    .collect::<Result<Vec<_>, _>>()?;
                f.sort();
                f.dedup();
                f
            }
        };

        Ok(RunConfig {
            params,
            omega,
            solver,
            method,
            seed,
            suites,
            verify,
            time,
            extent,
            resolution,
            spiral_r_min,
            spiral_r_max,
            spiral_points,
            out_dir,
            formats,
        })
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.verify.seed = seed;
    }

    pub fn omega_signal(&self) -> spiral_core::Result<AngularSignal> {
        let n = self.params.n_period;
        match &self.omega {
            OmegaSpec::ConstantPlusCos { amplitude, harmonic } => {
                AngularSignal::constant_plus_cos(self.params.omega0(), *amplitude, *harmonic, n)
            }
            OmegaSpec::Coefficients(c) | OmegaSpec::Match(c) => AngularSignal::from_coeffs(n, c.iter().copied()),
        }
    }

    /// Effective configuration with every default filled in, one key per line.
    /// Output settings are excluded so the hash only tracks what affects results.
    pub fn canonical(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("mu", fmt_f(p.mu));
        kv("N", p.n_period.to_string());
        kv("p", fmt_f(p.p));
        kv("harmonics", p.harmonics.to_string());
        kv("grid.points", p.grid_points.to_string());
        kv("grid.scale", fmt_f(p.grid_scale));
        match &self.omega {
            OmegaSpec::ConstantPlusCos { amplitude, harmonic } => {
                kv("omega.kind", "constant_plus_cos".into());
                kv("omega.amplitude", fmt_f(*amplitude));
                kv("omega.harmonic", harmonic.to_string());
            }
            OmegaSpec::Coefficients(c) => {
                kv("omega.kind", "coefficients".into());
                kv("omega.coeffs", fmt_coeffs(c));
            }
            OmegaSpec::Match(c) => {
                kv("omega.kind", "match".into());
                kv("g.coeffs", fmt_coeffs(c));
            }
        }
        kv("solver.tol", fmt_f(self.solver.tol));
        kv("solver.max_iter", self.solver.max_iter.to_string());
        kv(
            "solver.backend",
            match self.solver.backend {
                Backend::Chord => "chord".into(),
                Backend::Neumann => "neumann".into(),
                Backend::FdJacobian => "fd_jacobian".into(),
            },
        );
        kv(
            "solver.method",
            match self.method {
                Method::Newton => "newton".into(),
                Method::Continuation => "continuation".into(),
            },
        );
        kv("solver.outer_tol", fmt_f(self.solver.outer_tol));
        kv("verify.seed", self.seed.to_string());
        kv("verify.suites", self.suites.iter().map(|x| x.name()).collect::<Vec<_>>().join(","));
        kv("verify.samples", self.verify.samples.to_string());
        kv("verify.weak_tests", self.verify.weak_tests.to_string());
        kv("verify.weak_tol", fmt_f(self.verify.weak_tol));
        kv("reconstruct.t", fmt_f(self.time));
        kv("reconstruct.extent", fmt_f(self.extent));
        kv("reconstruct.resolution", self.resolution.to_string());
        kv("spiral.r_min", fmt_f(self.spiral_r_min));
        kv("spiral.r_max", fmt_f(self.spiral_r_max));
        kv("spiral.points", self.spiral_points.to_string());
        s
    }

    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.canonical().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Echo written next to the artifacts.
    pub fn echo(&self) -> String {
        let mut s = format!("# config_hash = {}\n", self.hash());
        s.push_str(&self.canonical());
        s.push_str(&format!("output.dir = {}\n", self.out_dir.display()));
        s.push_str(&format!(
            "output.formats = {}\n",
            self.formats.iter().map(|f| f.name()).collect::<Vec<_>>().join(",")
        ));
        s
    }
}

fn check_modes(field: &str, c: &[(i64, C64)], nn: i64) -> Result<(), ConfigError> {
    if let Some((m, _)) = c.iter().find(|(m, _)| m % nn != 0) {
        return Err(invalid(field, format!("mode {m} is not a multiple of N = {nn}")));
    }
    if !c.iter().all(|(_, v)| v.re.is_finite() && v.im.is_finite()) {
        return Err(invalid(field, "coefficients must be finite"));
    }
    Ok(())
}

fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_coeffs(c: &[(i64, C64)]) -> String {
    c.iter().map(|(n, v)| format!("{n}:{:?}:{:?}", v.re, v.im)).collect::<Vec<_>>().join(",")
}
