//! Line-oriented `key = value` run configuration with `[section]` headers.
//!
//! ```text
//! [domain]
//! geometry = inclusion
//! n = 8
//! [time]
//! T = 1.0
//! m = 16
//! [experiment]
//! kind = wentzell
//! ```
//!
//! Parsing collects every error (with its line) instead of stopping at the first.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::convex::{JSpec, ViOptions};
use crate::error::{Error, Result};
use crate::fem::{InitialData, InitialProfile, ProblemData, SourceProfile, SpaceTimeField};
use crate::mesh::{build_inclusion_mesh, build_strip_mesh, BidomainMesh};
use crate::rothe::min_signorini_steps;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError {
                line: Some(l),
                message,
            } => write!(f, "line {l}: {message}"),
            ConfigError { line: None, message } => f.write_str(message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryKind {
    Strip,
    Inclusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Wentzell,
    Signorini,
    MSweep,
    ThinLayer,
    Estimates,
    Poincare,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Wentzell => "wentzell",
            ExperimentKind::Signorini => "signorini",
            ExperimentKind::MSweep => "msweep",
            ExperimentKind::ThinLayer => "thinlayer",
            ExperimentKind::Estimates => "estimates",
            ExperimentKind::Poincare => "poincare",
        }
    }
}

/// Which time-dependent problem a sweep or audit runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemChoice {
    Wentzell,
    Signorini,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub geometry: GeometryKind,
    pub n: usize,
    pub nx1: usize,
    pub nx2: usize,
    pub ny: usize,
    /// Per-side thickness profile of the thin layer (left, right, bottom, top).
    pub gamma: [f64; 4],
    pub sigma1: f64,
    pub sigma2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub j: JSpec,
    pub t_end: f64,
    pub m: usize,
    pub f: SourceProfile,
    pub g: SourceProfile,
    pub initial: InitialProfile,
    pub tol: f64,
    pub max_sweeps: Option<usize>,
    pub experiment: ExperimentKind,
    pub problem: ProblemChoice,
    pub m_list: Vec<usize>,
    pub eps_list: Vec<f64>,
    /// Reference step count for `msweep`.
    pub m_ref: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Defaults for every optional key.
    pub fn with_required(experiment: ExperimentKind, t_end: f64, m: usize) -> Self {
        RunConfig {
            geometry: GeometryKind::Inclusion,
            n: 8,
            nx1: 2,
            nx2: 2,
            ny: 2,
            gamma: [1.0; 4],
            sigma1: 1.0,
            sigma2: 1.0,
            alpha: 1.0,
            beta: 0.0,
            j: JSpec::Zero,
            t_end,
            m,
            f: SourceProfile::Zero,
            g: SourceProfile::Zero,
            initial: InitialProfile::Zero,
            tol: ViOptions::default().tol,
            max_sweeps: None,
            experiment,
            problem: ProblemChoice::Wentzell,
            m_list: vec![8, 16, 32],
            eps_list: vec![0.25, 0.125, 0.0625],
            m_ref: 256,
            out_dir: PathBuf::from("out"),
        }
    }

    /// The problem run by this experiment, if it runs one.
    pub fn problem_kind(&self) -> Option<ProblemChoice> {
        match self.experiment {
            ExperimentKind::Wentzell | ExperimentKind::ThinLayer => Some(ProblemChoice::Wentzell),
            ExperimentKind::Signorini => Some(ProblemChoice::Signorini),
            ExperimentKind::MSweep | ExperimentKind::Estimates => Some(self.problem),
            ExperimentKind::Poincare => None,
        }
    }

    pub fn vi_options(&self) -> ViOptions {
        ViOptions {
            tol: self.tol,
            max_sweeps: self.max_sweeps,
        }
    }

    pub fn build_mesh(&self) -> Result<BidomainMesh> {
        match self.geometry {
            GeometryKind::Strip => build_strip_mesh(self.nx1, self.nx2, self.ny),
            GeometryKind::Inclusion => build_inclusion_mesh(self.n),
        }
    }

    /// Problem data on `mesh` with `steps` time steps.
    pub fn problem_data(&self, mesh: &BidomainMesh, steps: usize) -> Result<ProblemData> {
        Ok(ProblemData {
            sigma1: self.sigma1,
            sigma2: self.sigma2,
            alpha: self.alpha,
            beta: self.beta,
            j: self.j,
            f: self.f.sample(mesh.nodes(), self.t_end)?,
            g: match self.g {
                SourceProfile::Zero => SpaceTimeField::zero(mesh.n_nodes(), self.t_end),
                g => g.sample(mesh.nodes(), self.t_end)?,
            },
            initial: InitialData::Profile(self.initial),
            t_end: self.t_end,
            steps,
        })
    }

    /// Every step count the experiment will run.
    fn step_counts(&self) -> Vec<usize> {
        match self.experiment {
            ExperimentKind::MSweep => {
                let mut all = self.m_list.clone();
                all.push(self.m_ref);
                all
            }
            ExperimentKind::Estimates => {
                let mut all = vec![self.m];
                all.extend(&self.m_list);
                all
            }
            _ => vec![self.m],
        }
    }

    /// Canonical text form; `parse_config(&c.print()) == Ok(c)`.
    pub fn print(&self) -> String {
        let mut s = String::new();
        let geometry = match self.geometry {
            GeometryKind::Strip => "strip",
            GeometryKind::Inclusion => "inclusion",
        };
        let _ = writeln!(s, "[domain]\ngeometry = {geometry}");
        let _ = writeln!(s, "n = {}\nnx1 = {}\nnx2 = {}\nny = {}", self.n, self.nx1, self.nx2, self.ny);
        let _ = writeln!(s, "gamma = {}", join(&self.gamma));
        let _ = writeln!(
            s,
            "\n[coefficients]\nsigma1 = {:?}\nsigma2 = {:?}\nalpha = {:?}\nbeta = {:?}",
            self.sigma1, self.sigma2, self.alpha, self.beta
        );
        let _ = writeln!(s, "\n[j]\nkind = {}", self.j.name());
        match self.j {
            JSpec::Zero => {}
            JSpec::AbsVal { lambda } | JSpec::PositivePart { lambda } => {
                let _ = writeln!(s, "lambda = {lambda:?}");
            }
            JSpec::Quadratic { c } => {
                let _ = writeln!(s, "c = {c:?}");
            }
            JSpec::IntervalIndicator { a, b } => {
                let _ = writeln!(s, "a = {a:?}\nb = {b:?}");
            }
        }
        let _ = writeln!(s, "\n[time]\nT = {:?}\nm = {}", self.t_end, self.m);
        let (fk, fa) = source_parts(self.f);
        let (gk, ga) = source_parts(self.g);
        let _ = writeln!(
            s,
            "\n[source]\nf_kind = {fk}\nf_amplitude = {fa:?}\ng_kind = {gk}\ng_amplitude = {ga:?}"
        );
        let (sk, sa) = match self.initial {
            InitialProfile::Zero => ("zero", 0.0),
            InitialProfile::Constant(a) => ("constant", a),
            InitialProfile::Sin(a) => ("sin_profile", a),
        };
        let _ = writeln!(s, "\n[initial]\nS_kind = {sk}\nS_amplitude = {sa:?}");
        let _ = writeln!(s, "\n[solver]\ntol = {:?}", self.tol);
        if let Some(cap) = self.max_sweeps {
            let _ = writeln!(s, "max_sweeps = {cap}");
        }
        let problem = match self.problem {
            ProblemChoice::Wentzell => "wentzell",
            ProblemChoice::Signorini => "signorini",
        };
        let _ = writeln!(
            s,
            "\n[experiment]\nkind = {}\nproblem = {problem}\nm_list = {}\neps_list = {}\nm_ref = {}",
            self.experiment.name(),
            join(&self.m_list),
            join(&self.eps_list),
            self.m_ref
        );
        let _ = writeln!(s, "\n[output]\ndir = {}", self.out_dir.display());
        s
    }
}

fn join<T: fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

fn source_parts(p: SourceProfile) -> (&'static str, f64) {
    match p {
        SourceProfile::Zero => ("zero", 0.0),
        SourceProfile::Constant(a) => ("constant", a),
        SourceProfile::LinearT(a) => ("linear_t", a),
        SourceProfile::SinXY(a) => ("sinxy", a),
    }
}

const KEYS: &[(&str, &[&str])] = &[
    ("domain", &["geometry", "n", "nx1", "nx2", "ny", "gamma"]),
    ("coefficients", &["sigma1", "sigma2", "alpha", "beta"]),
    ("j", &["kind", "lambda", "c", "a", "b"]),
    ("time", &["T", "m"]),
    ("source", &["f_kind", "f_amplitude", "g_kind", "g_amplitude"]),
    ("initial", &["S_kind", "S_amplitude"]),
    ("solver", &["tol", "max_sweeps"]),
    ("experiment", &["kind", "problem", "m_list", "eps_list", "m_ref"]),
    ("output", &["dir"]),
];

/// Raw entries keyed by `section.key`, with the line they came from.
type Entries = BTreeMap<String, (usize, String)>;

fn lex(text: &str, errors: &mut Vec<ConfigError>) -> Entries {
    let mut entries = Entries::new();
    let mut section: Option<&str> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                errors.push(ConfigError::at(line_no, format!("malformed section header `{line}`")));
                continue;
            };
            let name = name.trim();
            match KEYS.iter().find(|(s, _)| *s == name) {
                Some((s, _)) => section = Some(s),
                None => {
                    errors.push(ConfigError::at(line_no, format!("unknown section [{name}]")));
                    section = None;
                }
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(ConfigError::at(line_no, format!("expected `key = value`, found `{line}`")));
            continue;
        };
        let key = key.trim();
        let value = value.trim().trim_matches('"').to_string();
        let Some(sec) = section else {
            errors.push(ConfigError::at(line_no, format!("key `{key}` outside a known section")));
            continue;
        };
        let known = KEYS.iter().any(|(s, ks)| *s == sec && ks.contains(&key));
        if !known {
            errors.push(ConfigError::at(line_no, format!("unknown key `{key}` in [{sec}]")));
            continue;
        }
        let full = format!("{sec}.{key}");
        if let Some((first, _)) = entries.get(&full) {
            errors.push(ConfigError::at(line_no, format!("duplicate key `{full}` (first set on line {first})")));
            continue;
        }
        entries.insert(full, (line_no, value));
    }
    entries
}

/// Typed access to lexed entries that records failures instead of returning early.
struct Reader<'a> {
    entries: &'a Entries,
    errors: &'a mut Vec<ConfigError>,
}

impl Reader<'_> {
    fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|(l, _)| *l)
    }

    fn get<T>(&mut self, key: &str, what: &str, parse: impl Fn(&str) -> Option<T>) -> Option<T> {
        let (line, value) = self.entries.get(key)?;
        match parse(value) {
            Some(v) => Some(v),
            None => {
                self.errors
                    .push(ConfigError::at(*line, format!("`{key}`: expected {what}, found `{value}`")));
                None
            }
        }
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        self.get(key, "a finite number", |v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
    }

    fn int(&mut self, key: &str) -> Option<usize> {
        self.get(key, "a nonnegative integer", |v| v.parse::<usize>().ok())
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Option<Vec<T>> {
        self.get(key, what, |v| {
            v.split(',')
                .map(|x| x.trim().parse::<T>().ok())
                .collect::<Option<Vec<T>>>()
                .filter(|xs| !xs.is_empty())
        })
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)]) -> Option<T> {
        let names = options.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ");
        self.get(key, &format!("one of {names}"), |v| {
            options.iter().find(|(n, _)| *n == v).map(|(_, t)| *t)
        })
    }

    fn require<T>(&mut self, key: &str, value: Option<T>) -> Option<T> {
        if value.is_none() && self.line(key).is_none() {
            self.errors
                .push(ConfigError { line: None, message: format!("missing required key `{key}`") });
        }
        value
    }

    fn check(&mut self, key: &str, ok: bool, message: impl Into<String>) {
        if !ok {
            self.errors.push(ConfigError {
                line: self.line(key),
                message: format!("`{key}`: {}", message.into()),
            });
        }
    }
}

/// Parses and validates a configuration, returning every problem found.
pub fn parse_config(text: &str) -> std::result::Result<RunConfig, Vec<ConfigError>> {
    let mut errors = Vec::new();
    let entries = lex(text, &mut errors);
    let mut r = Reader {
        entries: &entries,
        errors: &mut errors,
    };

    let experiment = r.choice(
        "experiment.kind",
        &[
            ("wentzell", ExperimentKind::Wentzell),
            ("signorini", ExperimentKind::Signorini),
            ("msweep", ExperimentKind::MSweep),
            ("thinlayer", ExperimentKind::ThinLayer),
            ("estimates", ExperimentKind::Estimates),
            ("poincare", ExperimentKind::Poincare),
        ],
    );
    let experiment = r.require("experiment.kind", experiment);
    let t_end = r.float("time.T");
    let t_end = r.require("time.T", t_end);
    let m = r.int("time.m");
    let m = r.require("time.m", m);
    let mut c = RunConfig::with_required(
        experiment.unwrap_or(ExperimentKind::Wentzell),
        t_end.unwrap_or(1.0),
        m.unwrap_or(1),
    );

    if let Some(g) = r.choice(
        "domain.geometry",
        &[("strip", GeometryKind::Strip), ("inclusion", GeometryKind::Inclusion)],
    ) {
        c.geometry = g;
    }
    for (key, slot) in [
        ("domain.n", &mut c.n),
        ("domain.nx1", &mut c.nx1),
        ("domain.nx2", &mut c.nx2),
        ("domain.ny", &mut c.ny),
    ] {
        if let Some(v) = r.int(key) {
            *slot = v;
        }
    }
    if let Some(g) = r.list::<f64>("domain.gamma", "one or four comma-separated numbers") {
        match g.len() {
            1 => c.gamma = [g[0]; 4],
            4 => c.gamma = [g[0], g[1], g[2], g[3]],
            _ => r.check("domain.gamma", false, "expected one or four values"),
        }
    }
    for (key, slot) in [
        ("coefficients.sigma1", &mut c.sigma1),
        ("coefficients.sigma2", &mut c.sigma2),
        ("coefficients.alpha", &mut c.alpha),
        ("coefficients.beta", &mut c.beta),
    ] {
        if let Some(v) = r.float(key) {
            *slot = v;
        }
    }

    let j_kind = r.choice(
        "j.kind",
        &[
            ("zero", 0),
            ("absval", 1),
            ("positive_part", 2),
            ("quadratic", 3),
            ("interval_indicator", 4),
        ],
    );
    let lambda = r.float("j.lambda").unwrap_or(1.0);
    let jc = r.float("j.c").unwrap_or(1.0);
    let ja = r.float("j.a").unwrap_or(-1.0);
    let jb = r.float("j.b").unwrap_or(1.0);
    c.j = match j_kind.unwrap_or(0) {
        1 => JSpec::AbsVal { lambda },
        2 => JSpec::PositivePart { lambda },
        3 => JSpec::Quadratic { c: jc },
        4 => JSpec::IntervalIndicator { a: ja, b: jb },
        _ => JSpec::Zero,
    };
    let unused: &[&str] = match c.j {
        JSpec::Zero => &["lambda", "c", "a", "b"],
        JSpec::AbsVal { .. } | JSpec::PositivePart { .. } => &["c", "a", "b"],
        JSpec::Quadratic { .. } => &["lambda", "a", "b"],
        JSpec::IntervalIndicator { .. } => &["lambda", "c"],
    };
    for key in unused {
        let full = format!("j.{key}");
        let present = r.line(&full).is_none();
        r.check(&full, present, format!("not a parameter of j kind `{}`", c.j.name()));
    }
    if let Err(e) = c.j.validate() {
        let key = match c.j {
            JSpec::AbsVal { .. } | JSpec::PositivePart { .. } => "j.lambda",
            JSpec::Quadratic { .. } => "j.c",
            _ => "j.b",
        };
        r.check(key, false, e.to_string());
    }

    let profiles = [
        ("zero", 0),
        ("constant", 1),
        ("linear_t", 2),
        ("sinxy", 3),
    ];
    let fk = r.choice("source.f_kind", &profiles).unwrap_or(0);
    let fa = r.float("source.f_amplitude").unwrap_or(1.0);
    let gk = r.choice("source.g_kind", &profiles).unwrap_or(0);
    let ga = r.float("source.g_amplitude").unwrap_or(1.0);
    let source = |k: i32, a: f64| match k {
        1 => SourceProfile::Constant(a),
        2 => SourceProfile::LinearT(a),
        3 => SourceProfile::SinXY(a),
        _ => SourceProfile::Zero,
    };
    c.f = source(fk, fa);
    c.g = source(gk, ga);
    let sk = r
        .choice("initial.S_kind", &[("zero", 0), ("constant", 1), ("sin_profile", 2)])
        .unwrap_or(0);
    let sa = r.float("initial.S_amplitude").unwrap_or(1.0);
    c.initial = match sk {
        1 => InitialProfile::Constant(sa),
        2 => InitialProfile::Sin(sa),
        _ => InitialProfile::Zero,
    };

    if let Some(tol) = r.float("solver.tol") {
        c.tol = tol;
    }
    c.max_sweeps = r.int("solver.max_sweeps");
    if let Some(p) = r.choice(
        "experiment.problem",
        &[("wentzell", ProblemChoice::Wentzell), ("signorini", ProblemChoice::Signorini)],
    ) {
        c.problem = p;
    }
    if let Some(ms) = r.list::<usize>("experiment.m_list", "comma-separated positive integers") {
        c.m_list = ms;
    }
    if let Some(es) = r.list::<f64>("experiment.eps_list", "comma-separated numbers") {
        c.eps_list = es;
    }
    if let Some(v) = r.int("experiment.m_ref") {
        c.m_ref = v;
    }
    if let Some((_, dir)) = entries.get("output.dir") {
        c.out_dir = PathBuf::from(dir);
    }

    validate(&c, &mut r);
    if errors.is_empty() {
        Ok(c)
    } else {
        errors.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
        Err(errors)
    }
}

fn validate(c: &RunConfig, r: &mut Reader<'_>) {
    for (key, v) in [
        ("coefficients.sigma1", c.sigma1),
        ("coefficients.sigma2", c.sigma2),
        ("coefficients.alpha", c.alpha),
    ] {
        r.check(key, v > 0.0, format!("must be positive (coefficients are bounded below by a positive constant), got {v:?}"));
    }
    r.check("coefficients.beta", c.beta >= 0.0, format!("must be nonnegative, got {:?}", c.beta));
    r.check("time.T", c.t_end > 0.0, format!("must be positive, got {:?}", c.t_end));
    r.check("time.m", c.m >= 1, "must be at least 1");
    r.check("solver.tol", c.tol > 0.0, format!("must be positive, got {:?}", c.tol));
    r.check("solver.max_sweeps", c.max_sweeps != Some(0), "must be at least 1");
    match c.geometry {
        GeometryKind::Inclusion => r.check("domain.n", c.n >= 4 && c.n.is_multiple_of(4), "inclusion mesh needs n ≥ 4, divisible by 4"),
        GeometryKind::Strip => {
            for key in ["domain.nx1", "domain.nx2", "domain.ny"] {
                let v = match key {
                    "domain.nx1" => c.nx1,
                    "domain.nx2" => c.nx2,
                    _ => c.ny,
                };
                r.check(key, v >= 1, "must be at least 1");
            }
        }
    }
    r.check("domain.gamma", c.gamma.iter().all(|&g| g > 0.0), "thickness profile must be positive");
    r.check("experiment.m_list", c.m_list.iter().all(|&m| m >= 1), "step counts must be positive");

    match c.experiment {
        ExperimentKind::MSweep => {
            r.check(
                "experiment.m_list",
                c.m_list.windows(2).all(|w| w[0] < w[1]),
                "must be strictly increasing",
            );
            r.check(
                "experiment.m_ref",
                c.m_ref >= 1 && c.m_list.iter().all(|&m| m >= 1 && m < c.m_ref && c.m_ref.is_multiple_of(m)),
                format!("must be a common multiple larger than every m_list entry, got {}", c.m_ref),
            );
        }
        ExperimentKind::ThinLayer => {
            r.check("domain.geometry", c.geometry == GeometryKind::Inclusion, "the thin layer study needs the inclusion geometry");
            r.check("coefficients.beta", c.beta == 0.0, "the thin layer limit requires beta = 0");
            r.check(
                "j.kind",
                crate::thinlayer::is_eligible(&c.j),
                format!("`{}` lacks the quadratic growth bound the layer limit needs", c.j.name()),
            );
            r.check(
                "experiment.eps_list",
                c.eps_list.iter().all(|&e| e > 0.0) && c.eps_list.windows(2).all(|w| w[1] < w[0]),
                "must be positive and strictly decreasing",
            );
        }
        _ => {}
    }

    if c.problem_kind() == Some(ProblemChoice::Signorini) {
        let sigma_min = c.sigma1.min(c.sigma2);
        if sigma_min > 0.0 && c.alpha > 0.0 && c.t_end > 0.0 {
            let min = min_signorini_steps(sigma_min, c.alpha, c.t_end);
            for m in c.step_counts() {
                if m < min {
                    let key = if m == c.m { "time.m" } else { "experiment.m_list" };
                    r.check(
                        key,
                        false,
                        format!("m = {m} is below the minimal admissible m = {min} (m ≥ σ_#T/α_# for the bilateral problem)"),
                    );
                }
            }
        }
    }
}

/// Reads and parses a configuration file.
pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(Error::Config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[time]\nT = 1.0\nm = 4\n[experiment]\nkind = wentzell\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c, RunConfig::with_required(ExperimentKind::Wentzell, 1.0, 4));
    }

    #[test]
    fn quoted_values_and_comments() {
        let c = parse_config("# run\n[time]\nT = 2 # end\nm = 3\n[experiment]\nkind = \"msweep\"\nm_list = 2, 4\nm_ref = 8\n").unwrap();
        assert_eq!(c.experiment, ExperimentKind::MSweep);
        assert_eq!(c.m_list, vec![2, 4]);
        assert_eq!(c.t_end, 2.0);
    }

    #[test]
    fn all_errors_reported_with_lines() {
        let text = "[coefficients]\nsigma1 = -1\nbogus = 3\n[time]\nT = abc\n[experiment]\nkind = wentzell\n";
        let errs = parse_config(text).unwrap_err();
        let lines: Vec<Option<usize>> = errs.iter().map(|e| e.line).collect();
        assert!(lines.contains(&Some(2)), "{errs:?}");
        assert!(lines.contains(&Some(3)));
        assert!(lines.contains(&Some(5)));
        assert!(errs.iter().any(|e| e.message.contains("time.m")));
        assert!(errs.iter().any(|e| e.message.contains("sigma1") && e.message.contains("positive")));
    }

    #[test]
    fn signorini_step_floor_reported() {
        let text = "[coefficients]\nalpha = 0.1\n[time]\nT = 1\nm = 5\n[experiment]\nkind = signorini\n";
        let errs = parse_config(text).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].line, Some(5));
        assert!(errs[0].message.contains("m = 10"), "{}", errs[0]);
        let ok = text.replace("m = 5", "m = 10");
        assert!(parse_config(&ok).is_ok());
    }

    #[test]
    fn unknown_section_and_parameter_mismatch() {
        let text = "[extra]\nx = 1\n[j]\nkind = quadratic\nlambda = 2\n[time]\nT = 1\nm = 1\n[experiment]\nkind = poincare\n";
        let errs = parse_config(text).unwrap_err();
        assert_eq!(errs.len(), 3, "{errs:?}");
    }

    #[test]
    fn print_round_trips() {
        let mut c = RunConfig::with_required(ExperimentKind::Estimates, 0.5, 12);
        c.j = JSpec::IntervalIndicator { a: -0.25, b: 1e-3 };
        c.f = SourceProfile::SinXY(3.5);
        c.initial = InitialProfile::Sin(0.1);
        c.gamma = [1.0, 0.5, 0.25, 2.0];
        c.max_sweeps = Some(77);
        c.problem = ProblemChoice::Signorini;
        c.m_list = vec![12, 24];
        assert_eq!(parse_config(&c.print()).unwrap(), c);
    }
}
