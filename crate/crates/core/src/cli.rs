//! Command pipelines behind the `lincoag` binary: typed parameters, run
//! execution, table output and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{bvp_solve, c_star, BvProblem, GreensContext, ScalarFn};
use crate::lambda_series;
use crate::mellin::MellinStructure;
use crate::parallel::Exec;
use crate::resolvent::{adjoint_evolve, geometric_nodes, resolvent_solve, AdjointOptions, GeneratorSpec, GridFunction};
use crate::simulator::{ensemble, scaling_exponent, ScattererLaw, SimOptions};
use crate::specfun::SigmaParams;
use crate::validation::{self, Suite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Profile,
    Mellin,
    Kernel,
    Resolvent,
    Adjoint,
    Simulate,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Profile => "profile",
            Command::Mellin => "mellin",
            Command::Kernel => "kernel",
            Command::Resolvent => "resolvent",
            Command::Adjoint => "adjoint",
            Command::Simulate => "simulate",
            Command::Validate => "validate",
        }
    }

    /// Accepted keys with their type and default.
    fn schema(self) -> &'static [(&'static str, Kind, &'static str)] {
        use Kind::*;
        match self {
            Command::Profile => &[("sigma", Real, "1.8"), ("order", Int, "200"), ("points", Int, "99"), ("xi_min", Real, "0.01"), ("xi_max", Real, "0.99")],
            Command::Mellin => &[("sigma", Real, "1.8"), ("zeros", Int, "10")],
            Command::Kernel => &[
                ("sigma", Real, "1.8"),
                ("v_bar", Real, "1.0"),
                ("source", Text, "one"),
                ("boundary", Text, "zero"),
                ("points", Int, "40"),
            ],
            Command::Resolvent => &[
                ("sigma", Real, "1.8"),
                ("epsilon", Real, "1e-3"),
                ("lambda", Real, "1.0"),
                ("v_min", Real, "1e-4"),
                ("v_max", Real, "1e3"),
                ("nodes", Int, "240"),
                ("center", Real, "0.6"),
                ("width", Real, "0.2"),
            ],
            Command::Adjoint => &[
                ("sigma", Real, "1.8"),
                ("law", Text, "truncated"),
                ("scatterer_min", Real, "1.0"),
                ("cap", Real, "1e13"),
                ("per_decade", Int, "40"),
                ("steps_per_decade", Int, "200"),
                ("times", RealList, "1,10"),
            ],
            Command::Simulate => &[
                ("sigma", Real, "1.9"),
                ("law", Text, "shifted"),
                ("scatterer_min", Real, "1.0"),
                ("n", Int, "1000"),
                ("v0", Real, "0.0"),
                ("checkpoints", RealList, "1e2,1e3,1e4"),
                ("seed", Int, "1"),
                ("eps", Real, "1e-2"),
                ("event_cap", Int, "10000000"),
            ],
            Command::Validate => &[("suite", Text, "all")],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Real,
    Int,
    Text,
    RealList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Real(f64),
    Text(String),
    List(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub parameters: BTreeMap<String, Value>,
    pub output_dir: PathBuf,
    pub format: Format,
}

fn parse_value(key: &str, kind: Kind, raw: &str) -> Result<Value> {
    let raw = raw.trim();
    let bad = |what: &str| Error::InvalidValue { key: key.to_string(), msg: format!("expected {what}, got `{raw}`") };
    let real = |s: &str| s.trim().parse::<f64>().ok().filter(|x| x.is_finite());
    match kind {
        Kind::Real => real(raw).map(Value::Real).ok_or_else(|| bad("a real number")),
        Kind::Int => raw.parse::<i64>().map(Value::Int).or_else(|_| {
            // allow 1e5-style integers
            match real(raw) {
                Some(x) if x.fract() == 0.0 && x.abs() < 9e15 => Ok(Value::Int(x as i64)),
                _ => Err(bad("an integer")),
            }
        }),
        Kind::Text if !raw.is_empty() => Ok(Value::Text(raw.to_string())),
        Kind::Text => Err(bad("a non-empty string")),
        Kind::RealList => raw.split(',').map(|s| real(s).ok_or_else(|| bad("a comma-separated list of reals"))).collect::<Result<_>>().map(Value::List),
    }
}

fn lookup(command: Command, key: &str) -> Result<Kind> {
    command
        .schema()
        .iter()
        .find(|(k, _, _)| *k == key)
        .map(|&(_, kind, _)| kind)
        .ok_or_else(|| Error::UnknownKey(key.to_string()))
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_file(command: Command, text: &str) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(Error::Parse { line: line_no, msg: format!("expected `key = value`, got `{body}`") });
        };
        let key = key.trim().replace('-', "_");
        let kind = lookup(command, &key).map_err(|_| Error::Parse { line: line_no, msg: format!("unknown key `{key}`") })?;
        let v = parse_value(&key, kind, value).map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        out.insert(key, v);
    }
    Ok(out)
}

/// Parse `--key value` or `--key=value` pairs.
pub fn parse_flags(command: Command, args: &[String]) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(stripped) = arg.strip_prefix("--") else {
            return Err(Error::Domain(format!("expected a `--key value` pair, got `{arg}`")));
        };
        let (key, value) = match stripped.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| Error::InvalidValue { key: stripped.to_string(), msg: "missing value".into() })?;
                (stripped.to_string(), v.clone())
            }
        };
        let key = key.replace('-', "_");
        let kind = lookup(command, &key)?;
        out.insert(key.clone(), parse_value(&key, kind, &value)?);
    }
    Ok(out)
}

/// Defaults, then the file, then flags; the result is checked against the
/// command's preconditions.
pub fn parse_config(command: Command, file: Option<&str>, flags: &[String], output_dir: PathBuf, format: Format) -> Result<RunConfig> {
    let mut parameters = BTreeMap::new();
    for &(key, kind, default) in command.schema() {
        parameters.insert(key.to_string(), parse_value(key, kind, default)?);
    }
    if let Some(text) = file {
        parameters.extend(parse_file(command, text)?);
    }
    parameters.extend(parse_flags(command, flags)?);
    let config = RunConfig { command, parameters, output_dir, format };
    check(&config)?;
    Ok(config)
}

fn real(c: &RunConfig, key: &str) -> f64 {
    match c.parameters.get(key) {
        Some(Value::Real(x)) => *x,
        Some(Value::Int(i)) => *i as f64,
        _ => f64::NAN,
    }
}

fn int(c: &RunConfig, key: &str) -> i64 {
    match c.parameters.get(key) {
        Some(Value::Int(i)) => *i,
        _ => -1,
    }
}

fn text<'a>(c: &'a RunConfig, key: &str) -> &'a str {
    match c.parameters.get(key) {
        Some(Value::Text(s)) => s,
        _ => "",
    }
}

fn list(c: &RunConfig, key: &str) -> Vec<f64> {
    match c.parameters.get(key) {
        Some(Value::List(v)) => v.clone(),
        _ => Vec::new(),
    }
}

fn invalid(key: &str, msg: impl Into<String>) -> Error {
    Error::InvalidValue { key: key.to_string(), msg: msg.into() }
}

fn positive_int(c: &RunConfig, key: &str, min: i64) -> Result<usize> {
    let v = int(c, key);
    if v < min {
        return Err(invalid(key, format!("must be at least {min}, got {v}")));
    }
    Ok(v as usize)
}

fn law(c: &RunConfig) -> Result<ScattererLaw> {
    let sigma = real(c, "sigma");
    match text(c, "law") {
        "shifted" => ScattererLaw::shifted(sigma),
        "truncated" => ScattererLaw::truncated(sigma, real(c, "scatterer_min")),
        other => Err(invalid("law", format!("expected shifted or truncated, got `{other}`"))),
    }
}

/// Preconditions of each pipeline, including the regime gate on σ.
pub fn check(c: &RunConfig) -> Result<()> {
    if c.command == Command::Validate {
        Suite::parse(text(c, "suite"))?;
        return Ok(());
    }
    let sigma = real(c, "sigma");
    match c.command {
        Command::Profile | Command::Mellin | Command::Kernel | Command::Adjoint => {
            SigmaParams::core(sigma)?;
        }
        _ => {
            SigmaParams::new(sigma)?;
        }
    }
    match c.command {
        Command::Profile => {
            positive_int(c, "order", 10)?;
            positive_int(c, "points", 1)?;
            let (lo, hi) = (real(c, "xi_min"), real(c, "xi_max"));
            if !(lo > 0.0 && lo <= hi && hi < 1.0) {
                return Err(invalid("xi_min", "need 0 < xi_min ≤ xi_max < 1"));
            }
        }
        Command::Mellin => {
            positive_int(c, "zeros", 0)?;
        }
        Command::Kernel => {
            if !(real(c, "v_bar") > 0.0) {
                return Err(invalid("v_bar", "must be positive"));
            }
            if !matches!(text(c, "source"), "one" | "zero") {
                return Err(invalid("source", "expected one or zero"));
            }
            if !matches!(text(c, "boundary"), "zero" | "exp") {
                return Err(invalid("boundary", "expected zero or exp"));
            }
            positive_int(c, "points", 1)?;
        }
        Command::Resolvent => {
            GeneratorSpec::GInfinity { sigma, epsilon: real(c, "epsilon") }.validate()?;
            if !(real(c, "lambda") > 0.0) {
                return Err(invalid("lambda", "must be positive"));
            }
            let (lo, hi) = (real(c, "v_min"), real(c, "v_max"));
            if !(lo > 0.0 && hi > lo) {
                return Err(invalid("v_min", "need 0 < v_min < v_max"));
            }
            positive_int(c, "nodes", 2)?;
            if !(real(c, "width") > 0.0) {
                return Err(invalid("width", "must be positive"));
            }
        }
        Command::Adjoint => {
            law(c)?;
            if !(real(c, "cap") > 1.0) {
                return Err(invalid("cap", "must exceed 1"));
            }
            positive_int(c, "per_decade", 1)?;
            positive_int(c, "steps_per_decade", 1)?;
            let t = list(c, "times");
            if t.is_empty() || t.iter().any(|&x| x < 0.0) || t.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid("times", "must be non-negative and strictly increasing"));
            }
        }
        Command::Simulate => {
            law(c)?;
            positive_int(c, "n", 1)?;
            positive_int(c, "event_cap", 1)?;
            positive_int(c, "seed", 0)?;
            if !(real(c, "v0") >= 0.0) {
                return Err(invalid("v0", "must be ≥ 0"));
            }
            let eps = real(c, "eps");
            if !(0.0..1.0).contains(&eps) {
                return Err(invalid("eps", "must lie in [0, 1); 0 selects exact simulation"));
            }
            let t = list(c, "checkpoints");
            if t.is_empty() || t.iter().any(|&x| x < 0.0) || t.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid("checkpoints", "must be non-negative and strictly increasing"));
            }
        }
        Command::Validate => {}
    }
    Ok(())
}

/// A named output with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => format!("{x:e}"),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Num(x) => serde_json::json!(x),
            Cell::Int(i) => serde_json::json!(i),
            Cell::Text(s) => serde_json::json!(s),
            Cell::Empty => serde_json::Value::Null,
        }
    }
}

impl Table {
    fn new(name: &str, columns: &[&'static str]) -> Self {
        Self { name: name.to_string(), columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Vec<serde_json::Value>> = self.rows.iter().map(|r| r.iter().map(Cell::json).collect()).collect();
        let v = serde_json::json!({ "name": self.name, "columns": self.columns, "rows": rows });
        serde_json::to_string_pretty(&v).expect("tables serialize") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: Command,
    pub parameters: BTreeMap<String, Value>,
    pub format: Format,
    pub seeds: Vec<u64>,
    pub version: String,
    pub parallel: bool,
    pub wall_seconds: f64,
    pub outputs: Vec<OutputRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub manifest: Manifest,
    /// validation outcome, when the command was `validate`
    pub checks: Vec<validation::CheckResult>,
}

impl RunSummary {
    pub fn acceptance_failed(&self) -> bool {
        self.checks.iter().any(|c| !c.passed)
    }
}

/// Rebuild a config from a manifest written by an earlier run.
pub fn config_from_manifest(text: &str, output_dir: PathBuf) -> Result<RunConfig> {
    let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
    // re-type through the schema so integers and reals keep their kinds
    let mut parameters = BTreeMap::new();
    for (k, v) in &m.parameters {
        let kind = lookup(m.command, k)?;
        let raw = match v {
            Value::Int(i) => i.to_string(),
            Value::Real(x) => format!("{x:e}"),
            Value::Text(s) => s.clone(),
            Value::List(l) => l.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(","),
        };
        parameters.insert(k.clone(), parse_value(k, kind, &raw)?);
    }
    let config = RunConfig { command: m.command, parameters, output_dir, format: m.format };
    check(&config)?;
    Ok(config)
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Execute the pipeline, write its tables and `manifest.json` into the output directory.
pub fn run(config: &RunConfig, exec: Exec) -> Result<RunSummary> {
    check(config)?;
    let start = Instant::now();
    let (tables, seeds, checks) = execute(config, exec)?;
    std::fs::create_dir_all(&config.output_dir)?;
    let mut outputs = Vec::new();
    for t in &tables {
        let (file, body) = match config.format {
            Format::Csv => (format!("{}.csv", t.name), t.to_csv()),
            Format::Json => (format!("{}.json", t.name), t.to_json()),
        };
        std::fs::write(config.output_dir.join(&file), &body)?;
        outputs.push(OutputRecord { sha256: sha256_hex(body.as_bytes()), bytes: body.len(), file });
    }
    let manifest = Manifest {
        command: config.command,
        parameters: config.parameters.clone(),
        format: config.format,
        seeds,
        version: env!("CARGO_PKG_VERSION").to_string(),
        parallel: cfg!(feature = "parallel") && exec == Exec::Parallel,
        wall_seconds: start.elapsed().as_secs_f64(),
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(config.output_dir.join("manifest.json"), text)?;
    Ok(RunSummary { manifest, checks })
}

type Executed = (Vec<Table>, Vec<u64>, Vec<validation::CheckResult>);

fn execute(c: &RunConfig, exec: Exec) -> Result<Executed> {
    let sigma = real(c, "sigma");
    let (tables, seeds, checks) = match c.command {
        Command::Profile => {
            let params = SigmaParams::core(sigma)?;
            let series = lambda_series::build(&params, int(c, "order") as usize)?;
            let n = int(c, "points") as usize;
            let (lo, hi) = (real(c, "xi_min"), real(c, "xi_max"));
            let mut t = Table::new("profile", &["xi", "lambda", "leading_power", "route"]);
            for k in 0..n {
                let xi = if n == 1 { lo } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 };
                let route = if series.uses_series(xi) { "series" } else { "contour" };
                t.rows.push(vec![Cell::Num(xi), Cell::Num(series.eval(xi)?), Cell::Num(xi.powf(sigma - 2.0)), Cell::Text(route.into())]);
            }
            (vec![t], Vec::new(), Vec::new())
        }
        Command::Mellin => {
            let params = SigmaParams::core(sigma)?;
            let m = MellinStructure::build_with(&params, int(c, "zeros") as usize)?;
            let mut z = Table::new("zeros", &["family", "n", "root", "bracket_lo", "bracket_hi", "asymptotic", "slope"]);
            for q in &m.zeros {
                z.rows.push(vec![
                    Cell::Int(q.family as i64),
                    Cell::Int(q.n as i64),
                    Cell::Num(q.root),
                    Cell::Num(q.lo),
                    Cell::Num(q.hi),
                    q.asymptotic.map_or(Cell::Empty, Cell::Num),
                    Cell::Num(q.slope),
                ]);
            }
            let mut k = Table::new("constants", &["name", "value"]);
            for (name, v) in [("m_prime_zero", m.m_prime_zero), ("k_bar", m.k_bar), ("lambda_at_one", m.lambda_at_one())] {
                k.rows.push(vec![Cell::Text(name.into()), Cell::Num(v)]);
            }
            (vec![z, k], Vec::new(), Vec::new())
        }
        Command::Kernel => {
            let params = SigmaParams::core(sigma)?;
            let ctx = GreensContext::new(&params)?;
            let v_bar = real(c, "v_bar");
            let g: Option<ScalarFn> = (text(c, "source") == "one").then(|| Arc::new(|_| 1.0) as ScalarFn);
            let psi: Option<ScalarFn> =
                (text(c, "boundary") == "exp").then(|| Arc::new(move |eta: f64| (-(eta - v_bar) / v_bar).exp()) as ScalarFn);
            let problem = BvProblem::new(v_bar, g, psi)?;
            let n = int(c, "points") as usize;
            let grid: Vec<f64> = (1..=n).map(|k| 1.5 * v_bar * k as f64 / (n + 1) as f64).collect();
            let u = bvp_solve(&problem, &ctx, &grid, exec)?;
            let mut t = Table::new("kernel", &["v", "u"]);
            for (v, u) in grid.iter().zip(&u) {
                t.rows.push(vec![Cell::Num(*v), Cell::Num(*u)]);
            }
            let mut k = Table::new("constants", &["name", "value"]);
            k.rows.push(vec![Cell::Text("c_star".into()), Cell::Num(c_star(&params)?.0)]);
            (vec![t, k], Vec::new(), Vec::new())
        }
        Command::Resolvent => {
            let spec = GeneratorSpec::GInfinity { sigma, epsilon: real(c, "epsilon") };
            let nodes = geometric_nodes(real(c, "v_min"), real(c, "v_max"), int(c, "nodes") as usize);
            let (center, width) = (real(c, "center"), real(c, "width"));
            let g = GridFunction::from_fn(&nodes, |v| (-((v - center) / width).powi(2)).exp())?;
            let phi = resolvent_solve(&g, real(c, "lambda"), &spec, exec)?;
            let mut t = Table::new("resolvent", &["v", "g", "phi"]);
            for ((v, g), p) in nodes.iter().zip(g.values()).zip(phi.values()) {
                t.rows.push(vec![Cell::Num(*v), Cell::Num(*g), Cell::Num(*p)]);
            }
            (vec![t], Vec::new(), Vec::new())
        }
        Command::Adjoint => {
            let spec = GeneratorSpec::Law(law(c)?);
            let cap = real(c, "cap");
            let decades = (cap / 0.1).log10();
            let mut x = geometric_nodes(0.1, cap, (decades * int(c, "per_decade") as f64).ceil() as usize + 1);
            x.insert(0, 0.0);
            let phi0 = GridFunction::from_fn(&x, |v| (-3.0 * (1.0 + v.min(cap)).ln() / (1.0 + cap).ln()).exp())?;
            let times = list(c, "times");
            let opts = AdjointOptions { steps_per_decade: int(c, "steps_per_decade") as usize, ..AdjointOptions::default() };
            let out = adjoint_evolve(&phi0, &times, &spec, opts, exec)?;
            let mut t = Table::new("adjoint", &["t", "v", "phi"]);
            for (time, f) in times.iter().zip(&out) {
                for (v, p) in f.nodes().iter().zip(f.values()) {
                    t.rows.push(vec![Cell::Num(*time), Cell::Num(*v), Cell::Num(*p)]);
                }
            }
            (vec![t], Vec::new(), Vec::new())
        }
        Command::Simulate => {
            let law = law(c)?;
            let eps = real(c, "eps");
            let mut opts = if eps > 0.0 { SimOptions::drift(eps) } else { SimOptions::default() };
            opts.event_cap = int(c, "event_cap") as u64;
            let seed = int(c, "seed") as u64;
            let checkpoints = list(c, "checkpoints");
            let ens = ensemble(int(c, "n") as usize, real(c, "v0"), &checkpoints, &law, seed, opts, exec)?;
            let mut snap = Table::new("snapshots", &["trajectory", "t", "v"]);
            for (k, &t) in ens.checkpoints.iter().enumerate() {
                for (i, &v) in ens.snapshots[k].iter().enumerate() {
                    snap.rows.push(vec![Cell::Int(i as i64), Cell::Num(t), Cell::Num(v)]);
                }
            }
            let mut summary = Table::new("summary", &["t", "median_v", "mean_log1p_v"]);
            for (k, &t) in ens.checkpoints.iter().enumerate() {
                let mut s = ens.snapshots[k].clone();
                s.sort_by(f64::total_cmp);
                let median = if s.len() % 2 == 1 { s[s.len() / 2] } else { 0.5 * (s[s.len() / 2 - 1] + s[s.len() / 2]) };
                let mean_log = s.iter().map(|v| v.ln_1p()).sum::<f64>() / s.len() as f64;
                summary.rows.push(vec![Cell::Num(t), Cell::Num(median), Cell::Num(mean_log)]);
            }
            let mut tables = vec![snap, summary];
            if let Ok((slope, err)) = scaling_exponent(&ens) {
                let mut fit = Table::new("scaling", &["slope", "stderr"]);
                fit.rows.push(vec![Cell::Num(slope), Cell::Num(err)]);
                tables.push(fit);
            }
            (tables, vec![seed], Vec::new())
        }
        Command::Validate => {
            let suite = Suite::parse(text(c, "suite"))?;
            let checks = validation::run_suite(suite, exec);
            let mut t = Table::new("validation", &["id", "name", "passed", "known_unattainable", "seconds", "detail"]);
            for r in &checks {
                t.rows.push(vec![
                    Cell::Int(r.id as i64),
                    Cell::Text(r.name.into()),
                    Cell::Text(r.passed.to_string()),
                    Cell::Text(validation::KNOWN_UNATTAINABLE.contains(&r.id).to_string()),
                    Cell::Num((r.seconds * 10.0).round() / 10.0),
                    Cell::Text(r.detail.clone()),
                ]);
            }
            (vec![t], Vec::new(), checks)
        }
    };
    Ok((tables, seeds, checks))
}

/// Human-readable pass/fail table.
pub fn format_checks(checks: &[validation::CheckResult]) -> String {
    let mut s = String::new();
    for r in checks {
        let status = if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "{status} [{:>2}] {:<28} {:>7.1}s  {}", r.id, r.name, r.seconds, r.detail);
    }
    s
}

/// Path helper for tests and the binary: the output file of a table.
pub fn output_path(config: &RunConfig, table: &str) -> PathBuf {
    let ext = match config.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    Path::new(&config.output_dir).join(format!("{table}.{ext}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("lincoag-cli-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn flag_sets_value() {
        let c = parse_config(Command::Profile, None, &flags("--sigma 1.8"), tmp("a"), Format::Csv).unwrap();
        assert_eq!(c.parameters["sigma"], Value::Real(1.8));
    }

    #[test]
    fn flags_override_file() {
        let file = "# exponent\nsigma = 1.8   # trailing comment\n\npoints = 5\n";
        let c = parse_config(Command::Profile, Some(file), &flags("--sigma=1.9"), tmp("b"), Format::Csv).unwrap();
        assert_eq!(c.parameters["sigma"], Value::Real(1.9));
        assert_eq!(c.parameters["points"], Value::Int(5));
    }

    #[test]
    fn lists_and_integer_forms() {
        let c = parse_config(Command::Simulate, None, &flags("--checkpoints 1,10,100 --n 1e3"), tmp("c"), Format::Csv).unwrap();
        assert_eq!(c.parameters["checkpoints"], Value::List(vec![1.0, 10.0, 100.0]));
        assert_eq!(c.parameters["n"], Value::Int(1000));
    }

    #[test]
    fn errors_are_typed() {
        let e = parse_config(Command::Profile, Some("sigma = 1.8\nbogus = 3\n"), &[], tmp("d"), Format::Csv).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse_config(Command::Profile, Some("sigma 1.8\n"), &[], tmp("d"), Format::Csv).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
        let e = parse_config(Command::Profile, None, &flags("--colour red"), tmp("d"), Format::Csv).unwrap_err();
        assert!(matches!(e, Error::UnknownKey(ref k) if k == "colour"));
        let e = parse_config(Command::Profile, None, &flags("--points many"), tmp("d"), Format::Csv).unwrap_err();
        assert!(matches!(e, Error::InvalidValue { .. }));
        let e = parse_config(Command::Mellin, None, &flags("--zeros 1.5"), tmp("d"), Format::Csv).unwrap_err();
        assert!(matches!(e, Error::InvalidValue { .. }));
    }

    #[test]
    fn regime_gate() {
        let e = parse_config(Command::Simulate, None, &flags("--sigma 1.5"), tmp("e"), Format::Csv).unwrap_err();
        assert!(matches!(e, Error::Domain(_)));
        assert!(parse_config(Command::Simulate, None, &flags("--sigma 2.5"), tmp("e"), Format::Csv).is_ok());
        assert!(parse_config(Command::Mellin, None, &flags("--sigma 2.5"), tmp("e"), Format::Csv).is_err());
    }

    #[test]
    fn mellin_writes_33_rows() {
        let c = parse_config(Command::Mellin, None, &flags("--zeros 10"), tmp("f"), Format::Csv).unwrap();
        let s = run(&c, Exec::Sequential).unwrap();
        let text = std::fs::read_to_string(output_path(&c, "zeros")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "family,n,root,bracket_lo,bracket_hi,asymptotic,slope");
        assert_eq!(lines.count(), 33);
        assert_eq!(s.manifest.outputs.len(), 2);
        let _ = std::fs::remove_dir_all(&c.output_dir);
    }

    #[test]
    fn simulate_is_reproducible_from_manifest() {
        let dir = tmp("g");
        let c = parse_config(Command::Simulate, None, &flags("--n 50 --checkpoints 1,10,100 --seed 7"), dir.join("a"), Format::Csv)
            .unwrap();
        let first = run(&c, Exec::Parallel).unwrap();
        let again = run(&c, Exec::Sequential).unwrap();
        assert_eq!(first.manifest.outputs, again.manifest.outputs);
        let text = std::fs::read_to_string(c.output_dir.join("manifest.json")).unwrap();
        let replay = config_from_manifest(&text, dir.join("b")).unwrap();
        assert_eq!(replay.parameters, c.parameters);
        let third = run(&replay, Exec::Parallel).unwrap();
        assert_eq!(first.manifest.outputs, third.manifest.outputs);
        assert_eq!(first.manifest.seeds, vec![7]);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn json_tables_are_stable() {
        let mut t = Table::new("x", &["a", "b"]);
        t.rows.push(vec![Cell::Num(0.5), Cell::Empty]);
        let v: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v["columns"], serde_json::json!(["a", "b"]));
        assert_eq!(v["rows"][0], serde_json::json!([0.5, null]));
        assert_eq!(t.to_csv(), "a,b\n5e-1,\n");
    }

    #[test]
    fn validate_identities_passes() {
        let c = parse_config(Command::Validate, None, &flags("--suite identities"), tmp("h"), Format::Csv).unwrap();
        let s = run(&c, Exec::Parallel).unwrap();
        assert_eq!(s.checks.len(), 3);
        assert!(!s.acceptance_failed(), "{}", format_checks(&s.checks));
        let _ = std::fs::remove_dir_all(&c.output_dir);
    }
}
