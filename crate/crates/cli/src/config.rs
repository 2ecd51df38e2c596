//! Experiment configuration: JSON ingestion and validation.
//!
//! Everything is checked here, before any computation starts. Errors name the
//! offending field with a dotted path such as `params.k[2]`.

use std::path::{Path, PathBuf};

use decaylab_core::ifs::{Ifs, IfsOptions, MapSpec};
use decaylab_core::measure::SelfConformalMeasure;
use decaylab_core::{corpus, transfer_op};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    UniCheck,
    ModelVerify,
    SpectralScan,
    RenewalTest,
    DecayReport,
}

impl Command {
    pub const ALL: [Command; 5] =
        [Command::UniCheck, Command::ModelVerify, Command::SpectralScan, Command::RenewalTest, Command::DecayReport];

    pub fn name(self) -> &'static str {
        match self {
            Command::UniCheck => "uni-check",
            Command::ModelVerify => "model-verify",
            Command::SpectralScan => "spectral-scan",
            Command::RenewalTest => "renewal-test",
            Command::DecayReport => "decay-report",
        }
    }

    pub fn parse(s: &str, field: &str) -> Result<Command, CliError> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Command::ALL.iter().map(|c| c.name()).collect();
            CliError::validation(field, format!("unknown command {s:?}; expected one of {}", known.join(", ")))
        })
    }

    /// Commands that draw random samples and therefore need a seed.
    pub fn is_monte_carlo(self) -> bool {
        matches!(self, Command::ModelVerify | Command::RenewalTest | Command::DecayReport)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapEntry {
    pub kind: String,
    pub params: Vec<f64>,
}

impl MapEntry {
    fn spec(&self, field: &str) -> Result<MapSpec, CliError> {
        let p = &self.params;
        let want = |n: usize| {
            if p.len() == n {
                Ok(())
            } else {
                Err(CliError::validation(format!("{field}.params"), format!("{} takes {n} parameters, got {}", self.kind, p.len())))
            }
        };
        match self.kind.as_str() {
            "affine" => want(2).map(|_| MapSpec::affine(p[0], p[1])),
            "moebius" => want(4).map(|_| MapSpec::Moebius { a: p[0], b: p[1], c: p[2], d: p[3] }),
            "gauss" => want(1).map(|_| MapSpec::gauss(p[0])),
            "polynomial" if !p.is_empty() => Ok(MapSpec::Polynomial(p.clone())),
            "polynomial" => Err(CliError::validation(format!("{field}.params"), "polynomial needs coefficients")),
            k => Err(CliError::validation(
                format!("{field}.kind"),
                format!("unknown map kind {k:?}; expected affine, moebius, gauss or polynomial"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum IfsRef {
    Corpus(String),
    Maps { maps: Vec<MapEntry>, description: String, reversing: bool },
}

pub const CORPUS: [&str; 6] = ["cantor", "gauss24", "dyadic", "inner_cantor", "moebius_pair", "affine_three"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostCaps {
    /// Enumeration leaves per sub-task.
    pub leaves: u64,
    /// Monte Carlo samples per sub-task.
    pub samples: u64,
}

impl Default for CostCaps {
    fn default() -> Self {
        CostCaps { leaves: 10_000_000, samples: 10_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Params {
    UniCheck { max_generation: usize, induce_cap: usize },
    ModelVerify {
        n_omega: usize,
        prefix_len: usize,
        federer_samples: usize,
        radii: Vec<f64>,
        depths: [usize; 2],
        partition_eps: f64,
    },
    SpectralScan { a: f64, b: Vec<f64>, n: usize, m: usize },
    RenewalTest { k: Vec<f64>, t: Vec<f64>, tail_len: usize, n_mc: usize, g: String },
    DecayReport { q_min: f64, q_max: f64, n_points: usize, n_mc: usize, tol: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub ifs: IfsRef,
    pub p: Option<Vec<f64>>,
    pub command: Command,
    pub params: Params,
    pub seed: Option<u64>,
    pub cost_caps: CostCaps,
    pub eps: f64,
    /// Where artifacts go. Not part of the hash: moving outputs does not
    /// change what was computed.
    #[serde(skip)]
    pub out: PathBuf,
}

/// Values given on the command line; each overrides the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub eps: Option<f64>,
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    parse_config_with(path, &Overrides::default())
}

pub fn parse_config_with(path: &Path, ov: &Overrides) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    parse_config_str(&text, ov)
}

pub fn parse_config_str(text: &str, ov: &Overrides) -> Result<ExperimentConfig, CliError> {
    let root: Value = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    let obj = root.as_object().ok_or_else(|| CliError::validation("$", "config must be a JSON object"))?;
    const KNOWN: [&str; 9] = ["ifs", "p", "command", "params", "seed", "cost_caps", "eps", "out", "description"];
    if let Some(k) = obj.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(CliError::validation(k.clone(), "unknown field"));
    }

    let ifs = parse_ifs(obj.get("ifs").ok_or_else(|| CliError::validation("ifs", "missing"))?)?;
    let p = match obj.get("p") {
        None | Some(Value::Null) => None,
        Some(v) => Some(float_list(v, "p")?),
    };

    let file_command = obj.get("command").map(|v| string(v, "command")).transpose()?;
    let cli_command = ov.command.as_deref().map(|c| Command::parse(c, "command")).transpose()?;
    let file_command = file_command.as_deref().map(|c| Command::parse(c, "command")).transpose()?;
    let command = match (cli_command, file_command) {
        (Some(c), Some(f)) if c != f => {
            return Err(CliError::validation(
                "command",
                format!("command line says {} but the config says {}", c.name(), f.name()),
            ))
        }
        (Some(c), _) | (None, Some(c)) => c,
        (None, None) => return Err(CliError::validation("command", "missing")),
    };

    let seed = match ov.seed {
        Some(s) => Some(s),
        None => obj.get("seed").map(|v| uint(v, "seed")).transpose()?,
    };
    if command.is_monte_carlo() && seed.is_none() {
        return Err(CliError::validation("seed", format!("{} draws random samples and needs a seed", command.name())));
    }

    let mut cost_caps = CostCaps::default();
    if let Some(v) = obj.get("cost_caps") {
        let m = object(v, "cost_caps")?;
        for (k, v) in m {
            let path = format!("cost_caps.{k}");
            match k.as_str() {
                "leaves" => cost_caps.leaves = positive_uint(v, &path)?,
                "samples" => cost_caps.samples = positive_uint(v, &path)?,
                _ => return Err(CliError::validation(path, "unknown field")),
            }
        }
    }

    let eps = match ov.eps {
        Some(e) => e,
        None => obj.get("eps").map(|v| float(v, "eps")).transpose()?.unwrap_or(transfer_op::DEFAULT_STRIP),
    };
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CliError::validation("eps", format!("must lie in (0, 1), got {eps}")));
    }

    let out = match &ov.out {
        Some(o) => o.clone(),
        None => obj.get("out").map(|v| string(v, "out")).transpose()?.map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
    };

    let empty = Map::new();
    let params_obj = match obj.get("params") {
        None | Some(Value::Null) => &empty,
        Some(v) => object(v, "params")?,
    };
    let params = parse_params(command, params_obj)?;

    let config = ExperimentConfig { ifs, p, command, params, seed, cost_caps, eps, out };
    let nu = config.measure()?;
    check_against_measure(&config, &nu)?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn build_ifs(&self) -> Result<Ifs, CliError> {
        match &self.ifs {
            IfsRef::Corpus(name) => Ok(match name.as_str() {
                "cantor" => corpus::cantor(),
                "gauss24" => corpus::gauss24(),
                "dyadic" => corpus::dyadic(),
                "inner_cantor" => corpus::inner_cantor(),
                "moebius_pair" => corpus::moebius_pair(),
                "affine_three" => corpus::affine_three(),
                _ => unreachable!("corpus names are checked on parse"),
            }),
            IfsRef::Maps { maps, reversing, .. } => {
                let specs =
                    maps.iter().enumerate().map(|(i, m)| m.spec(&format!("ifs.maps[{i}]"))).collect::<Result<Vec<_>, _>>()?;
                let options = IfsOptions { allow_reversing: *reversing, ..Default::default() };
                Ifs::from_specs(&specs, options).map_err(|e| CliError::validation("ifs.maps", e.to_string()))
            }
        }
    }

    pub fn measure(&self) -> Result<SelfConformalMeasure, CliError> {
        let ifs = self.build_ifs()?;
        let n = ifs.len();
        let p = match &self.p {
            None => vec![1.0 / n as f64; n],
            Some(p) => {
                if p.len() != n {
                    return Err(CliError::validation("p", format!("has {} entries for {n} maps", p.len())));
                }
                if let Some(i) = p.iter().position(|&v| !(v > 0.0)) {
                    return Err(CliError::validation(format!("p[{i}]"), "weights must be positive"));
                }
                if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(CliError::validation("p", "p must sum to 1"));
                }
                p.clone()
            }
        };
        SelfConformalMeasure::new(ifs, p).map_err(|e| CliError::validation("p", e.to_string()))
    }

    /// Canonical JSON of everything that determines the numbers.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

fn check_against_measure(c: &ExperimentConfig, nu: &SelfConformalMeasure) -> Result<(), CliError> {
    let caps = c.cost_caps;
    let sample_cap = |n: usize, field: &str| {
        if n as u64 > caps.samples {
            Err(CliError::CostCap { field: field.into(), message: format!("{n} samples exceed the cap of {}", caps.samples) })
        } else {
            Ok(())
        }
    };
    match &c.params {
        Params::SpectralScan { a, .. } if a.abs() > c.eps => {
            Err(CliError::validation("params.a", format!("|a| = {} exceeds the strip half-width {}", a.abs(), c.eps)))
        }
        Params::RenewalTest { k, n_mc, .. } => {
            let floor = nu.ifs().constants().d_max + 1.0;
            if let Some(i) = k.iter().position(|&v| !(v > floor)) {
                return Err(CliError::validation(format!("params.k[{i}]"), format!("must exceed D' + 1 = {floor:.6}")));
            }
            sample_cap(*n_mc, "params.n_mc")
        }
        Params::DecayReport { n_mc, .. } => sample_cap(*n_mc, "params.n_mc"),
        Params::ModelVerify { federer_samples, .. } => sample_cap(*federer_samples, "params.federer_samples"),
        _ => Ok(()),
    }
}

fn parse_ifs(v: &Value) -> Result<IfsRef, CliError> {
    match v {
        Value::String(s) => {
            if CORPUS.contains(&s.as_str()) {
                Ok(IfsRef::Corpus(s.clone()))
            } else {
                Err(CliError::validation("ifs", format!("unknown system {s:?}; expected one of {}", CORPUS.join(", "))))
            }
        }
        Value::Object(m) => {
            if let Some(k) = m.keys().find(|k| !["maps", "description", "reversing"].contains(&k.as_str())) {
                return Err(CliError::validation(format!("ifs.{k}"), "unknown field"));
            }
            let list = m.get("maps").ok_or_else(|| CliError::validation("ifs.maps", "missing"))?;
            let list = list.as_array().ok_or_else(|| CliError::validation("ifs.maps", "must be an array"))?;
            if list.len() < 2 {
                return Err(CliError::validation("ifs.maps", "needs at least two maps"));
            }
            let mut maps = Vec::with_capacity(list.len());
            for (i, e) in list.iter().enumerate() {
                let path = format!("ifs.maps[{i}]");
                let e = object(e, &path)?;
                let kind = string(e.get("kind").ok_or_else(|| CliError::validation(format!("{path}.kind"), "missing"))?, &format!("{path}.kind"))?;
                let params = float_list(
                    e.get("params").ok_or_else(|| CliError::validation(format!("{path}.params"), "missing"))?,
                    &format!("{path}.params"),
                )?;
                let entry = MapEntry { kind, params };
                entry.spec(&path)?;
                maps.push(entry);
            }
            let description = m.get("description").map(|d| string(d, "ifs.description")).transpose()?.unwrap_or_default();
            let reversing = match m.get("reversing") {
                None => false,
                Some(Value::Bool(b)) => *b,
                Some(_) => return Err(CliError::validation("ifs.reversing", "must be a boolean")),
            };
            Ok(IfsRef::Maps { maps, description, reversing })
        }
        _ => Err(CliError::validation("ifs", "must be a system name or an object with maps")),
    }
}

/// Reads command parameters, rejecting unknown keys.
struct ParamReader<'a> {
    obj: &'a Map<String, Value>,
    seen: Vec<&'static str>,
}

impl<'a> ParamReader<'a> {
    fn path(key: &str) -> String {
        format!("params.{key}")
    }

    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.push(key);
        self.obj.get(key)
    }

    fn count(&mut self, key: &'static str, default: usize) -> Result<usize, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => positive_uint(v, &Self::path(key)).map(|n| n as usize),
        }
    }

    fn number(&mut self, key: &'static str, default: f64) -> Result<f64, CliError> {
        self.get(key).map(|v| float(v, &Self::path(key))).transpose().map(|o| o.unwrap_or(default))
    }

    fn positive(&mut self, key: &'static str, default: f64) -> Result<f64, CliError> {
        let v = self.number(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(CliError::validation(Self::path(key), format!("must be positive, got {v}")))
        }
    }

    fn list(&mut self, key: &'static str, default: Option<&[f64]>) -> Result<Vec<f64>, CliError> {
        let v = match (self.get(key), default) {
            (Some(v), _) => float_list(v, &Self::path(key))?,
            (None, Some(d)) => d.to_vec(),
            (None, None) => return Err(CliError::validation(Self::path(key), "missing")),
        };
        if v.is_empty() {
            return Err(CliError::validation(Self::path(key), "must not be empty"));
        }
        Ok(v)
    }

    fn finish(self) -> Result<(), CliError> {
        match self.obj.keys().find(|k| !self.seen.contains(&k.as_str())) {
            Some(k) => Err(CliError::validation(Self::path(k), "unknown parameter")),
            None => Ok(()),
        }
    }
}

fn parse_params(command: Command, obj: &Map<String, Value>) -> Result<Params, CliError> {
    let mut r = ParamReader { obj, seen: Vec::new() };
    let params = match command {
        Command::UniCheck => Params::UniCheck { max_generation: r.count("max_generation", 12)?, induce_cap: r.count("induce_cap", 4096)? },
        Command::ModelVerify => {
            let n_omega = r.count("n_omega", 32)?;
            let prefix_len = r.count("prefix_len", 24)?;
            let federer_samples = r.count("federer_samples", 50_000)?;
            let radii = r.list("radii", Some(&[1e-2, 3e-3, 1e-3]))?;
            if let Some(i) = radii.iter().position(|&x| !(x > 0.0 && x < 1.0)) {
                return Err(CliError::validation(format!("params.radii[{i}]"), "relative radii must lie in (0, 1)"));
            }
            let depths = r.list("depths", Some(&[15.0, 20.0]))?;
            if depths.len() != 2 || depths.iter().any(|d| d.fract() != 0.0 || *d < 1.0) || depths[0] >= depths[1] {
                return Err(CliError::validation("params.depths", "must be two increasing positive integers"));
            }
            if depths[1] as usize > prefix_len {
                return Err(CliError::validation("params.depths", "may not exceed params.prefix_len"));
            }
            let partition_eps = r.positive("partition_eps", 0.02)?;
            Params::ModelVerify {
                n_omega,
                prefix_len,
                federer_samples,
                radii,
                depths: [depths[0] as usize, depths[1] as usize],
                partition_eps,
            }
        }
        Command::SpectralScan => {
            let a = r.number("a", 0.0)?;
            let b = r.list("b", None)?;
            if let Some(i) = b.iter().position(|x| !(x.abs() >= 1.0)) {
                return Err(CliError::validation(format!("params.b[{i}]"), "frequencies need |b| >= 1"));
            }
            let n = r.count("n", 40)?;
            let m = r.count("m", 512)?;
            if m < 16 {
                return Err(CliError::validation("params.m", "grid needs at least 16 nodes"));
            }
            Params::SpectralScan { a, b, n, m }
        }
        Command::RenewalTest => {
            let k = r.list("k", Some(&[6.0, 8.0, 10.0, 12.0]))?;
            let t = r.list("t", Some(&[2.0, 4.0, 6.0, 8.0, 10.0]))?;
            if let Some(i) = t.iter().position(|x| !(*x >= 0.0)) {
                return Err(CliError::validation(format!("params.t[{i}]"), "must be non-negative"));
            }
            let tail_len = r.count("tail_len", 4)?;
            let n_mc = r.count("n_mc", 200_000)?;
            let g = match r.get("g") {
                None => "bump".to_string(),
                Some(v) => string(v, "params.g")?,
            };
            if !["bump", "one", "identity"].contains(&g.as_str()) {
                return Err(CliError::validation("params.g", format!("unknown test function {g:?}; expected bump, one or identity")));
            }
            Params::RenewalTest { k, t, tail_len, n_mc, g }
        }
        Command::DecayReport => {
            let q_min = r.positive("q_min", 16.0)?;
            let q_max = r.positive("q_max", 65536.0)?;
            if q_min < 1.0 {
                return Err(CliError::validation("params.q_min", "must be at least 1"));
            }
            if q_max <= q_min {
                return Err(CliError::validation("params.q_max", "must exceed params.q_min"));
            }
            let n_points = r.count("n_points", 8)?;
            let n_mc = r.count("n_mc", 2000)?;
            let tol = r.positive("tol", 1e-4)?;
            Params::DecayReport { q_min, q_max, n_points, n_mc, tol }
        }
    };
    r.finish()?;
    Ok(params)
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, CliError> {
    v.as_object().ok_or_else(|| CliError::validation(path, "must be an object"))
}

fn string(v: &Value, path: &str) -> Result<String, CliError> {
    v.as_str().map(str::to_string).ok_or_else(|| CliError::validation(path, "must be a string"))
}

fn float(v: &Value, path: &str) -> Result<f64, CliError> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| CliError::validation(path, "must be a finite number"))
}

fn uint(v: &Value, path: &str) -> Result<u64, CliError> {
    if let Some(n) = v.as_u64() {
        return Ok(n);
    }
    // 1e7 is a convenient way to write a cap
    match v.as_f64() {
        Some(x) if x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(64) => Ok(x as u64),
        _ => Err(CliError::validation(path, "must be a non-negative integer")),
    }
}

fn positive_uint(v: &Value, path: &str) -> Result<u64, CliError> {
    match uint(v, path)? {
        0 => Err(CliError::validation(path, "must be positive")),
        n => Ok(n),
    }
}

fn float_list(v: &Value, path: &str) -> Result<Vec<f64>, CliError> {
    let a = v.as_array().ok_or_else(|| CliError::validation(path, "must be an array of numbers"))?;
    a.iter().enumerate().map(|(i, x)| float(x, &format!("{path}[{i}]"))).collect()
}
