//! Plain-text experiment configs: `key = value` lines holding the model, the command and its
//! numeric parameters. Canonicalization fills defaults and sorts lines so that hashing is stable.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};
use szego_core::model::{parse_entries, Entry, VerblunskyModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, clap::ValueEnum)]
pub enum Command {
    Spectrum,
    Lyapunov,
    Rotation,
    Dos,
    Thouless,
    Holder,
    Kam,
    Jl,
    Gordon,
    Suite,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::Spectrum,
        Command::Lyapunov,
        Command::Rotation,
        Command::Dos,
        Command::Thouless,
        Command::Holder,
        Command::Kam,
        Command::Jl,
        Command::Gordon,
        Command::Suite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Lyapunov => "lyapunov",
            Command::Rotation => "rotation",
            Command::Dos => "dos",
            Command::Thouless => "thouless",
            Command::Holder => "holder",
            Command::Kam => "kam",
            Command::Jl => "jl",
            Command::Gordon => "gordon",
            Command::Suite => "suite",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Accepted parameters with their ranges and defaults.
    pub fn schema(self) -> &'static [ParamSpec] {
        use ParamKind::*;
        const GRID: ParamSpec = ParamSpec { key: "grid", kind: Int { min: 16, max: 1 << 16 }, default: Value::Int(256) };
        const N_ITER: ParamSpec = ParamSpec { key: "n_iter", kind: Int { min: 1, max: 10_000_000 }, default: Value::Int(10_000) };
        const PHASES: ParamSpec = ParamSpec { key: "phases", kind: Int { min: 1, max: 4096 }, default: Value::Int(16) };
        const DEGREE: ParamSpec = ParamSpec { key: "degree", kind: Int { min: 16, max: 1 << 14 }, default: Value::Int(2000) };
        const DOS_PHASES: ParamSpec = ParamSpec { key: "phases", kind: Int { min: 1, max: 1024 }, default: Value::Int(50) };
        const ESTIMATOR: ParamSpec =
            ParamSpec { key: "estimator", kind: Choice(&["truncation", "zeros"]), default: Value::Text("truncation") };
        match self {
            Command::Spectrum => &[GRID, ParamSpec { key: "horizon", kind: Int { min: 16, max: 1 << 16 }, default: Value::Int(1024) }],
            Command::Lyapunov => &[
                ParamSpec { key: "grid", kind: Int { min: 1, max: 1 << 16 }, default: Value::Int(64) },
                N_ITER,
                PHASES,
                ParamSpec { key: "modulus", kind: Float { min: 1e-6, max: 100.0 }, default: Value::Float(1.0) },
            ],
            Command::Rotation => &[ParamSpec { key: "grid", kind: Int { min: 1, max: 1 << 16 }, default: Value::Int(100) }, N_ITER],
            Command::Dos => &[DEGREE, DOS_PHASES, ESTIMATOR],
            Command::Thouless => &[
                DEGREE,
                DOS_PHASES,
                N_ITER,
                ParamSpec { key: "modulus", kind: Float { min: 1e-6, max: 100.0 }, default: Value::Float(1.1) },
                ParamSpec { key: "zeta", kind: Float { min: 0.0, max: 6.283185307179586 }, default: Value::Float(1.0) },
            ],
            Command::Holder => &[
                ParamSpec { key: "degree", kind: Int { min: 16, max: 1 << 14 }, default: Value::Int(4000) },
                DOS_PHASES,
                ParamSpec { key: "zetas", kind: Int { min: 1, max: 1000 }, default: Value::Int(10) },
                ParamSpec { key: "eps_min", kind: Float { min: 1e-6, max: 1.0 }, default: Value::Float(1e-2) },
                ParamSpec { key: "eps_max", kind: Float { min: 1e-6, max: 3.0 }, default: Value::Float(1e-1) },
                ParamSpec { key: "eps_count", kind: Int { min: 2, max: 64 }, default: Value::Int(5) },
            ],
            Command::Kam => &[
                ParamSpec { key: "zeta", kind: Float { min: 0.0, max: 6.283185307179586 }, default: Value::Float(2.0) },
                ParamSpec { key: "r", kind: Float { min: 1e-4, max: 1.0 }, default: Value::Float(0.02) },
                ParamSpec { key: "epsilon0", kind: Float { min: 0.0, max: 0.5 }, default: Value::Float(0.0) },
                ParamSpec { key: "steps", kind: Int { min: 1, max: 8 }, default: Value::Int(3) },
                ParamSpec { key: "ungated", kind: Int { min: 0, max: 1 }, default: Value::Int(0) },
                ParamSpec { key: "resonance_grid", kind: Int { min: 0, max: 1 << 14 }, default: Value::Int(0) },
                ParamSpec { key: "growth_samples", kind: Int { min: 1, max: 256 }, default: Value::Int(8) },
            ],
            Command::Jl => &[
                ParamSpec { key: "samples", kind: Int { min: 1, max: 1000 }, default: Value::Int(20) },
                ParamSpec { key: "seed", kind: Int { min: 0, max: i64::MAX }, default: Value::Int(1) },
                ParamSpec { key: "margin", kind: Float { min: 1.0, max: 1e3 }, default: Value::Float(2.0) },
                ParamSpec { key: "grid", kind: Int { min: 16, max: 1 << 14 }, default: Value::Int(256) },
            ],
            Command::Gordon => &[
                ParamSpec { key: "grid", kind: Int { min: 16, max: 1 << 14 }, default: Value::Int(64) },
                ParamSpec { key: "q_max", kind: Int { min: 1, max: 1 << 20 }, default: Value::Int(10_000) },
                ParamSpec { key: "cf_depth", kind: Int { min: 1, max: 256 }, default: Value::Int(64) },
                ParamSpec { key: "phases", kind: Int { min: 1, max: 256 }, default: Value::Int(8) },
            ],
            Command::Suite => &[GRID, PHASES],
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamKind {
    Int { min: i64, max: i64 },
    Float { min: f64, max: f64 },
    Choice(&'static [&'static str]),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(&'static str),
}

impl Value {
    fn canonical(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Float(v) => v.to_string(),
            Value::Text(v) => v.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamSpec {
    pub key: &'static str,
    pub kind: ParamKind,
    pub default: Value,
}

/// A config diagnostic; `line` and `column` are 1-based, both 0 when no position applies.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{}{message}", position(*line, *column))]
pub struct ConfigError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

fn position(line: usize, column: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!("line {line}, column {column}: ")
    }
}

impl ConfigError {
    fn at(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self { line, column, message: message.into() }
    }

    fn general(message: impl Into<String>) -> Self {
        Self { line: 0, column: 0, message: message.into() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub model: VerblunskyModel,
    /// Every parameter of the command's schema, defaults filled in.
    pub params: BTreeMap<&'static str, Value>,
    /// Not hashed: the output location does not change results.
    pub out: Option<String>,
    /// Not hashed: results are independent of the worker count.
    pub threads: Option<usize>,
}

const MODEL_KEYS: [&str; 3] = ["lambda", "omega", "radius"];

/// Parses and validates a config; `command` overrides or must match the file's `command` key.
pub fn validate(text: &str, command: Option<Command>) -> Result<ExperimentConfig, ConfigError> {
    let raw_lines: Vec<&str> = text.lines().collect();
    let key_col = |line: usize| raw_lines.get(line - 1).map(|l| l.len() - l.trim_start().len() + 1).unwrap_or(1);
    let value_col = |line: usize| {
        raw_lines
            .get(line - 1)
            .and_then(|l| l.find('=').map(|i| i + 2 + l[i + 1..].len() - l[i + 1..].trim_start().len()))
            .unwrap_or(1)
    };
    let entries = parse_entries(text).map_err(|e| match e {
        szego_core::Error::Parse { line, message } => ConfigError::at(line, key_col(line), message),
        other => ConfigError::general(other.to_string()),
    })?;
    let mut model_entries: Vec<Entry> = Vec::new();
    let mut file_command = None;
    let mut out = None;
    let mut threads = None;
    let mut rest: Vec<&Entry> = Vec::new();
    for e in &entries {
        match e.key.as_str() {
            k if MODEL_KEYS.contains(&k) || k.starts_with("h.") => model_entries.push(e.clone()),
            "command" => {
                file_command = Some(
                    Command::parse(&e.value)
                        .ok_or_else(|| ConfigError::at(e.line, value_col(e.line), format!("unknown command `{}`", e.value)))?,
                )
            }
            "out" => out = Some(e.value.clone()),
            "threads" => {
                let t: usize = e.value.parse().ok().filter(|&t| (1..=1024).contains(&t)).ok_or_else(|| {
                    ConfigError::at(e.line, value_col(e.line), format!("`threads` must be an integer in [1, 1024], got `{}`", e.value))
                })?;
                threads = Some(t);
            }
            _ => rest.push(e),
        }
    }
    let command = match (command, file_command) {
        (Some(a), Some(b)) if a != b => {
            return Err(ConfigError::general(format!("command `{a}` does not match the config's `command = {b}`")))
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => return Err(ConfigError::general("no command given on the command line or as `command = ...`")),
    };
    let schema = command.schema();
    let mut params: BTreeMap<&'static str, Value> = schema.iter().map(|p| (p.key, p.default)).collect();
    for e in rest {
        let spec = schema.iter().find(|p| p.key == e.key).ok_or_else(|| {
            let known: Vec<&str> = schema.iter().map(|p| p.key).collect();
            ConfigError::at(e.line, key_col(e.line), format!("unknown key `{}` for command `{command}` (accepted: {})", e.key, known.join(", ")))
        })?;
        let bad = |msg: String| ConfigError::at(e.line, value_col(e.line), msg);
        let value = match spec.kind {
            ParamKind::Int { min, max } => {
                let v: i64 = e.value.parse().map_err(|_| bad(format!("`{}` must be an integer, got `{}`", e.key, e.value)))?;
                if !(min..=max).contains(&v) {
                    return Err(bad(format!("`{}` = {v} is outside [{min}, {max}]", e.key)));
                }
                Value::Int(v)
            }
            ParamKind::Float { min, max } => {
                let v: f64 = e
                    .value
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| bad(format!("`{}` must be a finite number, got `{}`", e.key, e.value)))?;
                if !(min..=max).contains(&v) {
                    return Err(bad(format!("`{}` = {v} is outside [{min}, {max}]", e.key)));
                }
                Value::Float(v)
            }
            ParamKind::Choice(options) => {
                let v = options
                    .iter()
                    .find(|o| **o == e.value)
                    .ok_or_else(|| bad(format!("`{}` must be one of {}, got `{}`", e.key, options.join(", "), e.value)))?;
                Value::Text(v)
            }
        };
        params.insert(spec.key, value);
    }
    let model = VerblunskyModel::from_entries(&model_entries).map_err(|e| match e {
        szego_core::Error::Parse { line, message } => ConfigError::at(line, value_col(line), message),
        szego_core::Error::InvalidModel(message) => {
            let line = model_entries.iter().find(|e| e.key == "lambda" && message.contains("lambda =")).map(|e| e.line);
            match line {
                Some(l) => ConfigError::at(l, value_col(l), message),
                None => ConfigError::general(message),
            }
        }
        other => ConfigError::general(other.to_string()),
    })?;
    if let (Command::Holder, Some(Value::Float(lo)), Some(Value::Float(hi))) = (command, params.get("eps_min"), params.get("eps_max")) {
        if lo >= hi {
            return Err(ConfigError::general(format!("`eps_min` = {lo} must be below `eps_max` = {hi}")));
        }
    }
    if command == Command::Gordon && model.dim() != 1 {
        return Err(ConfigError::general("`gordon` needs a one-frequency model"));
    }
    Ok(ExperimentConfig { command, model, params, out, threads })
}

impl ExperimentConfig {
    /// Sorted `key = value` lines of everything that determines the results.
    pub fn canonical_text(&self) -> String {
        let mut lines = self.model.canonical_lines();
        lines.push(format!("command = {}", self.command));
        for (k, v) in &self.params {
            lines.push(format!("{k} = {}", v.canonical()));
        }
        lines.sort();
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }

    pub fn int(&self, key: &str) -> i64 {
        match self.params.get(key) {
            Some(Value::Int(v)) => *v,
            other => panic!("parameter `{key}` is not an integer: {other:?}"),
        }
    }

    pub fn usize(&self, key: &str) -> usize {
        self.int(key) as usize
    }

    pub fn float(&self, key: &str) -> f64 {
        match self.params.get(key) {
            Some(Value::Float(v)) => *v,
            other => panic!("parameter `{key}` is not a number: {other:?}"),
        }
    }

    pub fn text(&self, key: &str) -> &'static str {
        match self.params.get(key) {
            Some(Value::Text(v)) => v,
            other => panic!("parameter `{key}` is not a choice: {other:?}"),
        }
    }
}
