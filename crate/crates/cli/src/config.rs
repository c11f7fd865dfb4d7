//! Experiment configuration: flat `key = value` text or JSON, both mapped
//! onto [`ExperimentConfig`].

use std::collections::BTreeMap;
use std::path::Path;

use s3_core::{BuiltinMap, BuiltinObservable, DEFAULT_K_GRID};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("field `{field}`: {msg}")]
    Field { field: String, msg: String },
}

fn field_err(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Run,
    Sweep,
    Converge,
    Scaling,
    Lyapunov,
    Fd,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Run => "run",
            Mode::Sweep => "sweep",
            Mode::Converge => "converge",
            Mode::Scaling => "scaling",
            Mode::Lyapunov => "lyapunov",
            Mode::Fd => "fd",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Which parameter the scaling mode varies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingAxis {
    #[default]
    N,
    K,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub map: String,
    /// Base parameters; the experiment runs at `params + s * perturb_dir`.
    pub params: Option<Vec<f64>>,
    pub perturb_dir: Option<Vec<f64>>,
    pub s: f64,
    pub observable: Option<String>,
    /// Trajectory length `N`, warm-up included.
    #[serde(deserialize_with = "count")]
    pub n: usize,
    /// Warm-up `T`.
    #[serde(deserialize_with = "count")]
    pub t: usize,
    #[serde(deserialize_with = "counts")]
    pub k_grid: Vec<usize>,
    /// Forced truncation; the heuristic picks one when absent.
    #[serde(deserialize_with = "opt_count")]
    pub k: Option<usize>,
    #[serde(deserialize_with = "count")]
    pub batches: usize,
    pub seeds: Vec<u64>,
    pub deterministic_init: bool,
    pub center: bool,
    pub sweep: Vec<f64>,
    pub scaling: ScalingAxis,
    #[serde(deserialize_with = "counts")]
    pub scaling_n: Vec<usize>,
    /// Fixed reference value for sweep/scaling; computed by finite
    /// differences when absent.
    pub reference: Option<f64>,
    pub delta_s: f64,
    #[serde(deserialize_with = "count")]
    pub n_fd: usize,
    pub fd_seed: u64,
    #[serde(deserialize_with = "count")]
    pub fd_chains: usize,
    /// Reference is `(4 D(δs) − D(2δs)) / 3` instead of `D(δs)`.
    pub richardson: bool,
    pub seed_pair: [u64; 2],
    #[serde(deserialize_with = "count")]
    pub converge_steps: usize,
    pub vary_q0: bool,
    #[serde(deserialize_with = "opt_count")]
    pub workers: Option<usize>,
    pub format: Format,
    pub out: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: None,
            map: String::new(),
            params: None,
            perturb_dir: None,
            s: 0.0,
            observable: None,
            n: 1_000_000,
            t: 100,
            k_grid: DEFAULT_K_GRID.to_vec(),
            k: None,
            batches: 100,
            seeds: vec![0],
            deterministic_init: false,
            center: false,
            sweep: Vec::new(),
            scaling: ScalingAxis::N,
            scaling_n: vec![10_000, 100_000, 1_000_000, 10_000_000],
            reference: None,
            delta_s: 0.01,
            n_fd: 100_000_000,
            fd_seed: 0,
            fd_chains: 1,
            richardson: false,
            seed_pair: [1, 2],
            converge_steps: 300,
            vary_q0: false,
            workers: None,
            format: Format::Csv,
            out: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Num {
    Int(u64),
    Float(f64),
}

fn to_count<E: serde::de::Error>(n: Num) -> Result<usize, E> {
    match n {
        Num::Int(v) => Ok(v as usize),
        Num::Float(v) if v >= 0.0 && v.fract() == 0.0 && v < 1e18 => Ok(v as usize),
        Num::Float(v) => Err(E::custom(format!(
            "expected a non-negative integer, got {v}"
        ))),
    }
}

fn count<'de, D: Deserializer<'de>>(d: D) -> Result<usize, D::Error> {
    to_count(Num::deserialize(d)?)
}

fn opt_count<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
    Option::<Num>::deserialize(d)?.map(to_count).transpose()
}

fn counts<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
    Vec::<Num>::deserialize(d)?
        .into_iter()
        .map(to_count)
        .collect()
}

/// Parses config text, detecting JSON by a leading `{`.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let value = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
            line: e.line(),
            msg: e.to_string(),
        })?
    } else {
        ini_to_json(text)?
    };
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        if path == "." {
            ConfigError::Syntax {
                line: 0,
                msg: inner,
            }
        } else {
            field_err(&path, inner)
        }
    })?;
    Ok(cfg)
}

pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}

/// Keys whose single-value INI form means a one-element list.
const LIST_KEYS: [&str; 7] = [
    "params",
    "perturb_dir",
    "k_grid",
    "seeds",
    "sweep",
    "scaling_n",
    "seed_pair",
];

/// Flat `key = value` lines. `#` and `;` start comments, `[section]` lines are
/// ignored. Values are booleans, numbers, comma-separated or bracketed lists,
/// or strings.
fn ini_to_json(text: &str) -> Result<Value, ConfigError> {
    let mut map = serde_json::Map::new();
    let mut seen = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']') && !line.contains('='))
        {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: line_no,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim().to_ascii_lowercase();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: line_no,
                msg: "empty key".into(),
            });
        }
        if let Some(prev) = seen.insert(key.clone(), line_no) {
            return Err(ConfigError::Syntax {
                line: line_no,
                msg: format!("duplicate key `{key}` (first set on line {prev})"),
            });
        }
        let mut v = ini_value(value.trim(), line_no)?;
        if LIST_KEYS.contains(&key.as_str()) && !v.is_array() && !v.is_null() {
            v = Value::Array(vec![v]);
        }
        map.insert(key, v);
    }
    Ok(Value::Object(map))
}

fn ini_value(v: &str, line: usize) -> Result<Value, ConfigError> {
    if v.starts_with('[') {
        return serde_json::from_str(v).map_err(|e| ConfigError::Syntax {
            line,
            msg: format!("bad list `{v}`: {e}"),
        });
    }
    if v.contains(',') {
        return Ok(Value::Array(
            v.split(',').map(|p| ini_scalar(p.trim())).collect(),
        ));
    }
    Ok(ini_scalar(v))
}

fn ini_scalar(v: &str) -> Value {
    if let Some(s) = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')) {
        return Value::String(s.to_string());
    }
    match v {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        "" | "none" | "null" => return Value::Null,
        _ => {}
    }
    if let Ok(i) = v.parse::<u64>() {
        return Value::from(i);
    }
    if let Ok(i) = v.parse::<i64>() {
        return Value::from(i);
    }
    match v.parse::<f64>() {
        Ok(f) if f.is_finite() => Value::from(f),
        _ => Value::String(v.to_string()),
    }
}

impl ExperimentConfig {
    /// Fills map-dependent defaults and checks every invariant.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        if self.map.is_empty() {
            return Err(field_err(
                "map",
                format!("required, one of {:?}", BuiltinMap::<f64>::NAMES),
            ));
        }
        let np = BuiltinMap::<f64>::param_count(&self.map).ok_or_else(|| {
            field_err(
                "map",
                format!(
                    "unknown map `{}`, expected one of {:?}",
                    self.map,
                    BuiltinMap::<f64>::NAMES
                ),
            )
        })?;
        let params = self.params.take().unwrap_or_else(|| vec![0.0; np]);
        let dir = self.perturb_dir.take().unwrap_or_else(|| match np {
            4 => vec![1.0, 1.0, 0.0, 0.0],
            _ => vec![1.0; np],
        });
        for (name, v) in [("params", &params), ("perturb_dir", &dir)] {
            if v.len() != np {
                return Err(field_err(
                    name,
                    format!("map `{}` takes {np} values, got {}", self.map, v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(field_err(name, "values must be finite"));
            }
        }
        self.params = Some(params);
        self.perturb_dir = Some(dir);

        let obs = self
            .observable
            .take()
            .unwrap_or_else(|| match self.map.as_str() {
                "baker" => "cos4x2".into(),
                _ => "sin_cos4x2_x3".into(),
            });
        BuiltinObservable::from_name(&obs).map_err(|e| field_err("observable", e.to_string()))?;
        self.observable = Some(obs);

        if self.t == 0 {
            return Err(field_err("t", "warm-up must be at least 1"));
        }
        if self.k_grid.is_empty() || self.k_grid.contains(&0) {
            return Err(field_err(
                "k_grid",
                "must be a non-empty list of positive integers",
            ));
        }
        self.k_grid.sort_unstable();
        self.k_grid.dedup();
        if let Some(k) = self.k {
            if !self.k_grid.contains(&k) {
                return Err(field_err(
                    "k",
                    format!("{k} is not in k_grid {:?}", self.k_grid),
                ));
            }
        }
        let k_max = self.k_max();
        if self.n <= self.t + k_max {
            return Err(field_err(
                "n",
                format!(
                    "n ({}) must exceed t ({}) + max(k_grid) ({k_max})",
                    self.n, self.t
                ),
            ));
        }
        if let Some(&bad) = self.scaling_n.iter().find(|&&n| n <= self.t + k_max) {
            return Err(field_err(
                "scaling_n",
                format!("{bad} must exceed t ({}) + max(k_grid) ({k_max})", self.t),
            ));
        }
        if self.seeds.is_empty() {
            return Err(field_err("seeds", "must not be empty"));
        }
        if self.sweep.windows(2).any(|w| w[0] >= w[1]) || self.sweep.iter().any(|x| !x.is_finite())
        {
            return Err(field_err("sweep", "must be strictly increasing and finite"));
        }
        if self.mode == Some(Mode::Sweep) && self.sweep.is_empty() {
            return Err(field_err("sweep", "sweep mode needs at least one value"));
        }
        if self.mode == Some(Mode::Scaling)
            && self.scaling == ScalingAxis::N
            && self.scaling_n.len() < 2
        {
            return Err(field_err(
                "scaling_n",
                "N-scaling needs at least two values",
            ));
        }
        if !(self.delta_s > 0.0 && self.delta_s.is_finite()) {
            return Err(field_err("delta_s", "must be positive"));
        }
        if !self.s.is_finite() {
            return Err(field_err("s", "must be finite"));
        }
        if self.n_fd <= self.t {
            return Err(field_err(
                "n_fd",
                format!("n_fd ({}) must exceed t ({})", self.n_fd, self.t),
            ));
        }
        if self.batches < 2 {
            return Err(field_err("batches", "need at least 2 batches"));
        }
        if self.fd_chains == 0 || !self.batches.is_multiple_of(self.fd_chains) {
            return Err(field_err(
                "fd_chains",
                format!("must divide batches ({})", self.batches),
            ));
        }
        if self.converge_steps == 0 {
            return Err(field_err("converge_steps", "must be positive"));
        }
        if self.workers == Some(0) {
            return Err(field_err("workers", "must be positive"));
        }
        if let Some(r) = self.reference {
            if !r.is_finite() || r == 0.0 {
                return Err(field_err("reference", "must be finite and non-zero"));
            }
        }
        Ok(self)
    }

    pub fn k_max(&self) -> usize {
        self.k_grid.iter().copied().max().unwrap_or(0)
    }

    /// Parameters at offset `s` along the perturbation direction.
    pub fn params_at(&self, s: f64) -> Vec<f64> {
        let p = self.params.as_deref().unwrap_or(&[]);
        let d = self.perturb_dir.as_deref().unwrap_or(&[]);
        p.iter().zip(d).map(|(p, d)| p + s * d).collect()
    }
}
