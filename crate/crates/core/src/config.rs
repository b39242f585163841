//! Flat `key = value` configuration files.
//!
//! One dotted key per line, `#` starts a comment, blank lines are ignored.
//! Every key is checked against a fixed table that also fixes its value
//! type, so typos and malformed values surface before a run starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::acquisition::{AcquisitionFamily, KappaSchedule};
use crate::driver::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::space::Bounds;

/// Environment variable consulted for the default output directory.
pub const OUTPUT_DIR_ENV: &str = "ASYBO_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Float,
    Int,
    Bool,
    Text,
    Floats,
    Ints,
    /// `lo:hi`
    Range,
    /// `lo:hi, lo:hi, ...`
    Ranges,
}

impl Kind {
    fn describe(self) -> &'static str {
        match self {
            Kind::Float => "a number",
            Kind::Int => "a non-negative integer",
            Kind::Bool => "true or false",
            Kind::Text => "text",
            Kind::Floats => "a comma-separated list of numbers",
            Kind::Ints => "a comma-separated list of integers",
            Kind::Range => "a range `lo:hi`",
            Kind::Ranges => "comma-separated ranges `lo:hi, lo:hi, ...`",
        }
    }
}

const KEYS: &[(&str, Kind)] = &[
    ("kernel.family", Kind::Text),
    ("kernel.length_scale", Kind::Floats),
    ("kernel.gamma", Kind::Float),
    ("kernel.alpha", Kind::Float),
    ("kernel.jitter", Kind::Float),
    ("acq.family", Kind::Text),
    ("acq.schedule", Kind::Text),
    ("acq.kappa0", Kind::Float),
    ("acq.decay", Kind::Float),
    ("acq.batch_k", Kind::Int),
    ("acqopt.n_starts", Kind::Int),
    ("acqopt.max_evals", Kind::Int),
    ("acqopt.tol", Kind::Float),
    ("hyper.enabled", Kind::Bool),
    ("hyper.gate_n", Kind::Int),
    ("hyper.scale_bounds", Kind::Range),
    ("hyper.budget", Kind::Int),
    ("hyper.grid_points", Kind::Int),
    ("evaluator.max_simultaneous", Kind::Int),
    ("evaluator.blocking_fraction", Kind::Float),
    ("evaluator.max_attempts", Kind::Int),
    ("evaluator.poll_interval_ms", Kind::Float),
    ("run.bounds", Kind::Ranges),
    ("run.n_init", Kind::Int),
    ("run.batch_k", Kind::Int),
    ("run.max_evals", Kind::Int),
    ("run.seed", Kind::Int),
    ("run.mode", Kind::Text),
    ("run.checkpoint_every", Kind::Int),
    ("run.checkpoint_path", Kind::Text),
    ("run.grid_points", Kind::Int),
    ("run.objective", Kind::Text),
    ("run.dim", Kind::Int),
    ("run.command", Kind::Text),
    ("run.latency_mean", Kind::Float),
    ("run.latency_std", Kind::Float),
    ("run.failure_rate", Kind::Float),
    ("study.realizations", Kind::Int),
    ("study.fractions", Kind::Floats),
    ("study.iterations", Kind::Int),
    ("study.ks", Kind::Ints),
    ("study.latency_mean", Kind::Float),
    ("study.latency_std", Kind::Float),
];

/// Keys that do not map onto [`RunConfig`] fields; they ride along in
/// `RunConfig::extra` so checkpoints remember how the run was wired.
const EXTRA_PREFIXES: &[&str] = &[
    "run.objective",
    "run.dim",
    "run.command",
    "run.latency_mean",
    "run.latency_std",
    "run.failure_rate",
    "study.",
];

fn kind_of(key: &str) -> Option<Kind> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, kind)| *kind)
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_float(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|f| !f.is_nan())
        .ok_or_else(|| config_err(format!("`{key}`: expected {}, got `{v}`", Kind::Float.describe())))
}

fn parse_int(key: &str, v: &str) -> Result<u64> {
    v.trim()
        .parse::<u64>()
        .map_err(|_| config_err(format!("`{key}`: expected {}, got `{v}`", Kind::Int.describe())))
}

fn parse_list<T>(key: &str, v: &str, kind: Kind, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    let items: Option<Vec<T>> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect();
    match items {
        Some(list) if !list.is_empty() => Ok(list),
        _ => Err(config_err(format!("`{key}`: expected {}, got `{v}`", kind.describe()))),
    }
}

fn parse_range_item(s: &str) -> Option<(f64, f64)> {
    let (a, b) = s.split_once(':')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn check_value(key: &str, kind: Kind, v: &str) -> Result<()> {
    match kind {
        Kind::Float => parse_float(key, v).map(drop),
        Kind::Int => parse_int(key, v).map(drop),
        Kind::Bool => parse_bool(key, v).map(drop),
        Kind::Text => {
            if v.trim().is_empty() {
                Err(config_err(format!("`{key}`: value is empty")))
            } else {
                Ok(())
            }
        }
        Kind::Floats => parse_list(key, v, kind, |s| s.parse::<f64>().ok()).map(drop),
        Kind::Ints => parse_list(key, v, kind, |s| s.parse::<usize>().ok()).map(drop),
        Kind::Range => {
            let list = parse_list(key, v, kind, parse_range_item)?;
            if list.len() != 1 {
                return Err(config_err(format!("`{key}`: expected {}, got `{v}`", kind.describe())));
            }
            Ok(())
        }
        Kind::Ranges => parse_list(key, v, kind, parse_range_item).map(drop),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(config_err(format!("`{key}`: expected {}, got `{v}`", Kind::Bool.describe()))),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = FlatConfig::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                config_err(format!("line {}: expected `key = value`, got `{}`", i + 1, raw.trim()))
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| config_err(format!("line {}: {}", i + 1, strip_prefix(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            config_err(format!("cannot read config file {}: {e}", path.display()))
        })?;
        Self::parse(&text).map_err(|e| config_err(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let kind = kind_of(key).ok_or_else(|| config_err(format!("unknown key `{key}`")))?;
        check_value(key, kind, value)?;
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Apply a `key=value` override string.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| config_err(format!("override `{spec}` is not of the form key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get_float(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| parse_float(key, v)).transpose()
    }

    pub fn get_int(&self, key: &str) -> Result<Option<u64>> {
        self.get(key).map(|v| parse_int(key, v)).transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.get_int(key)?.map(|v| v as usize))
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key).map(|v| parse_bool(key, v)).transpose()
    }

    pub fn get_floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| parse_list(key, v, Kind::Floats, |s| s.parse::<f64>().ok()))
            .transpose()
    }

    pub fn get_ints(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.get(key)
            .map(|v| parse_list(key, v, Kind::Ints, |s| s.parse::<usize>().ok()))
            .transpose()
    }

    fn get_ranges(&self, key: &str) -> Result<Option<Vec<(f64, f64)>>> {
        self.get(key)
            .map(|v| parse_list(key, v, Kind::Ranges, parse_range_item))
            .transpose()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Build and validate a run configuration. `default_bounds` is used when
    /// the file has no `run.bounds` (benchmark objectives bring their own
    /// domain).
    pub fn to_run_config(&self, default_bounds: Option<Bounds>) -> Result<RunConfig> {
        let bounds = match self.get_ranges("run.bounds")? {
            Some(r) => {
                let (lo, hi): (Vec<f64>, Vec<f64>) = r.into_iter().unzip();
                Bounds::new(lo, hi).map_err(|e| config_err(format!("`run.bounds`: {}", strip_prefix(&e))))?
            }
            None => default_bounds.ok_or_else(|| config_err("`run.bounds` is required"))?,
        };
        let d = bounds.dim();
        let mut c = RunConfig::new(bounds);
        let wrap = |key: &str, e: Error| config_err(format!("`{key}`: {}", strip_prefix(&e)));

        // kernel
        let family = match self.get("kernel.family") {
            Some(s) => s.parse::<KernelFamily>().map_err(|e| wrap("kernel.family", e))?,
            None => c.kernel.family(),
        };
        let scales = self.get_floats("kernel.length_scale")?.unwrap_or_else(|| c.kernel.length_scale().as_vec());
        let mut kernel = KernelSpec::new(family, 1.0)
            .and_then(|k| k.set_length_scale(&scales))
            .and_then(|k| k.with_dim(d))
            .map_err(|e| wrap("kernel.length_scale", e))?;
        if let Some(g) = self.get_float("kernel.gamma")? {
            kernel = kernel.with_gamma(g).map_err(|e| wrap("kernel.gamma", e))?;
        }
        if let Some(a) = self.get_float("kernel.alpha")? {
            kernel = kernel.with_alpha(a).map_err(|e| wrap("kernel.alpha", e))?;
        }
        c.kernel = kernel;
        if let Some(j) = self.get_float("kernel.jitter")? {
            c.jitter = j;
        }

        // acquisition
        if let Some(s) = self.get("acq.family") {
            c.acq.family = s.parse::<AcquisitionFamily>().map_err(|e| wrap("acq.family", e))?;
        }
        let (mut kappa0, mut decay) = match c.acq.schedule {
            KappaSchedule::Constant(k) => (k, 1.0),
            KappaSchedule::Annealing { kappa0, decay } => (kappa0, decay),
        };
        kappa0 = self.get_float("acq.kappa0")?.unwrap_or(kappa0);
        decay = self.get_float("acq.decay")?.unwrap_or(decay);
        c.acq.schedule = match self.get("acq.schedule").unwrap_or("annealing") {
            "constant" => KappaSchedule::Constant(kappa0),
            "annealing" => KappaSchedule::Annealing { kappa0, decay },
            other => {
                return Err(config_err(format!(
                    "`acq.schedule`: expected `constant` or `annealing`, got `{other}`"
                )))
            }
        };
        // run.batch_k wins over acq.batch_k when both are given
        if let Some(k) = self.get_usize("acq.batch_k")? {
            c.batch_k = k;
        }
        if let Some(k) = self.get_usize("run.batch_k")? {
            c.batch_k = k;
        }

        // acquisition optimizer
        if let Some(n) = self.get_usize("acqopt.n_starts")? {
            c.acqopt.n_starts = Some(n);
        }
        if let Some(n) = self.get_usize("acqopt.max_evals")? {
            c.acqopt.max_evals = n;
        }
        if let Some(t) = self.get_float("acqopt.tol")? {
            c.acqopt.tol = t;
        }

        // hyperparameters
        if let Some(b) = self.get_bool("hyper.enabled")? {
            c.hyper.enabled = b;
        }
        if let Some(n) = self.get_usize("hyper.gate_n")? {
            c.hyper.gate_n = Some(n);
        }
        if let Some(r) = self.get_ranges("hyper.scale_bounds")? {
            c.hyper.scale_bounds = r[0];
        }
        if let Some(n) = self.get_usize("hyper.budget")? {
            c.hyper.budget = n;
        }
        if let Some(n) = self.get_usize("hyper.grid_points")? {
            c.hyper.grid_points = n;
        }

        // evaluator
        if let Some(n) = self.get_usize("evaluator.max_simultaneous")? {
            c.evaluator.max_simultaneous = n;
        }
        if let Some(f) = self.get_float("evaluator.blocking_fraction")? {
            c.evaluator.blocking_fraction = f;
        }
        if let Some(n) = self.get_int("evaluator.max_attempts")? {
            c.evaluator.max_attempts = n as u32;
        }
        if let Some(ms) = self.get_float("evaluator.poll_interval_ms")? {
            if ms < 0.0 || !ms.is_finite() {
                return Err(config_err("`evaluator.poll_interval_ms`: must be non-negative"));
            }
            c.evaluator.poll_interval = Duration::from_nanos((ms * 1e6).round() as u64);
        }

        // run
        if let Some(n) = self.get_usize("run.n_init")? {
            c.n_init = n;
        }
        if let Some(n) = self.get_usize("run.max_evals")? {
            c.max_evals = n;
        }
        if let Some(s) = self.get_int("run.seed")? {
            c.seed = s;
        }
        if let Some(m) = self.get("run.mode") {
            c.mode = m.parse::<Mode>().map_err(|e| wrap("run.mode", e))?;
        }
        if let Some(n) = self.get_int("run.checkpoint_every")? {
            c.checkpoint_every = n;
        }
        if let Some(p) = self.get("run.checkpoint_path") {
            c.checkpoint_path = Some(PathBuf::from(p));
        }
        if let Some(n) = self.get_usize("run.grid_points")? {
            c.grid_points = n;
        }
        c.extra = self
            .entries()
            .filter(|(k, _)| EXTRA_PREFIXES.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();

        c.validate().map_err(|e| config_err(strip_prefix(&e)))?;
        Ok(c)
    }
}

/// Render every setting of `c` as flat entries; parsing the result with
/// [`FlatConfig::to_run_config`] gives back `c`.
pub fn run_config_entries(c: &RunConfig) -> Vec<(String, String)> {
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ");
    let mut out: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| out.push((k.to_string(), v));

    put("kernel.family", c.kernel.family().name().to_string());
    put("kernel.length_scale", join(&c.kernel.length_scale().as_vec()));
    put("kernel.gamma", format!("{:e}", c.kernel.gamma()));
    put("kernel.alpha", format!("{:e}", c.kernel.alpha()));
    put("kernel.jitter", format!("{:e}", c.jitter));
    put("acq.family", c.acq.family.to_string());
    match c.acq.schedule {
        KappaSchedule::Constant(k) => {
            put("acq.schedule", "constant".into());
            put("acq.kappa0", format!("{k:e}"));
        }
        KappaSchedule::Annealing { kappa0, decay } => {
            put("acq.schedule", "annealing".into());
            put("acq.kappa0", format!("{kappa0:e}"));
            put("acq.decay", format!("{decay:e}"));
        }
    }
    if let Some(n) = c.acqopt.n_starts {
        put("acqopt.n_starts", n.to_string());
    }
    put("acqopt.max_evals", c.acqopt.max_evals.to_string());
    put("acqopt.tol", format!("{:e}", c.acqopt.tol));
    put("hyper.enabled", c.hyper.enabled.to_string());
    if let Some(n) = c.hyper.gate_n {
        put("hyper.gate_n", n.to_string());
    }
    put(
        "hyper.scale_bounds",
        format!("{:e}:{:e}", c.hyper.scale_bounds.0, c.hyper.scale_bounds.1),
    );
    put("hyper.budget", c.hyper.budget.to_string());
    put("hyper.grid_points", c.hyper.grid_points.to_string());
    put("evaluator.max_simultaneous", c.evaluator.max_simultaneous.to_string());
    put("evaluator.blocking_fraction", format!("{:e}", c.evaluator.blocking_fraction));
    put("evaluator.max_attempts", c.evaluator.max_attempts.to_string());
    put(
        "evaluator.poll_interval_ms",
        format!("{:e}", c.evaluator.poll_interval.as_nanos() as f64 / 1e6),
    );
    let bounds = (0..c.dim())
        .map(|i| format!("{:e}:{:e}", c.bounds.lo()[i], c.bounds.hi()[i]))
        .collect::<Vec<_>>()
        .join(", ");
    put("run.bounds", bounds);
    put("run.n_init", c.n_init.to_string());
    put("run.batch_k", c.batch_k.to_string());
    put("run.max_evals", c.max_evals.to_string());
    put("run.seed", c.seed.to_string());
    put("run.mode", c.mode.to_string());
    put("run.checkpoint_every", c.checkpoint_every.to_string());
    if let Some(p) = &c.checkpoint_path {
        put("run.checkpoint_path", p.display().to_string());
    }
    put("run.grid_points", c.grid_points.to_string());
    for (k, v) in &c.extra {
        put(k, v.clone());
    }
    out.sort();
    out
}

pub fn flat_from_run_config(c: &RunConfig) -> Result<FlatConfig> {
    let mut f = FlatConfig::new();
    for (k, v) in run_config_entries(c) {
        f.set(&k, &v)?;
    }
    Ok(f)
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        Error::InvalidArgument(m) => m.clone(),
        other => other.to_string(),
    }
}
