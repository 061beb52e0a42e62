//! Flat `key = value` run configuration.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Keys missing from the file keep their defaults. Unknown or repeated keys
//! are errors.
//!
//! | key | value |
//! |-----|-------|
//! | `backend` | `ris-rp`, `ris-pcr`, `sparse-ris-rp` |
//! | `delta` | number `>= 0` or `auto` |
//! | `replicates` | integer `>= 1` |
//! | `m` | fixed compression dimension (sets both bounds) |
//! | `m_min`, `m_max` | inclusive range for `m` |
//! | `psi` | fixed projection sparsity (sets both bounds) |
//! | `psi_min`, `psi_max` | range for `psi` |
//! | `kappa` | sparse projection exponent in `(0, 1)` |
//! | `a_sigma`, `b_sigma`, `theta_scale` | prior hyperparameters |
//! | `aggregation` | `average`, `model-average`, `cv` |
//! | `interval_aggregation` | `endpoints`, `mixture-quantile` |
//! | `k_folds` | integer `>= 2` |
//! | `level` | interval level in `(0, 1)` |
//! | `seed` | unsigned 64-bit integer |
//! | `center_y` | `true` / `false` |
//! | `gibbs_iterations`, `gibbs_burnin` | probit chain length |
//! | `probit_predictive_average` | `true` / `false` |
//! | `workers` | integer, 0 = all cores |
//! | `keep_replicates` | `true` / `false` |

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::ensemble::TarpConfig;
use crate::error::{Result, TarpError};

pub const KNOWN_KEYS: &[&str] = &[
    "backend",
    "delta",
    "replicates",
    "m",
    "m_min",
    "m_max",
    "psi",
    "psi_min",
    "psi_max",
    "kappa",
    "a_sigma",
    "b_sigma",
    "theta_scale",
    "aggregation",
    "interval_aggregation",
    "k_folds",
    "level",
    "seed",
    "center_y",
    "gibbs_iterations",
    "gibbs_burnin",
    "probit_predictive_average",
    "workers",
    "keep_replicates",
];

/// Raw entries with the line each came from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigEntries {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigEntries {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Splits the document into entries without interpreting values.
pub fn parse_entries(text: &str) -> Result<ConfigEntries> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| TarpError::Config {
            line,
            message: format!("expected key = value, got '{content}'"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(TarpError::Config {
                line,
                message: "empty key".into(),
            });
        }
        if !KNOWN_KEYS.contains(&key) {
            return Err(TarpError::Config {
                line,
                message: format!("unknown key '{key}'"),
            });
        }
        if let Some((first, _)) = entries.get(key) {
            return Err(TarpError::Config {
                line,
                message: format!("key '{key}' already set on line {first}"),
            });
        }
        entries.insert(key.to_string(), (line, value.to_string()));
    }
    Ok(ConfigEntries { entries })
}

fn typed<T: FromStr>(entries: &ConfigEntries, key: &str, what: &str) -> Result<Option<T>> {
    match entries.entries.get(key) {
        None => Ok(None),
        Some((line, v)) => v.parse::<T>().map(Some).map_err(|_| TarpError::Config {
            line: *line,
            message: format!("'{key}' expects {what}, got '{v}'"),
        }),
    }
}

/// Parses through the target type's own `FromStr`, keeping its message.
fn parsed<T: FromStr<Err = TarpError>>(entries: &ConfigEntries, key: &str) -> Result<Option<T>> {
    match entries.entries.get(key) {
        None => Ok(None),
        Some((line, v)) => v.parse::<T>().map(Some).map_err(|e| TarpError::Config {
            line: *line,
            message: e.to_string(),
        }),
    }
}

fn line_of(entries: &ConfigEntries, key: &str) -> usize {
    entries.entries.get(key).map(|(l, _)| *l).unwrap_or(0)
}

/// Applies the entries on top of `base`.
pub fn apply_entries(entries: &ConfigEntries, base: &TarpConfig) -> Result<TarpConfig> {
    let mut cfg = base.clone();
    if let Some(v) = parsed(entries, "backend")? {
        cfg.backend = v;
    }
    if let Some(v) = parsed(entries, "delta")? {
        cfg.delta = v;
    }
    if let Some(v) = typed(entries, "replicates", "a positive integer")? {
        cfg.n_replicates = v;
    }

    let m: Option<usize> = typed(entries, "m", "a positive integer")?;
    let m_min: Option<usize> = typed(entries, "m_min", "a positive integer")?;
    let m_max: Option<usize> = typed(entries, "m_max", "a positive integer")?;
    match (m, m_min, m_max) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(TarpError::Config {
                line: line_of(entries, "m"),
                message: "'m' cannot be combined with 'm_min' / 'm_max'".into(),
            })
        }
        (Some(v), None, None) => cfg.m_range = Some((v, v)),
        (None, Some(lo), Some(hi)) => cfg.m_range = Some((lo, hi)),
        (None, None, None) => {}
        (None, _, _) => {
            return Err(TarpError::Config {
                line: line_of(entries, "m_min").max(line_of(entries, "m_max")),
                message: "'m_min' and 'm_max' must be given together".into(),
            })
        }
    }

    let psi: Option<f64> = typed(entries, "psi", "a number")?;
    let psi_min: Option<f64> = typed(entries, "psi_min", "a number")?;
    let psi_max: Option<f64> = typed(entries, "psi_max", "a number")?;
    if let Some(v) = psi {
        if psi_min.is_some() || psi_max.is_some() {
            return Err(TarpError::Config {
                line: line_of(entries, "psi"),
                message: "'psi' cannot be combined with 'psi_min' / 'psi_max'".into(),
            });
        }
        cfg.psi_range = (v, v);
    }
    if let Some(v) = psi_min {
        cfg.psi_range.0 = v;
    }
    if let Some(v) = psi_max {
        cfg.psi_range.1 = v;
    }

    if let Some(v) = typed(entries, "kappa", "a number")? {
        cfg.kappa = v;
    }
    if let Some(v) = typed(entries, "a_sigma", "a number")? {
        cfg.prior.a_sigma = v;
    }
    if let Some(v) = typed(entries, "b_sigma", "a number")? {
        cfg.prior.b_sigma = v;
    }
    if let Some(v) = typed(entries, "theta_scale", "a number")? {
        cfg.prior.theta_scale = v;
    }
    if let Some(v) = parsed(entries, "aggregation")? {
        cfg.aggregation = v;
    }
    if let Some(v) = parsed(entries, "interval_aggregation")? {
        cfg.interval_aggregation = v;
    }
    if let Some(v) = typed(entries, "k_folds", "an integer")? {
        cfg.k_folds = v;
    }
    if let Some(v) = typed(entries, "level", "a number")? {
        cfg.level = v;
    }
    if let Some(v) = typed(entries, "seed", "an unsigned 64-bit integer")? {
        cfg.seed = v;
    }
    if let Some(v) = typed(entries, "center_y", "true or false")? {
        cfg.center_y = v;
    }
    if let Some(v) = typed(entries, "gibbs_iterations", "an integer")? {
        cfg.gibbs.iterations = v;
    }
    if let Some(v) = typed(entries, "gibbs_burnin", "an integer")? {
        cfg.gibbs.burnin = v;
    }
    if let Some(v) = typed(entries, "probit_predictive_average", "true or false")? {
        cfg.probit_predictive_average = v;
    }
    if let Some(v) = typed(entries, "workers", "an integer")? {
        cfg.workers = v;
    }
    if let Some(v) = typed(entries, "keep_replicates", "true or false")? {
        cfg.keep_replicates = v;
    }
    cfg.validate().map_err(|e| TarpError::Config {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(cfg)
}

/// Parses a whole document on top of the defaults.
pub fn parse_config(text: &str) -> Result<TarpConfig> {
    apply_entries(&parse_entries(text)?, &TarpConfig::default())
}

/// Renders `cfg` back into the file format; parsing the output yields an
/// equal config.
pub fn render_config(cfg: &TarpConfig) -> String {
    let mut out = String::new();
    let mut put = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    put("backend", cfg.backend.name().into());
    put("delta", cfg.delta.to_string());
    put("replicates", cfg.n_replicates.to_string());
    if let Some((lo, hi)) = cfg.m_range {
        put("m_min", lo.to_string());
        put("m_max", hi.to_string());
    }
    put("psi_min", format!("{:?}", cfg.psi_range.0));
    put("psi_max", format!("{:?}", cfg.psi_range.1));
    put("kappa", format!("{:?}", cfg.kappa));
    put("a_sigma", format!("{:?}", cfg.prior.a_sigma));
    put("b_sigma", format!("{:?}", cfg.prior.b_sigma));
    put("theta_scale", format!("{:?}", cfg.prior.theta_scale));
    put("aggregation", cfg.aggregation.name().into());
    put(
        "interval_aggregation",
        match cfg.interval_aggregation {
            crate::ensemble::IntervalAggregation::Endpoints => "endpoints".into(),
            crate::ensemble::IntervalAggregation::MixtureQuantile => "mixture-quantile".into(),
        },
    );
    put("k_folds", cfg.k_folds.to_string());
    put("level", format!("{:?}", cfg.level));
    put("seed", cfg.seed.to_string());
    put("center_y", cfg.center_y.to_string());
    put("gibbs_iterations", cfg.gibbs.iterations.to_string());
    put("gibbs_burnin", cfg.gibbs.burnin.to_string());
    put("probit_predictive_average", cfg.probit_predictive_average.to_string());
    put("workers", cfg.workers.to_string());
    put("keep_replicates", cfg.keep_replicates.to_string());
    out
}
