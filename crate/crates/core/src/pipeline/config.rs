//! Run configuration: `key = value` lines under `[section]` headers.
//!
//! Three sections are recognized. `[model]` holds the per-fit tuning knobs,
//! `[partition]` the expansion order for overlapping subdomains, and
//! `[pipeline]` execution-level choices (seed, workers, merge rule).
//! Unknown sections or keys are errors: silently ignoring a misspelled
//! tolerance is worse than failing.

use crate::error::{Error, Result};
use crate::inference::FitConfig;
use crate::merge::RiskMerge;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub fit: FitConfig,
    /// Worker threads; `None` defers to MVRISK_WORKERS or the CPU count.
    pub workers: Option<usize>,
    pub risk_merge: RiskMerge,
    /// Neighbourhood expansion order for partition fitting.
    pub partition_order: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fit: FitConfig::default(),
            workers: None,
            risk_merge: RiskMerge::Ownership,
            partition_order: 1,
        }
    }
}

pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::config(format!("line {}: {msg}", lineno + 1));
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err("unterminated section header".into()))?
                .trim();
            match name {
                "model" | "partition" | "pipeline" => section = name.to_string(),
                other => return Err(err(format!("unknown section {other:?}"))),
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err("expected key = value".into()))?;
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(err(format!("key {key:?} has no value")));
        }

        match (section.as_str(), key) {
            ("model", "draws") => cfg.fit.draws = parse_num(value, key, lineno)?,
            ("model", "dof") => cfg.fit.dof = Some(parse_num(value, key, lineno)?),
            ("model", "newton_tol") => cfg.fit.newton_tol = parse_num(value, key, lineno)?,
            ("model", "newton_max_iter") => {
                cfg.fit.newton_max_iter = parse_num(value, key, lineno)?
            }
            ("model", "hyper_tol") => cfg.fit.hyper_tol = parse_num(value, key, lineno)?,
            ("model", "hyper_max_iter") => {
                cfg.fit.hyper_max_iter = parse_num(value, key, lineno)?
            }
            ("partition", "order") => cfg.partition_order = parse_num(value, key, lineno)?,
            ("pipeline", "seed") => cfg.fit.seed = parse_num(value, key, lineno)?,
            ("pipeline", "workers") => cfg.workers = Some(parse_num(value, key, lineno)?),
            ("pipeline", "risk_merge") => {
                cfg.risk_merge = match value {
                    "ownership" => RiskMerge::Ownership,
                    "mixture" => RiskMerge::Mixture,
                    other => {
                        return Err(err(format!(
                            "risk_merge must be \"ownership\" or \"mixture\", got {other:?}"
                        )))
                    }
                }
            }
            ("", k) => {
                return Err(err(format!(
                    "key {k:?} appears before any [section] header"
                )))
            }
            (s, k) => return Err(err(format!("unknown key {k:?} in section [{s}]"))),
        }
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn parse_num<T: std::str::FromStr>(value: &str, key: &str, lineno: usize) -> Result<T> {
    value.parse().map_err(|_| {
        Error::config(format!(
            "line {}: value {value:?} for key {key:?} does not parse",
            lineno + 1
        ))
    })
}

fn validate(cfg: &PipelineConfig) -> Result<()> {
    let f = &cfg.fit;
    if f.draws < 2 {
        return Err(Error::config("draws must be at least 2"));
    }
    if !(f.newton_tol > 0.0) || !(f.hyper_tol > 0.0) {
        return Err(Error::config("tolerances must be positive"));
    }
    if f.newton_max_iter == 0 || f.hyper_max_iter == 0 {
        return Err(Error::config("iteration caps must be positive"));
    }
    if let Some(d) = f.dof {
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::config("dof must be positive and finite"));
        }
    }
    if cfg.workers == Some(0) {
        return Err(Error::config("workers must be positive"));
    }
    Ok(())
}
