//! The `key = value` configuration format.
//!
//! One setting per line, `#` starts a comment. Durations are given in
//! milliseconds (keys ending in `_ms`). Per-chain settings use
//! `chain.<id>.<key>`. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hash::Hasher;
use std::path::Path;
use std::str::FromStr;

use fnv::FnvHasher;
use thiserror::Error;
use xcommit_core::config::{ChainOverride, ConfigError, RunConfig};
use xcommit_core::protocol::ProtocolKind;
use xcommit_core::time::Dur;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(#[from] ConfigError),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn number<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigFileError> {
    value.parse().map_err(|_| ConfigFileError::BadValue { line, key: key.into(), value: value.into() })
}

fn millis(line: usize, key: &str, value: &str) -> Result<Dur, ConfigFileError> {
    let ms: f64 = number(line, key, value)?;
    if !ms.is_finite() || ms < 0.0 {
        return Err(ConfigFileError::BadValue { line, key: key.into(), value: value.into() });
    }
    Ok(Dur::from_millis_f64(ms))
}

fn flag(line: usize, key: &str, value: &str) -> Result<bool, ConfigFileError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigFileError::BadValue { line, key: key.into(), value: value.into() }),
    }
}

fn set_chain(o: &mut ChainOverride, line: usize, key: &str, field: &str, value: &str) -> Result<(), ConfigFileError> {
    match field {
        "nodes" => o.nodes = Some(number(line, key, value)?),
        "delta_ms" => o.delta = Some(millis(line, key, value)?),
        "sigma_ms" => o.sigma = Some(millis(line, key, value)?),
        "block_interval_ms" => o.block_interval = Some(millis(line, key, value)?),
        "fork_prob" => o.fork_prob = Some(number(line, key, value)?),
        "max_fork_depth" => o.max_fork_depth = Some(number(line, key, value)?),
        _ => return Err(ConfigFileError::UnknownKey { line, key: key.into() }),
    }
    Ok(())
}

fn set(cfg: &mut RunConfig, line: usize, key: &str, value: &str) -> Result<(), ConfigFileError> {
    if let Some(rest) = key.strip_prefix("chain.") {
        let (id, field) = rest.split_once('.').ok_or_else(|| ConfigFileError::UnknownKey { line, key: key.into() })?;
        let id: u32 = id.parse().map_err(|_| ConfigFileError::UnknownKey { line, key: key.into() })?;
        let o = cfg.overrides.entry(id).or_default();
        return set_chain(o, line, key, field, value);
    }
    match key {
        "protocol" => {
            cfg.protocol = ProtocolKind::from_str(value)
                .map_err(|_| ConfigFileError::BadValue { line, key: key.into(), value: value.into() })?
        }
        "n_chains" => cfg.n_chains = number(line, key, value)?,
        "nodes_per_chain" => cfg.nodes_per_chain = number(line, key, value)?,
        "entities_per_chain" => cfg.entities_per_chain = number(line, key, value)?,
        "initial_balance" => cfg.initial_balance = number(line, key, value)?,
        "n_transactions" => cfg.n_transactions = number(line, key, value)?,
        "legs_per_txn" => cfg.legs_per_txn = number(line, key, value)?,
        "arrival_rate" => cfg.arrival_rate = number(line, key, value)?,
        "zipf_exponent" => cfg.zipf_exponent = number(line, key, value)?,
        "tau_ms" => cfg.tau = millis(line, key, value)?,
        "latency_jitter" => cfg.latency_jitter = number(line, key, value)?,
        "recovery_ms" => cfg.recovery = millis(line, key, value)?,
        "failure_budget" => cfg.failure_budget = number(line, key, value)?,
        "seed" => cfg.seed = number(line, key, value)?,
        "delta_ms" => cfg.delta = millis(line, key, value)?,
        "sigma_ms" => cfg.sigma = millis(line, key, value)?,
        "block_interval_ms" => cfg.block_interval = millis(line, key, value)?,
        "fork_prob" => cfg.fork_prob = number(line, key, value)?,
        "max_fork_depth" => cfg.max_fork_depth = number(line, key, value)?,
        "hub_capacity" => cfg.hub_capacity = number(line, key, value)?,
        "crash_rate" => cfg.crash_rate = number(line, key, value)?,
        "crash_non_proxy" => cfg.crash_non_proxy = flag(line, key, value)?,
        "sbp_fixed_wait" => cfg.sbp_fixed_wait = flag(line, key, value)?,
        "window_sample_ms" => cfg.window_sample = millis(line, key, value)?,
        "livelock_cap" => cfg.livelock_cap = number(line, key, value)?,
        _ => return Err(ConfigFileError::UnknownKey { line, key: key.into() }),
    }
    Ok(())
}

/// Parses and validates a configuration. Missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigFileError> {
    let cfg = parse_unvalidated(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_unvalidated(text: &str) -> Result<RunConfig, ConfigFileError> {
    let mut cfg = RunConfig::default();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(ConfigFileError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigFileError::Syntax { line });
        }
        if seen.insert(key.to_string(), line).is_some() {
            return Err(ConfigFileError::Duplicate { line, key: key.into() });
        }
        set(&mut cfg, line, key, value)?;
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigFileError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigFileError::Io { path: path.display().to_string(), source })?;
    parse_config(&text)
}

fn ms(d: Dur) -> String {
    format!("{}", d.as_millis_f64())
}

/// Canonical text of a configuration: every key, fixed order.
pub fn render_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("protocol", cfg.protocol.as_str().into());
    kv("n_chains", cfg.n_chains.to_string());
    kv("nodes_per_chain", cfg.nodes_per_chain.to_string());
    kv("entities_per_chain", cfg.entities_per_chain.to_string());
    kv("initial_balance", cfg.initial_balance.to_string());
    kv("n_transactions", cfg.n_transactions.to_string());
    kv("legs_per_txn", cfg.legs_per_txn.to_string());
    kv("arrival_rate", cfg.arrival_rate.to_string());
    kv("zipf_exponent", cfg.zipf_exponent.to_string());
    kv("tau_ms", ms(cfg.tau));
    kv("latency_jitter", cfg.latency_jitter.to_string());
    kv("recovery_ms", ms(cfg.recovery));
    kv("failure_budget", cfg.failure_budget.to_string());
    kv("seed", cfg.seed.to_string());
    kv("delta_ms", ms(cfg.delta));
    kv("sigma_ms", ms(cfg.sigma));
    kv("block_interval_ms", ms(cfg.block_interval));
    kv("fork_prob", cfg.fork_prob.to_string());
    kv("max_fork_depth", cfg.max_fork_depth.to_string());
    kv("hub_capacity", cfg.hub_capacity.to_string());
    kv("crash_rate", cfg.crash_rate.to_string());
    kv("crash_non_proxy", cfg.crash_non_proxy.to_string());
    kv("sbp_fixed_wait", cfg.sbp_fixed_wait.to_string());
    kv("window_sample_ms", ms(cfg.window_sample));
    kv("livelock_cap", cfg.livelock_cap.to_string());
    for (id, o) in &cfg.overrides {
        if let Some(v) = o.nodes {
            kv(&format!("chain.{id}.nodes"), v.to_string());
        }
        if let Some(v) = o.delta {
            kv(&format!("chain.{id}.delta_ms"), ms(v));
        }
        if let Some(v) = o.sigma {
            kv(&format!("chain.{id}.sigma_ms"), ms(v));
        }
        if let Some(v) = o.block_interval {
            kv(&format!("chain.{id}.block_interval_ms"), ms(v));
        }
        if let Some(v) = o.fork_prob {
            kv(&format!("chain.{id}.fork_prob"), v.to_string());
        }
        if let Some(v) = o.max_fork_depth {
            kv(&format!("chain.{id}.max_fork_depth"), v.to_string());
        }
    }
    s
}

/// 64-bit FNV-1a of the canonical text, as 16 hex digits.
pub fn config_digest(cfg: &RunConfig) -> String {
    let mut h = FnvHasher::default();
    h.write(render_config(cfg).as_bytes());
    format!("{:016x}", h.finish())
}
