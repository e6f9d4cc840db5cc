//! Single runs and the chain-count scaling study.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xcommit_core::config::RunConfig;
use xcommit_core::protocol::ProtocolKind;
use xcommit_core::sim::{run_config, SimError};
use xcommit_core::trace::RunTrace;

use crate::record::ResultRecord;

pub fn run_experiment(cfg: &RunConfig) -> Result<(ResultRecord, RunTrace), SimError> {
    let trace = run_config(cfg)?;
    Ok((ResultRecord::from_trace(cfg, &trace), trace))
}

pub const DEFAULT_CHAIN_COUNTS: [u32; 6] = [2, 4, 8, 16, 32, 64];

/// Configuration of one scaling point: the base with `chains` chains.
pub fn scaling_config(base: &RunConfig, protocol: ProtocolKind, chains: u32) -> RunConfig {
    let mut cfg = base.clone();
    cfg.protocol = protocol;
    cfg.n_chains = chains;
    cfg.legs_per_txn = base.legs_per_txn.min(chains);
    cfg.overrides.retain(|id, _| *id <= chains);
    if protocol == ProtocolKind::Tpc {
        // The baseline runs without failures or forks.
        cfg.failure_budget = 0;
        cfg.crash_rate = 0.0;
        cfg.fork_prob = 0.0;
        for o in cfg.overrides.values_mut() {
            o.fork_prob = None;
        }
    }
    cfg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub protocol: ProtocolKind,
    pub chains: u32,
    pub committed: u64,
    pub throughput_tps: f64,
    pub median_latency_ms: f64,
    pub pass: bool,
}

impl From<&ResultRecord> for ScalingPoint {
    fn from(r: &ResultRecord) -> ScalingPoint {
        ScalingPoint {
            protocol: r.config.protocol,
            chains: r.config.n_chains,
            committed: r.summary.committed,
            throughput_tps: r.summary.throughput_tps,
            median_latency_ms: r.summary.latency.median_ms,
            pass: r.pass(),
        }
    }
}

/// Runs every (protocol, chain count) point in parallel. Results come back
/// in protocol-major order of the inputs.
pub fn run_scaling(
    base: &RunConfig,
    protocols: &[ProtocolKind],
    chain_counts: &[u32],
) -> Result<Vec<ResultRecord>, SimError> {
    let points: Vec<RunConfig> = protocols
        .iter()
        .flat_map(|p| chain_counts.iter().map(move |c| scaling_config(base, *p, *c)))
        .collect();
    points.par_iter().map(|cfg| run_experiment(cfg).map(|(r, _)| r)).collect()
}

/// Relative throughput shortfall of `rbp` against `tpc`, in percent.
pub fn overhead_pct(rbp: &ResultRecord, tpc: &ResultRecord) -> f64 {
    if tpc.summary.throughput_tps == 0.0 {
        return 0.0;
    }
    100.0 * (tpc.summary.throughput_tps - rbp.summary.throughput_tps) / tpc.summary.throughput_tps
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_laws() {
        let lin: Vec<(f64, f64)> = [2.0, 4.0, 8.0, 16.0].iter().map(|&x| (x, 3.0 * x)).collect();
        assert!((log_log_slope(&lin) - 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = [8.0, 16.0, 32.0].iter().map(|&x| (x, 5.0)).collect();
        assert!(log_log_slope(&flat).abs() < 1e-12);
        let sqrt: Vec<(f64, f64)> = [1.0, 4.0, 9.0].iter().map(|&x: &f64| (x, x.sqrt())).collect();
        assert!((log_log_slope(&sqrt) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tpc_points_drop_faults() {
        let base = RunConfig { fork_prob: 0.1, failure_budget: 2, legs_per_txn: 3, ..RunConfig::default() };
        let cfg = scaling_config(&base, ProtocolKind::Tpc, 2);
        assert_eq!((cfg.fork_prob, cfg.failure_budget, cfg.legs_per_txn), (0.0, 0, 2));
        cfg.validate().unwrap();
    }
}
