//! Run configuration and its validation.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::ChainId;
use crate::kernel::{ParamError, SimParams};
use crate::node::{ChainParamError, ChainParams};
use crate::protocol::ProtocolKind;
use crate::time::Dur;

/// Per-chain values that replace the defaults of [`RunConfig`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainOverride {
    pub nodes: Option<u32>,
    pub delta: Option<Dur>,
    pub sigma: Option<Dur>,
    pub block_interval: Option<Dur>,
    pub fork_prob: Option<f64>,
    pub max_fork_depth: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub protocol: ProtocolKind,
    pub n_chains: u32,
    pub nodes_per_chain: u32,
    pub entities_per_chain: u32,
    pub initial_balance: u64,
    pub n_transactions: u32,
    pub legs_per_txn: u32,
    /// Transaction arrivals per second per chain.
    pub arrival_rate: f64,
    /// Skew of entity popularity; 0 is uniform.
    pub zipf_exponent: f64,
    pub tau: Dur,
    pub latency_jitter: f64,
    pub recovery: Dur,
    pub failure_budget: u32,
    pub seed: u64,
    pub delta: Dur,
    pub sigma: Dur,
    pub block_interval: Dur,
    pub fork_prob: f64,
    pub max_fork_depth: u32,
    pub hub_capacity: u32,
    /// Random crashes per second across the whole system.
    pub crash_rate: f64,
    /// Crash any live node, not only proxies.
    pub crash_non_proxy: bool,
    /// SBP acknowledges after a fixed wait instead of observing finality.
    pub sbp_fixed_wait: bool,
    /// Period of sliding-window samples; zero disables sampling.
    pub window_sample: Dur,
    /// Events allowed per 1000 transactions without any completion.
    pub livelock_cap: u64,
    pub overrides: BTreeMap<u32, ChainOverride>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            protocol: ProtocolKind::Sbp,
            n_chains: 4,
            nodes_per_chain: 3,
            entities_per_chain: 100,
            initial_balance: 1000,
            n_transactions: 1000,
            legs_per_txn: 2,
            arrival_rate: 10.0,
            zipf_exponent: 0.0,
            tau: Dur::from_millis(50),
            latency_jitter: 0.2,
            recovery: Dur::from_secs(2),
            failure_budget: 0,
            seed: 1,
            delta: Dur::from_secs(2),
            sigma: Dur::from_millis(200),
            block_interval: Dur::from_millis(100),
            fork_prob: 0.0,
            max_fork_depth: 3,
            hub_capacity: 16,
            crash_rate: 0.0,
            crash_non_proxy: false,
            sbp_fixed_wait: false,
            window_sample: Dur::ZERO,
            livelock_cap: 10_000_000,
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("at least two chains are required, got {0}")]
    TooFewChains(u32),
    #[error("legs per transaction must be in 2..={n_chains}, got {legs}")]
    Legs { legs: u32, n_chains: u32 },
    #[error("entities per chain must be positive")]
    NoEntities,
    #[error("arrival rate must be positive and finite, got {0}")]
    ArrivalRate(f64),
    #[error("zipf exponent must be finite and non-negative, got {0}")]
    Zipf(f64),
    #[error("crash rate must be finite and non-negative, got {0}")]
    CrashRate(f64),
    #[error("{0} requires failure budget 0 and fork probability 0")]
    BaselineNeedsCivil(ProtocolKind),
    #[error("hub capacity must be positive")]
    HubCapacity,
    #[error("override for chain {0}, which does not exist")]
    UnknownChain(u32),
    #[error("livelock cap must be positive")]
    LivelockCap,
    #[error(transparent)]
    Sim(#[from] ParamError),
    #[error(transparent)]
    Chain(#[from] ChainParamError),
}

impl RunConfig {
    pub fn sim_params(&self) -> SimParams {
        SimParams {
            tau: self.tau,
            recovery: self.recovery,
            failure_budget: self.failure_budget,
            seed: self.seed,
            latency_jitter: self.latency_jitter,
        }
    }

    pub fn chain_params(&self, chain: ChainId) -> ChainParams {
        let o = self.overrides.get(&chain.0).copied().unwrap_or_default();
        ChainParams {
            chain,
            n_nodes: o.nodes.unwrap_or(self.nodes_per_chain),
            delta: o.delta.unwrap_or(self.delta),
            sigma: o.sigma.unwrap_or(self.sigma),
            block_interval: o.block_interval.unwrap_or(self.block_interval),
            fork_prob: o.fork_prob.unwrap_or(self.fork_prob),
            max_fork_depth: o.max_fork_depth.unwrap_or(self.max_fork_depth),
        }
    }

    pub fn chains(&self) -> impl Iterator<Item = ChainId> {
        (1..=self.n_chains).map(ChainId)
    }

    pub fn all_chain_params(&self) -> Vec<ChainParams> {
        self.chains().map(|c| self.chain_params(c)).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_chains < 2 {
            return Err(ConfigError::TooFewChains(self.n_chains));
        }
        if self.legs_per_txn < 2 || self.legs_per_txn > self.n_chains {
            return Err(ConfigError::Legs { legs: self.legs_per_txn, n_chains: self.n_chains });
        }
        if self.entities_per_chain == 0 {
            return Err(ConfigError::NoEntities);
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return Err(ConfigError::ArrivalRate(self.arrival_rate));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return Err(ConfigError::Zipf(self.zipf_exponent));
        }
        if !(self.crash_rate.is_finite() && self.crash_rate >= 0.0) {
            return Err(ConfigError::CrashRate(self.crash_rate));
        }
        if self.hub_capacity == 0 {
            return Err(ConfigError::HubCapacity);
        }
        if self.livelock_cap == 0 {
            return Err(ConfigError::LivelockCap);
        }
        if let Some(&c) = self.overrides.keys().find(|c| **c == 0 || **c > self.n_chains) {
            return Err(ConfigError::UnknownChain(c));
        }
        self.sim_params().validate()?;
        let params = self.all_chain_params();
        for p in &params {
            p.validate()?;
        }
        if self.protocol == ProtocolKind::Tpc
            && (self.failure_budget > 0 || params.iter().any(|p| p.fork_prob > 0.0))
        {
            return Err(ConfigError::BaselineNeedsCivil(self.protocol));
        }
        Ok(())
    }
}
