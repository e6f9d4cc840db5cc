//! The exhaustive small-scope check behind `xcommit selftest`.

use xcommit_core::explore::{crash_sweep, explore, sweep_config, ExploreConfig, ExploreReport, SweepReport};
use xcommit_core::protocol::ProtocolKind;

pub struct SelftestCase {
    pub name: &'static str,
    pub outcome: CaseOutcome,
}

pub enum CaseOutcome {
    Explore(ExploreReport),
    Sweep(SweepReport),
}

impl SelftestCase {
    pub fn pass(&self) -> bool {
        match &self.outcome {
            CaseOutcome::Explore(r) => r.pass(),
            CaseOutcome::Sweep(r) => r.pass(),
        }
    }

    pub fn describe(&self) -> String {
        match &self.outcome {
            CaseOutcome::Explore(r) => format!(
                "{} states, {} terminal ({} committed, {} aborted), violations {:?}",
                r.states, r.terminal_states, r.committed_terminals, r.aborted_terminals, r.violations
            ),
            CaseOutcome::Sweep(r) => format!(
                "{} runs, {} with the crash in flight, worst takeover {}, failures {}",
                r.runs,
                r.crashes_in_flight,
                r.worst_takeover,
                r.failures.len()
            ),
        }
    }
}

/// Two chains of two nodes, one transaction, at most one proxy crash.
pub fn run_selftest() -> Vec<SelftestCase> {
    let mut cases = Vec::new();
    let explores: [(&'static str, ExploreConfig); 6] = [
        ("sbp: one crash, all orders", ExploreConfig::with_crash(ProtocolKind::Sbp)),
        (
            "sbp: one crash, timeouts anywhere",
            ExploreConfig { early_timeouts: true, ..ExploreConfig::with_crash(ProtocolKind::Sbp) },
        ),
        ("sbp: unfunded payer", ExploreConfig { funded: false, ..ExploreConfig::with_crash(ProtocolKind::Sbp) }),
        ("sbp: payee locked", ExploreConfig { payee_locked: true, ..ExploreConfig::with_crash(ProtocolKind::Sbp) }),
        ("rbp: one crash and one cut", ExploreConfig { max_cuts: 1, ..ExploreConfig::with_crash(ProtocolKind::Rbp) }),
        ("tpc: civil", ExploreConfig::civil(ProtocolKind::Tpc)),
    ];
    for (name, cfg) in explores {
        cases.push(SelftestCase { name, outcome: CaseOutcome::Explore(explore(&cfg)) });
    }
    for (name, p) in [("sbp: timed crash sweep", ProtocolKind::Sbp), ("rbp: timed crash sweep", ProtocolKind::Rbp)] {
        let (cfg, w) = sweep_config(p);
        cases.push(SelftestCase { name, outcome: CaseOutcome::Sweep(crash_sweep(&cfg, &w)) });
    }
    cases
}
