use proptest::prelude::*;

use xcommit::config_file::{config_digest, parse_config, render_config};
use xcommit::experiment::run_experiment;
use xcommit::record::{from_json, read_csv, to_json, write_csv, TxnRow};
use xcommit::trace_io::{load_trace, save_trace};
use xcommit_core::config::RunConfig;
use xcommit_core::protocol::ProtocolKind;
use xcommit_core::time::Dur;

fn small(protocol: ProtocolKind) -> RunConfig {
    RunConfig { protocol, n_chains: 3, n_transactions: 80, fork_prob: 0.1, failure_budget: 1, crash_rate: 1.0, ..RunConfig::default() }
}

#[test]
fn record_json_round_trips() {
    let (record, _) = run_experiment(&small(ProtocolKind::Rbp)).unwrap();
    let back = from_json(&to_json(&record).unwrap()).unwrap();
    assert_eq!(back, record);
}

#[test]
fn trace_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.json");
    let (_, trace) = run_experiment(&small(ProtocolKind::Sbp)).unwrap();
    save_trace(&trace, &path).unwrap();
    assert_eq!(load_trace(&path).unwrap(), trace);
}

#[test]
fn csv_round_trips_and_leaves_latency_blank_for_aborts() {
    let (record, _) = run_experiment(&small(ProtocolKind::Sbp)).unwrap();
    let rows = record.rows();
    assert!(rows.iter().any(|r| !r.committed), "want at least one abort in the sample");
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    for (line, row) in text.lines().skip(1).zip(&rows) {
        let latency = line.split(',').nth(2).unwrap();
        assert_eq!(latency.is_empty(), row.latency_ms.is_none());
    }
    assert_eq!(read_csv(text.as_bytes()).unwrap(), rows);
}

#[test]
fn empty_csv_still_has_header() {
    let mut buf = Vec::new();
    write_csv(&[] as &[TxnRow], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().trim_end(), xcommit::record::CSV_HEADER.join(","));
}

fn any_protocol() -> impl Strategy<Value = ProtocolKind> {
    prop_oneof![Just(ProtocolKind::Sbp), Just(ProtocolKind::Rbp), Just(ProtocolKind::Hub)]
}

proptest! {
    #[test]
    fn config_text_round_trips(
        protocol in any_protocol(),
        chains in 2u32..40,
        legs in 2u32..6,
        seed in any::<u64>(),
        rate in 0.1f64..100.0,
        tau_us in 1u64..200_000,
        fork in 0.0f64..0.5,
        budget in 0u32..4,
        override_delta_ms in proptest::option::of(3_000u64..20_000),
    ) {
        let mut cfg = RunConfig {
            protocol,
            n_chains: chains,
            legs_per_txn: legs.min(chains),
            seed,
            arrival_rate: rate,
            tau: Dur::from_micros(tau_us),
            fork_prob: fork,
            failure_budget: budget,
            ..RunConfig::default()
        };
        if let Some(ms) = override_delta_ms {
            cfg.overrides.entry(2).or_default().delta = Some(Dur::from_millis(ms));
        }
        let back = parse_config(&render_config(&cfg)).unwrap();
        prop_assert_eq!(config_digest(&back), config_digest(&cfg));
        prop_assert_eq!(back, cfg);
    }
}
