use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use xcommit::config_file::{load_config, ConfigFileError};
use xcommit::experiment::{overhead_pct, run_experiment, run_scaling, ScalingPoint, DEFAULT_CHAIN_COUNTS};
use xcommit::record::{check_bounds, to_json, write_csv, ResultRecord};
use xcommit::selftest::run_selftest;
use xcommit::trace_io::{load_trace, save_trace};
use xcommit_core::metrics::audit_acid;
use xcommit_core::protocol::ProtocolKind;
use xcommit_core::sim::SimError;

const EXIT_VIOLATION: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "xcommit", version, about = "Simulate atomic commit across independent blockchains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and audit it.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        protocol: Option<ProtocolKind>,
        #[arg(long)]
        seed: Option<u64>,
        /// Full result record as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// One row per transaction.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// The raw run trace, for `audit`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the chain-count scaling study.
    Scale {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CHAIN_COUNTS)]
        chains: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_values_t = [ProtocolKind::Rbp, ProtocolKind::Tpc, ProtocolKind::Hub])]
        protocols: Vec<ProtocolKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-audit a saved trace.
    Audit {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Exhaustive two-chain check with at most one crash.
    Selftest,
}

enum Failure {
    Config(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Failure {
        Failure::Other(e)
    }
}

impl From<ConfigFileError> for Failure {
    fn from(e: ConfigFileError) -> Failure {
        Failure::Config(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Failure {
        match e {
            SimError::LivelockDetected { .. } => Failure::Other(e.into()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VIOLATION),
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_record(r: &ResultRecord) {
    let s = &r.summary;
    println!(
        "{} chains={} seed={} digest={}",
        r.config.protocol, r.config.n_chains, r.config.seed, r.config_digest
    );
    println!(
        "  committed {}/{} aborted {} unfinished {}  throughput {:.2} tx/s",
        s.committed, s.submitted, s.aborted, s.unfinished, s.throughput_tps
    );
    println!(
        "  latency ms: min {:.1} median {:.1} p99 {:.1} max {:.1}",
        s.latency.min_ms, s.latency.median_ms, s.latency.p99_ms, s.latency.max_ms
    );
    println!(
        "  messages {} (idle heartbeat {}, {:.2}%)  recycles {}  crashes {} (refused {})  forks {}",
        s.protocol_messages,
        s.heartbeat_idle,
        100.0 * s.heartbeat_overhead,
        s.recycles,
        s.crashes,
        s.crashes_refused,
        s.forks
    );
    println!(
        "  audit: atomicity {} consistency {} isolation {} durability {}",
        verdict(r.audit.atomicity.pass()),
        verdict(r.audit.consistency.pass()),
        verdict(r.audit.isolation.pass()),
        verdict(r.audit.durability.pass())
    );
    println!(
        "  bounds: messages {}/{} ok, latency {}/{} ok",
        r.bounds.message_checked - r.bounds.message_violations,
        r.bounds.message_checked,
        r.bounds.latency_checked - r.bounds.latency_violations,
        r.bounds.latency_checked
    );
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn dispatch(cmd: Command) -> Result<bool, Failure> {
    match cmd {
        Command::Run { config, protocol, seed, out, csv, trace } => {
            let mut cfg = load_config(&config)?;
            if let Some(p) = protocol {
                cfg.protocol = p;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let (record, run_trace) = run_experiment(&cfg)?;
            print_record(&record);
            if let Some(path) = out {
                fs::write(&path, to_json(&record).context("encoding record")?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = csv {
                let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_csv(&record.rows(), f).context("writing csv")?;
            }
            if let Some(path) = trace {
                save_trace(&run_trace, &path)?;
            }
            Ok(record.pass())
        }
        Command::Scale { config, chains, protocols, out } => {
            let base = load_config(&config)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let records = run_scaling(&base, &protocols, &chains)?;
            let mut summary = csv::Writer::from_path(out.join("scaling.csv")).context("creating scaling.csv")?;
            for r in &records {
                let name = format!("{}_{}.json", r.config.protocol, r.config.n_chains);
                fs::write(out.join(&name), to_json(r).context("encoding record")?)
                    .with_context(|| format!("writing {name}"))?;
                summary.serialize(ScalingPoint::from(r)).context("writing scaling.csv")?;
                println!(
                    "{:>4} {:>3} chains: {:>9.2} tx/s  median {:>8.1} ms  {}",
                    r.config.protocol.as_str(),
                    r.config.n_chains,
                    r.summary.throughput_tps,
                    r.summary.latency.median_ms,
                    verdict(r.pass())
                );
            }
            summary.flush().context("writing scaling.csv")?;
            for &n in &chains {
                let find = |p| records.iter().find(|r| r.config.protocol == p && r.config.n_chains == n);
                if let (Some(rbp), Some(tpc)) = (find(ProtocolKind::Rbp), find(ProtocolKind::Tpc)) {
                    println!("rbp overhead vs tpc at {n} chains: {:.2}%", overhead_pct(rbp, tpc));
                }
            }
            Ok(records.iter().all(ResultRecord::pass))
        }
        Command::Audit { trace } => {
            let t = load_trace(&trace)?;
            let report = audit_acid(&t);
            let bounds = check_bounds(&t);
            println!("{}", serde_json::to_string_pretty(&report).context("encoding report")?);
            println!(
                "bounds: {} message and {} latency violations",
                bounds.message_violations, bounds.latency_violations
            );
            Ok(report.pass() && bounds.message_violations == 0 && bounds.latency_violations == 0)
        }
        Command::Selftest => {
            let mut ok = true;
            for case in run_selftest() {
                ok &= case.pass();
                println!("{} {}: {}", verdict(case.pass()), case.name, case.describe());
            }
            Ok(ok)
        }
    }
}
