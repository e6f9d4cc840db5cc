//! Run traces on disk, as JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::Context;
use xcommit_core::trace::RunTrace;

pub fn save_trace(trace: &RunTrace, path: &Path) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer(BufWriter::new(f), trace).with_context(|| format!("writing {}", path.display()))
}

pub fn load_trace(path: &Path) -> anyhow::Result<RunTrace> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}
