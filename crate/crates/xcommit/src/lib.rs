//! File formats, experiment drivers and the command-line front end for the
//! `xcommit-core` simulator.

pub mod config_file;
pub mod experiment;
pub mod record;
pub mod selftest;
pub mod trace_io;
