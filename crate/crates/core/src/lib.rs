//! Deterministic discrete-event simulation of atomic commit across
//! independent blockchains.
//!
//! Everything here is `no_std` + `alloc`: the simulation is driven by a
//! seeded RNG and a virtual clock, and file formats and the CLI live in the
//! companion `xcommit` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod chain;
pub mod kernel;
pub mod node;
pub mod protocol;
pub mod time;
pub mod config;
pub mod metrics;
pub mod sim;
pub mod trace;
pub mod workload;
pub mod explore;
