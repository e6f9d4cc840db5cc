//! Commit protocols as message-driven state machines.
//!
//! Four variants share one coordinator machine and one participant machine:
//!
//! * `Sbp` waits until a leg's block is finalized before acknowledging, so a
//!   committed transaction can never be rolled back by a fork.
//! * `Rbp` acknowledges right after the local update and keeps a sliding window
//!   of unfinalized applications; legs stranded on an abandoned branch send the
//!   whole transaction back to the request pool.
//! * `Tpc` is plain two-phase commit (no finality wait, no failover), only
//!   meaningful without failures and forks.
//! * `Hub` routes every transaction through one designated chain that runs the
//!   two-phase exchange on behalf of the requester.
//!
//! The machines never touch the clock or the network themselves: they return
//! [`coordinator::Effect`]s and [`participant::PartEffect`]s for the caller to
//! carry out, which keeps them pure and lets the exhaustive explorer drive them.

pub mod coordinator;
pub mod hub;
pub mod participant;
pub mod pool;
pub mod window;

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::TxnId;

pub use coordinator::{CoordConfig, CoordInput, CoordPhase, CoordinatorState, Effect};
pub use hub::{HubEffect, HubState};
pub use participant::{PartCtx, PartEffect, PartInput, PartPhase, ParticipantState};
pub use pool::RequestPool;
pub use window::SlidingWindow;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Sbp,
    Rbp,
    Tpc,
    Hub,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 4] =
        [ProtocolKind::Sbp, ProtocolKind::Rbp, ProtocolKind::Tpc, ProtocolKind::Hub];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::Sbp => "sbp",
            ProtocolKind::Rbp => "rbp",
            ProtocolKind::Tpc => "tpc",
            ProtocolKind::Hub => "hub",
        }
    }

    /// Whether crashed proxies are replaced through heartbeat-driven election.
    pub fn uses_failover(self) -> bool {
        matches!(self, ProtocolKind::Sbp | ProtocolKind::Rbp)
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown protocol `{0}` (expected sbp, rbp, tpc, 2pc or hub)")]
pub struct UnknownProtocol(pub alloc::string::String);

impl FromStr for ProtocolKind {
    type Err = UnknownProtocol;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sbp" => Ok(ProtocolKind::Sbp),
            "rbp" => Ok(ProtocolKind::Rbp),
            "tpc" | "2pc" => Ok(ProtocolKind::Tpc),
            "hub" => Ok(ProtocolKind::Hub),
            other => Err(UnknownProtocol(other.into())),
        }
    }
}

/// Protocol message kinds. The numeric codes are stable and appear in traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MsgKind {
    Precommit = 1,
    Ready = 2,
    AbortVote = 3,
    Commit = 4,
    Done = 5,
    Abort = 6,
    HbProbe = 7,
    HbAck = 8,
    HubForward = 9,
    HubAck = 10,
    /// Participant tells the coordinator a leg was stranded on a cut branch.
    Recycle = 11,
}

impl MsgKind {
    pub const ALL: [MsgKind; 11] = [
        MsgKind::Precommit,
        MsgKind::Ready,
        MsgKind::AbortVote,
        MsgKind::Commit,
        MsgKind::Done,
        MsgKind::Abort,
        MsgKind::HbProbe,
        MsgKind::HbAck,
        MsgKind::HubForward,
        MsgKind::HubAck,
        MsgKind::Recycle,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<MsgKind> {
        MsgKind::ALL.iter().copied().find(|k| k.code() == code)
    }

    /// Which commit phase a message of this kind is accounted to.
    pub fn phase(self) -> Phase {
        match self {
            MsgKind::Precommit | MsgKind::Ready | MsgKind::AbortVote | MsgKind::HubForward => {
                Phase::One
            }
            _ => Phase::Two,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    One,
    Two,
}

/// Payload of an envelope.
///
/// `incarnation` counts restarts of the whole transaction (RBP recycling);
/// `attempt` counts re-broadcasts within one incarnation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Message {
    pub kind: MsgKind,
    pub txn: TxnId,
    pub incarnation: u32,
    pub attempt: u32,
    /// Outcome carried by `HubAck`; false elsewhere.
    pub committed: bool,
}

impl Message {
    pub fn new(kind: MsgKind, txn: TxnId, incarnation: u32, attempt: u32) -> Message {
        Message { kind, txn, incarnation, attempt, committed: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StepError {
    /// The input belongs to an older incarnation; ignored by callers.
    #[error("stale epoch: input for incarnation {got}, machine at {current}")]
    StaleEpoch { got: u32, current: u32 },
    #[error("input for {got} delivered to the machine of {expected}")]
    UnknownTxn { got: TxnId, expected: TxnId },
    #[error("message kind {0:?} is not handled by this machine")]
    Unexpected(MsgKind),
    #[error("lock or ledger violation: {0}")]
    Ledger(#[from] crate::chain::LedgerError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_stable_and_invertible() {
        let codes: alloc::vec::Vec<u8> = MsgKind::ALL.iter().map(|k| k.code()).collect();
        assert_eq!(codes, (1..=11).collect::<alloc::vec::Vec<u8>>());
        for k in MsgKind::ALL {
            assert_eq!(MsgKind::from_code(k.code()), Some(k));
        }
        assert_eq!(MsgKind::from_code(0), None);
    }

    #[test]
    fn protocol_names() {
        assert_eq!("2PC".parse::<ProtocolKind>().unwrap(), ProtocolKind::Tpc);
        assert_eq!("rbp".parse::<ProtocolKind>().unwrap(), ProtocolKind::Rbp);
        assert!("3pc".parse::<ProtocolKind>().is_err());
    }
}
