use std::fmt;

use campus_tag::v1::HolderType;
use serde::{Deserialize, Serialize};

/// Set of holder types, one bit per holder type code.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HolderSet(pub u8);

impl HolderSet {
    pub fn of(types: &[HolderType]) -> Self {
        Self(types.iter().fold(0, |m, t| m | 1 << t.code()))
    }

    pub fn contains_code(self, code: u8) -> bool {
        code < 8 && self.0 & (1 << code) != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalMode {
    Normal,
    /// Any registered, valid card opens the gate until the given local time.
    UnlockedUntil(u64),
    /// Cards of these holder types skip the gate and schedule checks.
    Category(HolderSet),
}

impl TerminalMode {
    pub fn code(self) -> u8 {
        match self {
            TerminalMode::Normal => 0,
            TerminalMode::UnlockedUntil(_) => 1,
            TerminalMode::Category(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DenyReason {
    Unregistered = 1,
    Revoked = 2,
    Locked = 3,
    Expired = 4,
    GateNotAllowed = 5,
    OutOfSchedule = 6,
}

impl DenyReason {
    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(code: u16) -> Option<Self> {
        Some(match code {
            1 => DenyReason::Unregistered,
            2 => DenyReason::Revoked,
            3 => DenyReason::Locked,
            4 => DenyReason::Expired,
            5 => DenyReason::GateNotAllowed,
            6 => DenyReason::OutOfSchedule,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            DenyReason::Unregistered => "UNREGISTERED",
            DenyReason::Revoked => "REVOKED",
            DenyReason::Locked => "LOCKED",
            DenyReason::Expired => "EXPIRED",
            DenyReason::GateNotAllowed => "GATE_NOT_ALLOWED",
            DenyReason::OutOfSchedule => "OUT_OF_SCHEDULE",
        }
    }
}

/// Which rule produced a grant; carried in the event detail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GrantPath {
    Rules = 0,
    Unlocked = 1,
    Category = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessDecision {
    Grant(GrantPath),
    Deny(DenyReason),
}

impl AccessDecision {
    pub fn is_grant(self) -> bool {
        matches!(self, AccessDecision::Grant(_))
    }
}

impl fmt::Display for AccessDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccessDecision::Grant(_) => f.write_str("GRANT"),
            AccessDecision::Deny(r) => write!(f, "DENY({})", r.name()),
        }
    }
}
