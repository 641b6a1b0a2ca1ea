use serde::{Deserialize, Serialize};

use crate::error::TerminalError;

pub const MAX_ADDRESS: u8 = 30;

/// Eight-byte secret required by configuration commands.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Password(pub [u8; 8]);

impl Password {
    /// Pads or truncates a text password to eight bytes.
    pub fn from_text(text: &str) -> Self {
        let mut buf = [0u8; 8];
        for (dst, src) in buf.iter_mut().zip(text.bytes()) {
            *dst = src;
        }
        Self(buf)
    }
}

impl std::fmt::Debug for Password {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Password(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommRate {
    Baud9600 = 0,
    Baud19200 = 1,
    Baud38400 = 2,
    Baud57600 = 3,
    Baud115200 = 4,
}

impl CommRate {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => CommRate::Baud9600,
            1 => CommRate::Baud19200,
            2 => CommRate::Baud38400,
            3 => CommRate::Baud57600,
            4 => CommRate::Baud115200,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalConfig {
    /// Bus address, 1..=30.
    pub address: u8,
    /// Logical gate guarded by this terminal, 0..=63.
    pub gate_id: u8,
    pub comm_rate: CommRate,
    pub password: Password,
    /// How long the strike stays released after a grant.
    pub strike_release_s: u32,
    /// How long the door may stay open before DOOR_LEFT_OPEN.
    pub door_open_timeout_s: u32,
    /// Added to the bus clock to obtain terminal local time.
    pub clock_offset_s: i64,
}

impl TerminalConfig {
    pub fn new(address: u8, gate_id: u8, password: Password) -> Self {
        Self {
            address,
            gate_id,
            comm_rate: CommRate::Baud19200,
            password,
            strike_release_s: 5,
            door_open_timeout_s: 30,
            clock_offset_s: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TerminalError> {
        if !(1..=MAX_ADDRESS).contains(&self.address) {
            return Err(TerminalError::InvalidConfig("address must be 1..=30"));
        }
        if self.gate_id > 63 {
            return Err(TerminalError::InvalidConfig("gate id must be 0..=63"));
        }
        if self.strike_release_s < 1 {
            return Err(TerminalError::InvalidConfig("strike release must be at least 1 s"));
        }
        if self.door_open_timeout_s <= self.strike_release_s {
            return Err(TerminalError::InvalidConfig(
                "door-open timeout must exceed strike release",
            ));
        }
        Ok(())
    }
}
