//! Command set spoken between the master and a terminal.
//!
//! Commands marked with a dagger below carry the 8-byte terminal password
//! as the first payload bytes. All integers are little-endian except uids,
//! which are big-endian.
//!
//! | code | command            | payload after password              |
//! |------|--------------------|-------------------------------------|
//! | 0x01 | PING               |                                     |
//! | 0x02 | GET_STATUS         |                                     |
//! | 0x03 | DRAIN_EVENTS       | max: u8                             |
//! | 0x04 | ACK_EVENTS         | seq: u32                            |
//! | 0x05 | SET_CONFIG †       | gate u8, rate u8, strike u32, timeout u32, new password [8] |
//! | 0x06 | GET_CONFIG         |                                     |
//! | 0x07 | UNLOCK_BRIEF †     |                                     |
//! | 0x08 | UNLOCK_UNTIL †     | ts: u64                             |
//! | 0x09 | SET_MODE †         | 0 / 1 + ts u64 / 2 + holder mask u8 |
//! | 0x0A | PUSH_REVOCATION †  | count u8 + count uids               |
//! | 0x0B | QUEUE_CARD_WRITE † | uid, field id u8, value bytes       |
//! | 0x0C | SET_TIME †         | ts: u64                             |
//! | 0x0D | DISCOVER           | (broadcast only)                    |
//!
//! Responses use code ACK (0x06, empty), DATA (0x02, payload) or ERR (0x15,
//! one error code byte).

use campus_tag::TagUid;

use crate::config::{CommRate, Password};
use crate::decision::{HolderSet, TerminalMode};
use crate::door::DoorState;

pub const PING: u8 = 0x01;
pub const GET_STATUS: u8 = 0x02;
pub const DRAIN_EVENTS: u8 = 0x03;
pub const ACK_EVENTS: u8 = 0x04;
pub const SET_CONFIG: u8 = 0x05;
pub const GET_CONFIG: u8 = 0x06;
pub const UNLOCK_BRIEF: u8 = 0x07;
pub const UNLOCK_UNTIL: u8 = 0x08;
pub const SET_MODE: u8 = 0x09;
pub const PUSH_REVOCATION: u8 = 0x0A;
pub const QUEUE_CARD_WRITE: u8 = 0x0B;
pub const SET_TIME: u8 = 0x0C;
pub const DISCOVER: u8 = 0x0D;

pub const RESP_ACK: u8 = 0x06;
pub const RESP_DATA: u8 = 0x02;
pub const RESP_ERR: u8 = 0x15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    UnknownCommand = 0x01,
    Auth = 0x02,
    BadArgument = 0x03,
}

impl ErrorCode {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x01 => ErrorCode::UnknownCommand,
            0x02 => ErrorCode::Auth,
            0x03 => ErrorCode::BadArgument,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Ack,
    Data(Vec<u8>),
    Err(ErrorCode),
}

impl Response {
    pub fn code(&self) -> u8 {
        match self {
            Response::Ack => RESP_ACK,
            Response::Data(_) => RESP_DATA,
            Response::Err(_) => RESP_ERR,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        match self {
            Response::Ack => Vec::new(),
            Response::Data(d) => d.clone(),
            Response::Err(e) => vec![*e as u8],
        }
    }

    pub fn from_parts(code: u8, payload: &[u8]) -> Option<Self> {
        match (code, payload) {
            (RESP_ACK, []) => Some(Response::Ack),
            (RESP_DATA, p) => Some(Response::Data(p.to_vec())),
            (RESP_ERR, [e]) => ErrorCode::from_code(*e).map(Response::Err),
            _ => None,
        }
    }
}

/// Settings changeable over the bus. The address is fixed at install time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfigUpdate {
    pub gate_id: u8,
    pub comm_rate: CommRate,
    pub strike_release_s: u32,
    pub door_open_timeout_s: u32,
    pub new_password: Password,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Ping,
    GetStatus,
    DrainEvents { max: u8 },
    AckEvents { seq: u32 },
    SetConfig(ConfigUpdate),
    GetConfig,
    UnlockBrief,
    UnlockUntil { until: u64 },
    SetMode(TerminalMode),
    PushRevocation(Vec<TagUid>),
    QueueCardWrite { uid: TagUid, field_id: u8, value: Vec<u8> },
    SetTime { now: u64 },
    Discover,
}

impl Command {
    pub fn code(&self) -> u8 {
        match self {
            Command::Ping => PING,
            Command::GetStatus => GET_STATUS,
            Command::DrainEvents { .. } => DRAIN_EVENTS,
            Command::AckEvents { .. } => ACK_EVENTS,
            Command::SetConfig(_) => SET_CONFIG,
            Command::GetConfig => GET_CONFIG,
            Command::UnlockBrief => UNLOCK_BRIEF,
            Command::UnlockUntil { .. } => UNLOCK_UNTIL,
            Command::SetMode(_) => SET_MODE,
            Command::PushRevocation(_) => PUSH_REVOCATION,
            Command::QueueCardWrite { .. } => QUEUE_CARD_WRITE,
            Command::SetTime { .. } => SET_TIME,
            Command::Discover => DISCOVER,
        }
    }

    pub fn needs_password(code: u8) -> bool {
        matches!(
            code,
            SET_CONFIG | UNLOCK_BRIEF | UNLOCK_UNTIL | SET_MODE | PUSH_REVOCATION | QUEUE_CARD_WRITE | SET_TIME
        )
    }

    /// Serializes the payload, prefixing the password where required.
    pub fn encode(&self, password: &Password) -> (u8, Vec<u8>) {
        let code = self.code();
        let mut p = Vec::new();
        if Self::needs_password(code) {
            p.extend_from_slice(&password.0);
        }
        match self {
            Command::Ping | Command::GetStatus | Command::GetConfig | Command::UnlockBrief | Command::Discover => {}
            Command::DrainEvents { max } => p.push(*max),
            Command::AckEvents { seq } => p.extend_from_slice(&seq.to_le_bytes()),
            Command::SetConfig(c) => {
                p.push(c.gate_id);
                p.push(c.comm_rate.code());
                p.extend_from_slice(&c.strike_release_s.to_le_bytes());
                p.extend_from_slice(&c.door_open_timeout_s.to_le_bytes());
                p.extend_from_slice(&c.new_password.0);
            }
            Command::UnlockUntil { until } => p.extend_from_slice(&until.to_le_bytes()),
            Command::SetMode(mode) => {
                p.push(mode.code());
                match mode {
                    TerminalMode::Normal => {}
                    TerminalMode::UnlockedUntil(t) => p.extend_from_slice(&t.to_le_bytes()),
                    TerminalMode::Category(set) => p.push(set.0),
                }
            }
            Command::PushRevocation(uids) => {
                p.push(uids.len() as u8);
                for uid in uids {
                    p.extend_from_slice(&uid.to_be_bytes());
                }
            }
            Command::QueueCardWrite { uid, field_id, value } => {
                p.extend_from_slice(&uid.to_be_bytes());
                p.push(*field_id);
                p.extend_from_slice(value);
            }
            Command::SetTime { now } => p.extend_from_slice(&now.to_le_bytes()),
        }
        (code, p)
    }

    /// Parses a command. The returned password is `Some` for commands that
    /// carry one.
    pub fn decode(code: u8, payload: &[u8]) -> Result<(Command, Option<Password>), ErrorCode> {
        let bad = ErrorCode::BadArgument;
        let (password, body) = if Self::needs_password(code) {
            if payload.len() < 8 {
                return Err(bad);
            }
            let (pw, rest) = payload.split_at(8);
            (Some(Password(pw.try_into().unwrap())), rest)
        } else {
            (None, payload)
        };
        let u64_at = |b: &[u8]| -> Result<u64, ErrorCode> { Ok(u64::from_le_bytes(b.try_into().map_err(|_| bad)?)) };
        let cmd = match code {
            PING | GET_STATUS | GET_CONFIG | UNLOCK_BRIEF | DISCOVER => {
                if !body.is_empty() {
                    return Err(bad);
                }
                match code {
                    PING => Command::Ping,
                    GET_STATUS => Command::GetStatus,
                    GET_CONFIG => Command::GetConfig,
                    UNLOCK_BRIEF => Command::UnlockBrief,
                    _ => Command::Discover,
                }
            }
            DRAIN_EVENTS => match body {
                [max] => Command::DrainEvents { max: *max },
                _ => return Err(bad),
            },
            ACK_EVENTS => Command::AckEvents {
                seq: u32::from_le_bytes(body.try_into().map_err(|_| bad)?),
            },
            SET_CONFIG => {
                if body.len() != 18 {
                    return Err(bad);
                }
                Command::SetConfig(ConfigUpdate {
                    gate_id: body[0],
                    comm_rate: CommRate::from_code(body[1]).ok_or(bad)?,
                    strike_release_s: u32::from_le_bytes(body[2..6].try_into().unwrap()),
                    door_open_timeout_s: u32::from_le_bytes(body[6..10].try_into().unwrap()),
                    new_password: Password(body[10..18].try_into().unwrap()),
                })
            }
            UNLOCK_UNTIL => Command::UnlockUntil { until: u64_at(body)? },
            SET_MODE => match body {
                [0] => Command::SetMode(TerminalMode::Normal),
                [1, rest @ ..] => Command::SetMode(TerminalMode::UnlockedUntil(u64_at(rest)?)),
                [2, mask] => Command::SetMode(TerminalMode::Category(HolderSet(*mask))),
                _ => return Err(bad),
            },
            PUSH_REVOCATION => {
                let (&count, rest) = body.split_first().ok_or(bad)?;
                if rest.len() != count as usize * 8 {
                    return Err(bad);
                }
                let uids = rest
                    .chunks_exact(8)
                    .map(|c| TagUid::from_be_bytes(c.try_into().unwrap()).map_err(|_| bad))
                    .collect::<Result<_, _>>()?;
                Command::PushRevocation(uids)
            }
            QUEUE_CARD_WRITE => {
                if body.len() < 10 {
                    return Err(bad);
                }
                Command::QueueCardWrite {
                    uid: TagUid::from_be_bytes(body[..8].try_into().unwrap()).map_err(|_| bad)?,
                    field_id: body[8],
                    value: body[9..].to_vec(),
                }
            }
            SET_TIME => Command::SetTime { now: u64_at(body)? },
            _ => return Err(ErrorCode::UnknownCommand),
        };
        Ok((cmd, password))
    }
}

/// GET_STATUS payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatusReport {
    pub door: DoorState,
    pub mode: TerminalMode,
    pub sensor_open: bool,
    pub queued_events: u16,
    pub last_seq: u32,
    pub local_time: u64,
}

impl StatusReport {
    pub const LEN: usize = 1 + 8 + 1 + 8 + 1 + 2 + 4 + 8;

    pub fn encode(&self) -> Vec<u8> {
        let mut p = Vec::with_capacity(Self::LEN);
        p.push(self.door.code());
        p.extend_from_slice(&self.door.time().to_le_bytes());
        p.push(self.mode.code());
        let mode_arg = match self.mode {
            TerminalMode::Normal => 0,
            TerminalMode::UnlockedUntil(t) => t,
            TerminalMode::Category(set) => set.0.into(),
        };
        p.extend_from_slice(&mode_arg.to_le_bytes());
        p.push(self.sensor_open as u8);
        p.extend_from_slice(&self.queued_events.to_le_bytes());
        p.extend_from_slice(&self.last_seq.to_le_bytes());
        p.extend_from_slice(&self.local_time.to_le_bytes());
        p
    }

    pub fn decode(p: &[u8]) -> Option<Self> {
        if p.len() != Self::LEN {
            return None;
        }
        let u64_at = |i: usize| u64::from_le_bytes(p[i..i + 8].try_into().unwrap());
        let mode_arg = u64_at(10);
        let mode = match p[9] {
            0 => TerminalMode::Normal,
            1 => TerminalMode::UnlockedUntil(mode_arg),
            2 => TerminalMode::Category(HolderSet(u8::try_from(mode_arg).ok()?)),
            _ => return None,
        };
        Some(Self {
            door: DoorState::from_parts(p[0], u64_at(1))?,
            mode,
            sensor_open: p[18] != 0,
            queued_events: u16::from_le_bytes([p[19], p[20]]),
            last_seq: u32::from_le_bytes(p[21..25].try_into().unwrap()),
            local_time: u64_at(25),
        })
    }
}

/// GET_CONFIG payload. The password is never reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfigReport {
    pub address: u8,
    pub gate_id: u8,
    pub comm_rate: CommRate,
    pub strike_release_s: u32,
    pub door_open_timeout_s: u32,
    pub clock_offset_s: i64,
}

impl ConfigReport {
    pub const LEN: usize = 19;

    pub fn encode(&self) -> Vec<u8> {
        let mut p = vec![self.address, self.gate_id, self.comm_rate.code()];
        p.extend_from_slice(&self.strike_release_s.to_le_bytes());
        p.extend_from_slice(&self.door_open_timeout_s.to_le_bytes());
        p.extend_from_slice(&self.clock_offset_s.to_le_bytes());
        p
    }

    pub fn decode(p: &[u8]) -> Option<Self> {
        if p.len() != Self::LEN {
            return None;
        }
        Some(Self {
            address: p[0],
            gate_id: p[1],
            comm_rate: CommRate::from_code(p[2])?,
            strike_release_s: u32::from_le_bytes(p[3..7].try_into().unwrap()),
            door_open_timeout_s: u32::from_le_bytes(p[7..11].try_into().unwrap()),
            clock_offset_s: i64::from_le_bytes(p[11..19].try_into().unwrap()),
        })
    }
}
