use std::fmt;
use std::str::FromStr;

use campus_terminal::protocol::{Command, Response};
use campus_terminal::{Password, Terminal};
use serde::{Deserialize, Serialize};

use crate::bus::Bus;
use crate::error::BusError;
use crate::frame::Frame;

/// Terminal identity across buses. Rendered as `bus:addr`, e.g. `0:05`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TerminalId {
    pub bus: u8,
    pub addr: u8,
}

impl TerminalId {
    pub fn new(bus: u8, addr: u8) -> Self {
        Self { bus, addr }
    }
}

impl fmt::Display for TerminalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:02}", self.bus, self.addr)
    }
}

impl FromStr for TerminalId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (bus, addr) = s.split_once(':').ok_or_else(|| format!("`{s}` is not bus:addr"))?;
        Ok(Self {
            bus: bus.parse().map_err(|_| format!("bad bus in `{s}`"))?,
            addr: addr.parse().map_err(|_| format!("bad address in `{s}`"))?,
        })
    }
}

impl TryFrom<String> for TerminalId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<TerminalId> for String {
    fn from(id: TerminalId) -> String {
        id.to_string()
    }
}

/// Every bus the coordinator reaches, indexed by bus number.
#[derive(Debug, Default)]
pub struct Network {
    buses: Vec<Bus>,
}

impl Network {
    pub fn new(buses: Vec<Bus>) -> Self {
        Self { buses }
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn bus_mut(&mut self, bus: u8) -> Result<&mut Bus, BusError> {
        self.buses.get_mut(bus as usize).ok_or(BusError::NoSuchBus(bus))
    }

    pub fn set_time(&mut self, now: u64) {
        for b in &mut self.buses {
            b.set_time(now);
        }
    }

    pub fn terminal(&self, id: TerminalId) -> Option<&Terminal> {
        self.buses.get(id.bus as usize)?.terminal(id.addr)
    }

    pub fn terminal_mut(&mut self, id: TerminalId) -> Option<&mut Terminal> {
        self.buses.get_mut(id.bus as usize)?.terminal_mut(id.addr)
    }

    pub fn terminal_ids(&self) -> Vec<TerminalId> {
        self.buses
            .iter()
            .enumerate()
            .flat_map(|(b, bus)| bus.addresses().into_iter().map(move |a| TerminalId::new(b as u8, a)))
            .collect()
    }

    /// Discovers terminals on every bus.
    pub fn discover(&mut self, rounds: u32) -> Vec<TerminalId> {
        self.buses
            .iter_mut()
            .enumerate()
            .flat_map(|(b, bus)| {
                bus.discover(rounds)
                    .into_iter()
                    .map(move |a| TerminalId::new(b as u8, a))
            })
            .collect()
    }

    /// Encodes `cmd`, runs it through the bus with retries and parses the answer.
    pub fn request(
        &mut self,
        id: TerminalId,
        cmd: &Command,
        password: &Password,
        retries: u32,
    ) -> Result<Response, BusError> {
        let (code, payload) = cmd.encode(password);
        let reply = self
            .bus_mut(id.bus)?
            .transact(&Frame::new(id.addr, code, payload), retries)?;
        // a CRC-valid reply that does not parse is treated like silence
        Response::from_parts(reply.code, &reply.payload).ok_or(BusError::Timeout)
    }
}
