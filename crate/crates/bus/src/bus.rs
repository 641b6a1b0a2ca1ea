use std::collections::{BTreeMap, BTreeSet};

use campus_terminal::protocol::{self, Response};
use campus_terminal::Terminal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::BusError;
use crate::frame::{Frame, BROADCAST, MASTER};

pub const MAX_TERMINALS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusConfig {
    /// Probability that a frame (either direction) vanishes.
    pub loss_prob: f64,
    /// Probability that a delivered frame has one bit flipped.
    pub corrupt_prob: f64,
    pub rng_seed: u64,
    /// Width of one discovery reply slot; terminal `a` answers at `a * slot_ms`.
    pub slot_ms: u32,
}

impl Default for BusConfig {
    fn default() -> Self {
        Self {
            loss_prob: 0.0,
            corrupt_prob: 0.0,
            rng_seed: 0,
            slot_ms: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BusStats {
    pub frames_sent: u64,
    pub frames_lost: u64,
    pub frames_corrupted: u64,
    pub timeouts: u64,
    /// Simulated medium time spent in discovery slots.
    pub discovery_ms: u64,
}

/// One master and its terminals. The master owns the medium: exactly one
/// transaction is in flight at a time.
#[derive(Debug)]
pub struct Bus {
    config: BusConfig,
    terminals: BTreeMap<u8, Terminal>,
    rng: ChaCha8Rng,
    now: u64,
    connected: bool,
    stats: BusStats,
}

impl Bus {
    pub fn new(config: BusConfig, terminals: Vec<Terminal>) -> Result<Self, BusError> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(config.loss_prob) || !prob_ok(config.corrupt_prob) {
            return Err(BusError::BadProbability);
        }
        if terminals.len() > MAX_TERMINALS {
            return Err(BusError::TooManyTerminals);
        }
        let mut map = BTreeMap::new();
        for t in terminals {
            let addr = t.address();
            if map.insert(addr, t).is_some() {
                return Err(BusError::DuplicateAddress(addr));
            }
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            config,
            terminals: map,
            now: 0,
            connected: true,
            stats: BusStats::default(),
        })
    }

    pub fn config(&self) -> &BusConfig {
        &self.config
    }

    pub fn set_fault_model(&mut self, loss_prob: f64, corrupt_prob: f64) {
        self.config.loss_prob = loss_prob.clamp(0.0, 1.0);
        self.config.corrupt_prob = corrupt_prob.clamp(0.0, 1.0);
    }

    /// A disconnected bus loses every frame; terminals keep running.
    pub fn set_connected(&mut self, connected: bool) {
        self.connected = connected;
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    /// Bus clock handed to terminals with each command.
    pub fn set_time(&mut self, now: u64) {
        self.now = now;
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn stats(&self) -> BusStats {
        self.stats
    }

    pub fn addresses(&self) -> BTreeSet<u8> {
        self.terminals.keys().copied().collect()
    }

    pub fn terminal(&self, addr: u8) -> Option<&Terminal> {
        self.terminals.get(&addr)
    }

    /// Direct access to a terminal's physical side (reader, door contact).
    pub fn terminal_mut(&mut self, addr: u8) -> Option<&mut Terminal> {
        self.terminals.get_mut(&addr)
    }

    pub fn terminals_mut(&mut self) -> impl Iterator<Item = &mut Terminal> {
        self.terminals.values_mut()
    }

    /// Pushes `bytes` through the medium. `None` means nothing arrived.
    fn carry(&mut self, bytes: &[u8]) -> Option<Vec<u8>> {
        self.stats.frames_sent += 1;
        if !self.connected || self.rng.gen_bool(self.config.loss_prob) {
            self.stats.frames_lost += 1;
            return None;
        }
        let mut out = bytes.to_vec();
        if self.rng.gen_bool(self.config.corrupt_prob) {
            let bit = self.rng.gen_range(0..out.len() * 8);
            out[bit / 8] ^= 1 << (bit % 8);
            self.stats.frames_corrupted += 1;
        }
        Some(out)
    }

    /// Request bytes arrive at `addr`; the terminal answers with its own
    /// address in the response frame. Corrupt requests get no answer.
    fn deliver(&mut self, addr: u8, wire: &[u8]) -> Option<Vec<u8>> {
        let request = Frame::decode(wire).ok()?;
        if request.addr != addr && request.addr != BROADCAST {
            return None;
        }
        let now = self.now;
        let terminal = self.terminals.get_mut(&addr)?;
        let response = terminal.handle_command(request.code, &request.payload, now);
        let frame = Frame::new(addr, response.code(), response.payload());
        Some(frame.encode().expect("terminal responses fit in a frame"))
    }

    /// Sends `frame` and waits for the addressed terminal's answer,
    /// retrying up to `retries` more times on silence. Broadcast frames
    /// are delivered once to every terminal and acknowledged by the master
    /// itself, since terminals never answer a broadcast.
    pub fn transact(&mut self, frame: &Frame, retries: u32) -> Result<Frame, BusError> {
        let wire = frame.encode()?;
        if frame.addr == BROADCAST {
            let addrs: Vec<u8> = self.terminals.keys().copied().collect();
            for addr in addrs {
                if let Some(arrived) = self.carry(&wire) {
                    self.deliver(addr, &arrived);
                }
            }
            return Ok(Frame::new(MASTER, protocol::RESP_ACK, Vec::new()));
        }
        if !self.terminals.contains_key(&frame.addr) {
            return Err(BusError::NoSuchTerminal(frame.addr));
        }
        for _ in 0..=retries {
            let Some(arrived) = self.carry(&wire) else { continue };
            let Some(reply) = self.deliver(frame.addr, &arrived) else {
                continue;
            };
            let Some(back) = self.carry(&reply) else { continue };
            match Frame::decode(&back) {
                Ok(f) if f.addr == frame.addr => return Ok(f),
                _ => continue,
            }
        }
        self.stats.timeouts += 1;
        Err(BusError::Timeout)
    }

    /// One DISCOVER broadcast. Every terminal that hears it answers in its
    /// own slot, so replies never collide.
    pub fn discover_round(&mut self) -> BTreeSet<u8> {
        let wire = Frame::new(BROADCAST, protocol::DISCOVER, Vec::new())
            .encode()
            .expect("empty payload");
        let mut found = BTreeSet::new();
        let addrs: Vec<u8> = self.terminals.keys().copied().collect();
        for addr in addrs {
            let Some(arrived) = self.carry(&wire) else { continue };
            let Some(reply) = self.deliver(addr, &arrived) else {
                continue;
            };
            let Some(back) = self.carry(&reply) else { continue };
            if let Ok(f) = Frame::decode(&back) {
                if let Some(Response::Data(p)) = Response::from_parts(f.code, &f.payload) {
                    if p.first() == Some(&f.addr) {
                        found.insert(f.addr);
                    }
                }
            }
        }
        self.stats.discovery_ms += u64::from(self.config.slot_ms) * (MAX_TERMINALS as u64 + 1);
        found
    }

    /// Union of `rounds` discovery rounds.
    pub fn discover(&mut self, rounds: u32) -> BTreeSet<u8> {
        let mut found = BTreeSet::new();
        for _ in 0..rounds {
            found.extend(self.discover_round());
        }
        found
    }
}
