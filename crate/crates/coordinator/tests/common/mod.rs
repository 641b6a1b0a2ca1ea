#![allow(dead_code)]

use campus_bus::{Bus, BusConfig, Network, TerminalId};
use campus_coordinator::Coordinator;
use campus_tag::v1::{self, CardRecord, HolderType};
use campus_tag::SystemKey;
use campus_terminal::{Password, Terminal, TerminalConfig};
use chrono::NaiveDate;

/// Monday 2026-10-12 10:13:20 UTC.
pub const T0: u64 = 1_791_800_000;
pub const ADMIN: &str = "root";
pub const ADMIN_PW: &str = "root-pass";
pub const TERMINAL_PW: &str = "gatepw";

pub fn key() -> SystemKey {
    SystemKey::new([0x5A; 32])
}

pub fn password() -> Password {
    Password::from_text(TERMINAL_PW)
}

pub fn coordinator() -> Coordinator {
    Coordinator::create(key(), ADMIN, ADMIN_PW, T0).unwrap()
}

/// One bus per entry of `gates`; terminal `i` on a bus gets address `i + 1`
/// and gate `gates[bus][i]`.
pub fn network(gates: &[Vec<u8>], loss: f64, seed: u64) -> Network {
    let buses = gates
        .iter()
        .enumerate()
        .map(|(b, gs)| {
            let terminals = gs
                .iter()
                .enumerate()
                .map(|(i, &g)| {
                    let mut t = Terminal::new(TerminalConfig::new(i as u8 + 1, g, password()), key()).unwrap();
                    t.enable_trace();
                    t
                })
                .collect();
            let config = BusConfig {
                loss_prob: loss,
                rng_seed: seed + b as u64,
                ..BusConfig::default()
            };
            Bus::new(config, terminals).unwrap()
        })
        .collect();
    Network::new(buses)
}

/// Tells the coordinator about every terminal on `net`.
pub fn install_all(c: &mut Coordinator, net: &Network) {
    for id in net.terminal_ids() {
        let gate = net.terminal(id).unwrap().config().gate_id;
        c.install_terminal(ADMIN, id, gate, password(), T0).unwrap();
    }
}

pub fn expiry() -> NaiveDate {
    NaiveDate::from_ymd_opt(2030, 6, 30).unwrap()
}

pub fn student(personal_id: u32, gates: u64) -> CardRecord {
    let mut r = CardRecord::new(personal_id, HolderType::Student, expiry());
    r.gates = gates;
    r.schedule = v1::ALL_WEEK;
    r
}

/// Polls until the terminal completes a poll, retrying transient bus
/// failures. Returns how many events the coordinator gained.
pub fn poll_until_done(c: &mut Coordinator, net: &mut Network, id: TerminalId, now: u64) -> usize {
    let before = c.events().len();
    for _ in 0..1000 {
        match c.poll_terminal(net, id, now) {
            Ok(_) => return c.events().len() - before,
            Err(campus_coordinator::CoordError::Bus(_)) => continue,
            Err(e) => panic!("poll {id}: {e}"),
        }
    }
    panic!("terminal {id} never completed a poll");
}
