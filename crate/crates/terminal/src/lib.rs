//! Embedded gate terminal.
//!
//! A [`Terminal`] decides access from the card alone: it never asks the
//! coordinator. It drives a door strike, watches the door contact, keeps a
//! bounded queue of sequenced events until the coordinator drains and
//! acknowledges them, and answers bus commands (see [`protocol`]).

mod config;
mod decision;
mod door;
mod error;
mod event;
pub mod protocol;
mod revocation;
mod terminal;

pub use config::{CommRate, Password, TerminalConfig, MAX_ADDRESS};
pub use decision::{AccessDecision, DenyReason, GrantPath, HolderSet, TerminalMode};
pub use door::{DoorSensor, DoorState};
pub use error::TerminalError;
pub use event::{EventKind, EventQueue, EventRecord, EVENT_QUEUE_CAPACITY, EVENT_WIRE_LEN, OVERFLOW_BIT};
pub use revocation::{RevocationList, REVOCATION_CAPACITY};
pub use terminal::{TagRead, Terminal};
