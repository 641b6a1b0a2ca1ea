//! Multi-drop bus between the master and up to 30 terminals.
//!
//! Frames are `[addr][code][len u16 LE][payload][crc u16 LE]` with
//! CRC-16/CCITT-FALSE over everything before the CRC. A terminal that
//! receives a frame with a bad CRC stays silent; the master retries.
//! [`Bus`] simulates loss and bit corruption from a seeded RNG so that
//! every run is reproducible.

mod bus;
mod crc;
mod error;
mod frame;
mod inventory;
mod network;

pub use bus::{Bus, BusConfig, BusStats, MAX_TERMINALS};
pub use crc::crc16_ccitt_false;
pub use error::{BusError, FrameError};
pub use frame::{Frame, BROADCAST, HEADER_LEN, MASTER, MAX_PAYLOAD};
pub use inventory::{inventory, FieldPresence};
pub use network::{Network, TerminalId};
