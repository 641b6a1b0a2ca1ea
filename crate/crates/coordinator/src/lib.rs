//! Central coordinator: card registry, rights propagation, terminal event
//! sync, reports, alarms, operator accounts and the encrypted store.
//!
//! All state lives in [`State`] and changes only through journaled
//! [`Mutation`]s, so a store file (snapshot + journal) restores the exact
//! state it was written from.

mod coordinator;
mod error;
mod model;
mod report;
pub mod store;
mod users;

pub use coordinator::{
    Coordinator, Delivery, LockAck, PollReport, QueuedWrite, UserAction, UserSummary, WritePlan, DEFAULT_RETRIES,
    DRAIN_BATCH,
};
pub use error::{CoordError, Result};
pub use model::{
    field_bytes, field_value, Alarm, AlarmRule, CardRegistryEntry, ConflictRecord, DoorStatus, DoorView, FieldStamp,
    LogEntry, MobileOp, MobileRecord, Mutation, PendingCommand, Role, Sighting, Source, State, StoredEvent,
    TerminalInfo, UserAccount,
};
pub use report::{PersonFilter, ReportFormat, ReportQuery, SortKey, CSV_HEADER};
pub use users::{hash_password, verify_password};
