use campus_bus::{BusError, TerminalId};
use campus_tag::TagUid;
use campus_terminal::protocol::ErrorCode;
use thiserror::Error;

use crate::model::Role;

#[derive(Debug, Error)]
pub enum CoordError {
    #[error("role {need:?} required")]
    AuthDenied { need: Role },
    #[error("bad username or password")]
    BadCredentials,
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("user `{0}` already exists")]
    DuplicateUser(String),
    #[error("operation would leave no ADMIN account")]
    LastAdmin,
    #[error("personal id {personal_id} already holds active card {uid}")]
    DuplicateActiveCard { personal_id: u32, uid: TagUid },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown card {0}")]
    UnknownCard(TagUid),
    #[error("card {0} on the reader does not carry a valid signature")]
    UnverifiedCard(TagUid),
    #[error("unknown terminal {0}")]
    UnknownTerminal(TerminalId),
    #[error("no password on record for terminal {0}")]
    NoTerminalPassword(TerminalId),
    #[error("terminal {0} rejected the command: {1:?}")]
    Rejected(TerminalId, ErrorCode),
    #[error("terminal {0} sent an unexpected reply")]
    BadReply(TerminalId),
    #[error("unknown layout {0}")]
    UnknownLayout(u16),
    #[error("layout {0} already defined")]
    LayoutExists(u16),
    #[error("unknown alarm {0}")]
    UnknownAlarm(u64),
    #[error("unknown alarm rule {0}")]
    UnknownRule(u64),
    #[error("report range is empty: from {from} > to {to}")]
    BadRange { from: u64, to: u64 },
    #[error("mobile log line {line}: {msg}")]
    MalformedLog { line: usize, msg: String },
    #[error("store passphrase rejected")]
    BadPassphrase,
    #[error("corrupt store container: {0}")]
    CorruptContainer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Tag(#[from] campus_tag::Error),
}

pub type Result<T> = std::result::Result<T, CoordError>;
