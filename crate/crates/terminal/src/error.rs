use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TerminalError {
    #[error("invalid terminal configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("clock went backwards: {now} < {previous}")]
    ClockWentBackwards { previous: u64, now: u64 },
    #[error("wrong terminal password")]
    Auth,
    #[error("card is not registered with this system")]
    UnregisteredCard,
    #[error("layout {0} lacks the fields the terminal authorizes on")]
    UnsupportedLayout(u16),
    #[error(transparent)]
    Tag(#[from] campus_tag::Error),
}
