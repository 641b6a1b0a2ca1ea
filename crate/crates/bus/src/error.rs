use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("payload of {0} bytes exceeds the 1024-byte limit")]
    PayloadTooLong(usize),
    #[error("frame shorter than header and crc")]
    Truncated,
    #[error("crc mismatch")]
    BadCrc,
    #[error("length field disagrees with frame size")]
    LengthMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("no response after all retries")]
    Timeout,
    #[error("no terminal at address {0}")]
    NoSuchTerminal(u8),
    #[error("a bus carries at most 30 terminals")]
    TooManyTerminals,
    #[error("address {0} configured twice")]
    DuplicateAddress(u8),
    #[error("probabilities must lie in [0, 1]")]
    BadProbability,
    #[error("no bus {0} in network")]
    NoSuchBus(u8),
    #[error(transparent)]
    Frame(#[from] FrameError),
}
