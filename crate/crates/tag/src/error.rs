use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("fields `{0}` and `{1}` overlap")]
    OverlappingFields(String, String),
    #[error("field `{0}` extends into the reserved region")]
    FieldOutOfRange(String),
    #[error("duplicate field name `{0}`")]
    DuplicateName(String),
    #[error("field `{0}` has a length its encoding cannot hold")]
    InvalidLength(String),
    #[error("layout id must be greater than zero")]
    InvalidLayoutId,
    #[error("no field named `{0}` in layout")]
    UnknownField(String),
    #[error("value does not fit field `{0}`")]
    ValueOverflow(String),
    #[error("value kind does not match the encoding of field `{0}`")]
    TypeMismatch(String),
    #[error("block {0} is write-protected")]
    BlockLocked(usize),
    #[error("block {0} cannot be locked")]
    BlockNotLockable(usize),
    #[error("account `{0}` would go negative")]
    InsufficientFunds(String),
    #[error("field `{0}` is not a money account")]
    NotAnAccount(String),
    #[error("uid {0:#018x} does not carry the 0xE0 prefix")]
    BadUidPrefix(u64),
    #[error("`{0}` is not a hex uid")]
    UidSyntax(String),
    #[error("malformed card image file: {0}")]
    MalformedImageFile(&'static str),
    #[error("layout file line {line}: {msg}")]
    LayoutSyntax { line: usize, msg: String },
}
