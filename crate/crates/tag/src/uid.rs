use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 64-bit transponder serial number. The most significant byte is always 0xE0.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TagUid(u64);

impl TagUid {
    pub const PREFIX: u8 = 0xE0;

    pub fn new(value: u64) -> Result<Self> {
        if (value >> 56) as u8 != Self::PREFIX {
            return Err(Error::BadUidPrefix(value));
        }
        Ok(Self(value))
    }

    /// Builds a uid from the low 56 bits of `serial`, forcing the prefix.
    pub fn from_serial(serial: u64) -> Self {
        Self(((Self::PREFIX as u64) << 56) | (serial & 0x00FF_FFFF_FFFF_FFFF))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn to_be_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }

    pub fn from_be_bytes(bytes: [u8; 8]) -> Result<Self> {
        Self::new(u64::from_be_bytes(bytes))
    }
}

impl fmt::Display for TagUid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016X}", self.0)
    }
}

impl fmt::Debug for TagUid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TagUid({self})")
    }
}

impl FromStr for TagUid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim_start_matches("0x");
        let value = u64::from_str_radix(digits, 16).map_err(|_| Error::UidSyntax(s.to_string()))?;
        Self::new(value)
    }
}

impl TryFrom<String> for TagUid {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TagUid> for String {
    fn from(uid: TagUid) -> String {
        uid.to_string()
    }
}
