use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::TagImage;
use crate::layout::{Encoding, FieldSpec, Layout};

/// Quarter-hours in a day; `Window { start: 0, end: 96 }` is all day.
pub const QUARTERS_PER_DAY: u8 = 96;

/// Daily access window in quarter-hours: access iff `start <= q < end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start: u8,
    pub end: u8,
}

impl Window {
    pub const NONE: Window = Window { start: 0, end: 0 };
    pub const ALL_DAY: Window = Window {
        start: 0,
        end: QUARTERS_PER_DAY,
    };

    pub fn new(start: u8, end: u8) -> Self {
        Self { start, end }
    }

    pub fn contains(self, quarter: u8) -> bool {
        self.start <= quarter && quarter < self.end
    }

    fn is_valid(self) -> bool {
        self.start <= self.end && self.end <= QUARTERS_PER_DAY
    }
}

/// Typed value of one layout field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldValue {
    Uint(u64),
    Date(NaiveDate),
    /// Cents; the encoding holds at most `u32::MAX`.
    Money(u64),
    Bits(Vec<u8>),
    Opaque(Vec<u8>),
    Schedule(Vec<Window>),
}

impl FieldValue {
    /// Bit set holding exactly the given bit positions in `len` bytes.
    pub fn bits_from_positions(len: usize, positions: impl IntoIterator<Item = usize>) -> Self {
        let mut bytes = vec![0u8; len];
        for p in positions {
            bytes[p / 8] |= 1 << (p % 8);
        }
        FieldValue::Bits(bytes)
    }

    pub fn as_uint(&self) -> Option<u64> {
        match self {
            FieldValue::Uint(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_date(&self) -> Option<NaiveDate> {
        match self {
            FieldValue::Date(d) => Some(*d),
            _ => None,
        }
    }

    pub fn as_money(&self) -> Option<u64> {
        match self {
            FieldValue::Money(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_bits(&self) -> Option<&[u8]> {
        match self {
            FieldValue::Bits(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_schedule(&self) -> Option<&[Window]> {
        match self {
            FieldValue::Schedule(w) => Some(w),
            _ => None,
        }
    }

    /// Set bit positions of a `Bits` value, ascending. Empty for other kinds.
    pub fn bit_positions(&self) -> Vec<usize> {
        let Some(bytes) = self.as_bits() else {
            return Vec::new();
        };
        (0..bytes.len() * 8)
            .filter(|&i| bytes[i / 8] & (1 << (i % 8)) != 0)
            .collect()
    }
}

pub(crate) fn date_epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).unwrap()
}

pub(crate) fn to_bytes(spec: &FieldSpec, value: &FieldValue) -> Result<Vec<u8>> {
    let overflow = || Error::ValueOverflow(spec.name.clone());
    let mismatch = || Error::TypeMismatch(spec.name.clone());
    let len = spec.length;
    match (spec.encoding, value) {
        (Encoding::UintLe, FieldValue::Uint(v)) => {
            if len < 8 && *v >> (8 * len) != 0 {
                return Err(overflow());
            }
            Ok(v.to_le_bytes()[..len].to_vec())
        }
        (Encoding::DateD2000, FieldValue::Date(d)) => {
            let days = d.signed_duration_since(date_epoch()).num_days();
            let days = u16::try_from(days).map_err(|_| overflow())?;
            Ok(days.to_le_bytes().to_vec())
        }
        (Encoding::MoneyCents, FieldValue::Money(c)) => {
            let c = u32::try_from(*c).map_err(|_| overflow())?;
            Ok(c.to_le_bytes().to_vec())
        }
        (Encoding::Bitset, FieldValue::Bits(b)) | (Encoding::Opaque, FieldValue::Opaque(b)) => {
            match b.len().cmp(&len) {
                std::cmp::Ordering::Greater => Err(overflow()),
                std::cmp::Ordering::Less => Err(mismatch()),
                std::cmp::Ordering::Equal => Ok(b.clone()),
            }
        }
        (Encoding::QuarterHourPair, FieldValue::Schedule(windows)) => {
            if windows.len() != len / 2 {
                return Err(mismatch());
            }
            if !windows.iter().all(|w| w.is_valid()) {
                return Err(overflow());
            }
            Ok(windows.iter().flat_map(|w| [w.start, w.end]).collect())
        }
        _ => Err(mismatch()),
    }
}

pub(crate) fn from_bytes(spec: &FieldSpec, bytes: &[u8]) -> FieldValue {
    match spec.encoding {
        Encoding::UintLe => {
            let mut buf = [0u8; 8];
            buf[..bytes.len()].copy_from_slice(bytes);
            FieldValue::Uint(u64::from_le_bytes(buf))
        }
        Encoding::DateD2000 => {
            let days = u16::from_le_bytes([bytes[0], bytes[1]]);
            FieldValue::Date(date_epoch() + Duration::days(days.into()))
        }
        Encoding::MoneyCents => FieldValue::Money(u32::from_le_bytes(bytes.try_into().unwrap()).into()),
        Encoding::Bitset => FieldValue::Bits(bytes.to_vec()),
        Encoding::Opaque => FieldValue::Opaque(bytes.to_vec()),
        Encoding::QuarterHourPair => {
            FieldValue::Schedule(bytes.chunks_exact(2).map(|p| Window::new(p[0], p[1])).collect())
        }
    }
}

/// Returns a copy of `image` with field `name` set to `value`. Only the
/// field's byte range changes.
pub fn encode_field(layout: &Layout, image: &TagImage, name: &str, value: &FieldValue) -> Result<TagImage> {
    let spec = layout.require(name)?;
    let bytes = to_bytes(spec, value)?;
    let mut out = image.clone();
    out.write(spec.offset, &bytes)?;
    Ok(out)
}

pub fn decode_field(layout: &Layout, image: &TagImage, name: &str) -> Result<FieldValue> {
    let spec = layout.require(name)?;
    Ok(from_bytes(spec, &image.bytes()[spec.range()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{v1, TagUid};

    fn blank() -> TagImage {
        TagImage::blank(TagUid::from_serial(1))
    }

    #[test]
    fn date_epoch_encodes_to_zero() {
        let img = blank();
        let mut pre = img.clone();
        pre.bytes_mut()[6] = 0xFF;
        let out = encode_field(
            v1::layout(),
            &pre,
            v1::EXPIRY_DATE,
            &FieldValue::Date(NaiveDate::from_ymd_opt(2000, 1, 1).unwrap()),
        )
        .unwrap();
        assert_eq!(&out.bytes()[6..8], &[0, 0]);
    }

    #[test]
    fn personal_id_round_trip() {
        let out = encode_field(v1::layout(), &blank(), v1::PERSONAL_ID, &FieldValue::Uint(123_456)).unwrap();
        assert_eq!(
            decode_field(v1::layout(), &out, v1::PERSONAL_ID).unwrap(),
            FieldValue::Uint(123_456)
        );
    }

    #[test]
    fn money_overflow() {
        let err = encode_field(
            v1::layout(),
            &blank(),
            v1::RESTAURANT_ACCOUNT,
            &FieldValue::Money(1 << 32),
        );
        assert_eq!(err, Err(Error::ValueOverflow(v1::RESTAURANT_ACCOUNT.into())));
    }

    #[test]
    fn uint_overflow_respects_width() {
        assert!(matches!(
            encode_field(v1::layout(), &blank(), v1::ISSUE_NUMBER, &FieldValue::Uint(256)),
            Err(Error::ValueOverflow(_))
        ));
        assert!(encode_field(v1::layout(), &blank(), v1::ISSUE_NUMBER, &FieldValue::Uint(255)).is_ok());
    }

    #[test]
    fn zero_image_flags_unlocked() {
        let flags = decode_field(v1::layout(), &blank(), v1::FLAGS).unwrap();
        assert_eq!(flags, FieldValue::Bits(vec![0]));
        assert!(!v1::is_locked(&blank()));
    }

    #[test]
    fn monday_window_from_raw_bytes() {
        let mut img = blank();
        img.bytes_mut()[42] = 32;
        img.bytes_mut()[43] = 72;
        let sched = decode_field(v1::layout(), &img, v1::SCHEDULE).unwrap();
        let monday = sched.as_schedule().unwrap()[0];
        // 32 * 15 min = 08:00, 72 * 15 min = 18:00
        assert_eq!(monday, Window::new(32, 72));
        assert!(!monday.contains(31));
        assert!(monday.contains(32));
        assert!(monday.contains(71));
        assert!(!monday.contains(72));
    }

    #[test]
    fn gate_list_bits() {
        let mut img = blank();
        img.bytes_mut()[34] = 0x05;
        let gates = decode_field(v1::layout(), &img, v1::GATE_LIST).unwrap();
        assert_eq!(gates.bit_positions(), vec![0, 2]);
    }

    #[test]
    fn unknown_field_and_locked_block() {
        assert_eq!(
            decode_field(v1::layout(), &blank(), "nope"),
            Err(Error::UnknownField("nope".into()))
        );
        let mut img = blank();
        img.lock_block(1).unwrap();
        assert_eq!(
            encode_field(v1::layout(), &img, v1::EXPIRY_DATE, &FieldValue::Date(date_epoch())),
            Err(Error::BlockLocked(1))
        );
    }

    #[test]
    fn wrong_kind_is_mismatch() {
        assert_eq!(
            encode_field(v1::layout(), &blank(), v1::PERSONAL_ID, &FieldValue::Money(1)),
            Err(Error::TypeMismatch(v1::PERSONAL_ID.into()))
        );
        assert!(matches!(
            encode_field(
                v1::layout(),
                &blank(),
                v1::SCHEDULE,
                &FieldValue::Schedule(vec![Window::new(10, 5); 7])
            ),
            Err(Error::ValueOverflow(_))
        ));
    }
}
