use crate::codec::{encode_field, FieldValue};
use crate::error::{Error, Result};
use crate::image::TagImage;
use crate::layout::{Encoding, Layout};

/// Adds `delta_cents` to a MONEY-CENTS field. The caller re-signs the card.
pub fn apply_transaction(layout: &Layout, image: &TagImage, account_field: &str, delta_cents: i64) -> Result<TagImage> {
    let spec = layout.require(account_field)?;
    if spec.encoding != Encoding::MoneyCents {
        return Err(Error::NotAnAccount(account_field.to_string()));
    }
    let raw = &image.bytes()[spec.range()];
    let balance = i64::from(u32::from_le_bytes(raw.try_into().unwrap()));
    let next = balance
        .checked_add(delta_cents)
        .ok_or_else(|| Error::ValueOverflow(account_field.to_string()))?;
    if next < 0 {
        return Err(Error::InsufficientFunds(account_field.to_string()));
    }
    encode_field(layout, image, account_field, &FieldValue::Money(next as u64))
}
