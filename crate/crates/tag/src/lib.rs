//! Transponder memory model for the campus access system.
//!
//! A card is a 256-byte block-addressed memory image plus a 64-bit UID. What
//! the bytes mean is described by a [`Layout`]: a user-definable template of
//! named fields, each with a fixed byte range and encoding. Layout 1
//! ([`v1::layout`]) is the default card record issued by the coordinator.
//!
//! Cards carry a truncated keyed MAC in their last eight bytes so that
//! terminals can tell cards issued by this system from copies or cards
//! written by other tools.

mod account;
mod codec;
mod error;
mod image;
mod layout;
mod reader;
mod sign;
mod uid;
pub mod v1;

pub use account::apply_transaction;
pub use codec::{decode_field, encode_field, FieldValue, Window};
pub use error::{Error, Result};
pub use image::{TagImage, BLOCK_COUNT, BLOCK_SIZE, IMAGE_FILE_LEN, IMAGE_LEN};
pub use layout::{define_layout, Encoding, FieldSpec, Layout, PAYLOAD_END};
pub use reader::{ReaderFieldModel, CARRIER_HZ, MAX_RANGE_CM, MIN_RANGE_CM};
pub use sign::{sign_card, verify_card, SystemKey, MAC_LEN, MAC_OFFSET};
pub use uid::TagUid;
