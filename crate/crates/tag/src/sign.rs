use hmac::{Hmac, Mac};
use sha2::Sha256;

use crate::image::TagImage;
use crate::layout::PAYLOAD_END;

pub const MAC_OFFSET: usize = 248;
pub const MAC_LEN: usize = 8;

type HmacSha256 = Hmac<Sha256>;

/// Secret shared by the coordinator and every terminal, used to sign cards.
#[derive(Clone, PartialEq, Eq)]
pub struct SystemKey([u8; 32]);

impl SystemKey {
    pub fn new(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    fn mac(&self, image: &TagImage) -> HmacSha256 {
        let mut mac = HmacSha256::new_from_slice(&self.0).expect("hmac accepts any key length");
        mac.update(&image.uid().to_be_bytes());
        mac.update(&image.bytes()[..PAYLOAD_END]);
        mac
    }
}

impl std::fmt::Debug for SystemKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SystemKey(..)")
    }
}

/// HMAC-SHA256 over `uid || bytes[0..244]`, truncated to 8 bytes and stored
/// at 248..256. Padding bytes 244..248 are zeroed.
pub fn sign_card(key: &SystemKey, image: &TagImage) -> TagImage {
    let tag = key.mac(image).finalize().into_bytes();
    let mut out = image.clone();
    out.write_reserved(PAYLOAD_END, &[0; MAC_OFFSET - PAYLOAD_END]);
    out.write_reserved(MAC_OFFSET, &tag[..MAC_LEN]);
    out
}

/// Also rejects nonzero padding, so every byte of a signed card is checked.
pub fn verify_card(key: &SystemKey, image: &TagImage) -> bool {
    image.bytes()[PAYLOAD_END..MAC_OFFSET].iter().all(|&b| b == 0)
        && key
            .mac(image)
            .verify_truncated_left(&image.bytes()[MAC_OFFSET..MAC_OFFSET + MAC_LEN])
            .is_ok()
}
