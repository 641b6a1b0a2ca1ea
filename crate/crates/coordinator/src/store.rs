//! Encrypted container: `"CGDB"`, version, 16-byte salt, 24-byte nonce, then
//! XChaCha20-Poly1305 ciphertext. The key is argon2id(passphrase, salt); the
//! header is bound as associated data.
//!
//! The ciphertext starts with a 16-byte key check (the empty message sealed
//! under nonce ^ 1) followed by the sealed body. A failing key check means a
//! wrong passphrase; a failing body under a good key means damage.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use argon2::Argon2;
use chacha20poly1305::aead::{Aead, AeadCore, KeyInit, OsRng, Payload};
use chacha20poly1305::{Key, XChaCha20Poly1305, XNonce};
use rand::RngCore;

use crate::error::{CoordError, Result};

pub const MAGIC: &[u8; 4] = b"CGDB";
pub const VERSION: u8 = 1;
pub const SALT_LEN: usize = 16;
pub const NONCE_LEN: usize = 24;
pub const HEADER_LEN: usize = 4 + 1 + SALT_LEN + NONCE_LEN;
const TAG_LEN: usize = 16;

/// Passphrase-derived key, cached so repeated saves skip the KDF.
#[derive(Clone)]
pub struct StoreKey {
    salt: [u8; SALT_LEN],
    key: Key,
}

impl std::fmt::Debug for StoreKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("StoreKey(..)")
    }
}

impl StoreKey {
    /// Fresh random salt.
    pub fn generate(passphrase: &str) -> Self {
        let mut salt = [0u8; SALT_LEN];
        OsRng.fill_bytes(&mut salt);
        Self::derive(passphrase, salt)
    }

    pub fn derive(passphrase: &str, salt: [u8; SALT_LEN]) -> Self {
        let mut key = Key::default();
        Argon2::default()
            .hash_password_into(passphrase.as_bytes(), &salt, &mut key)
            .expect("salt length is valid");
        Self { salt, key }
    }
}

fn segment_nonce(base: &XNonce, segment: u8) -> XNonce {
    let mut n = *base;
    n[NONCE_LEN - 1] ^= segment;
    n
}

pub fn seal(key: &StoreKey, plaintext: &[u8]) -> Vec<u8> {
    let nonce = XChaCha20Poly1305::generate_nonce(&mut OsRng);
    let mut out = Vec::with_capacity(HEADER_LEN + 2 * TAG_LEN + plaintext.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&key.salt);
    out.extend_from_slice(&nonce);
    let cipher = XChaCha20Poly1305::new(&key.key);
    let check = cipher
        .encrypt(&segment_nonce(&nonce, 1), Payload { msg: b"", aad: &out })
        .expect("in-memory encryption");
    let body = cipher
        .encrypt(
            &nonce,
            Payload {
                msg: plaintext,
                aad: &out,
            },
        )
        .expect("in-memory encryption");
    out.extend_from_slice(&check);
    out.extend_from_slice(&body);
    out
}

/// Decrypts a container. Returns the plaintext and the key for re-sealing.
pub fn open(bytes: &[u8], passphrase: &str) -> Result<(Vec<u8>, StoreKey)> {
    if bytes.len() < HEADER_LEN + 2 * TAG_LEN {
        return Err(CoordError::CorruptContainer(format!(
            "{} bytes is too short",
            bytes.len()
        )));
    }
    let (header, rest) = bytes.split_at(HEADER_LEN);
    if &header[..4] != MAGIC {
        return Err(CoordError::CorruptContainer("bad magic".into()));
    }
    if header[4] != VERSION {
        return Err(CoordError::CorruptContainer(format!(
            "unsupported version {}",
            header[4]
        )));
    }
    let salt: [u8; SALT_LEN] = header[5..5 + SALT_LEN].try_into().unwrap();
    let nonce = XNonce::from_slice(&header[5 + SALT_LEN..]);
    let key = StoreKey::derive(passphrase, salt);
    let cipher = XChaCha20Poly1305::new(&key.key);
    let (check, body) = rest.split_at(TAG_LEN);
    cipher
        .decrypt(
            &segment_nonce(nonce, 1),
            Payload {
                msg: check,
                aad: header,
            },
        )
        .map_err(|_| CoordError::BadPassphrase)?;
    let plaintext = cipher
        .decrypt(nonce, Payload { msg: body, aad: header })
        .map_err(|_| CoordError::CorruptContainer("ciphertext truncated or damaged".into()))?;
    Ok((plaintext, key))
}

/// Writes through a sibling temp file and a rename, so a crash leaves either
/// the old or the new file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// `campus-YYYYMMDDThhmmssZ.cgdb`
pub fn backup_file_name(now: u64) -> String {
    let dt = chrono::DateTime::from_timestamp(now as i64, 0).unwrap_or_default();
    format!("campus-{}.cgdb", dt.format("%Y%m%dT%H%M%SZ"))
}
