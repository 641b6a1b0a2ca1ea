use crate::error::{Error, Result};
use crate::uid::TagUid;

pub const BLOCK_SIZE: usize = 4;
pub const BLOCK_COUNT: usize = 64;
pub const IMAGE_LEN: usize = BLOCK_SIZE * BLOCK_COUNT;

const FILE_MAGIC: &[u8; 4] = b"TIMG";
/// `TIMG` + uid + data + lock bitmap.
pub const IMAGE_FILE_LEN: usize = 4 + 8 + IMAGE_LEN + BLOCK_COUNT / 8;

/// First block of the reserved tail (padding + signature); never lockable.
const FIRST_RESERVED_BLOCK: usize = crate::layout::PAYLOAD_END / BLOCK_SIZE;

/// Memory image of one transponder.
#[derive(Clone, PartialEq, Eq)]
pub struct TagImage {
    uid: TagUid,
    data: [u8; IMAGE_LEN],
    locks: u64,
}

impl TagImage {
    pub fn blank(uid: TagUid) -> Self {
        Self {
            uid,
            data: [0; IMAGE_LEN],
            locks: 0,
        }
    }

    pub fn uid(&self) -> TagUid {
        self.uid
    }

    /// Replaces the uid. Only useful for simulating a cloned card.
    pub fn set_uid(&mut self, uid: TagUid) {
        self.uid = uid;
    }

    pub fn bytes(&self) -> &[u8; IMAGE_LEN] {
        &self.data
    }

    pub fn block_of(offset: usize) -> usize {
        offset / BLOCK_SIZE
    }

    pub fn is_locked(&self, block: usize) -> bool {
        block < BLOCK_COUNT && self.locks & (1 << block) != 0
    }

    /// Write-protects a block. The reserved tail carrying the signature
    /// cannot be locked, so signing never fails.
    pub fn lock_block(&mut self, block: usize) -> Result<()> {
        if block >= FIRST_RESERVED_BLOCK {
            return Err(Error::BlockNotLockable(block));
        }
        self.locks |= 1 << block;
        Ok(())
    }

    /// Writes `bytes` at `offset`, rejecting the write if any touched block is locked.
    pub fn write(&mut self, offset: usize, bytes: &[u8]) -> Result<()> {
        let end = offset + bytes.len();
        assert!(end <= IMAGE_LEN, "write past end of tag memory");
        if !bytes.is_empty() {
            for block in Self::block_of(offset)..=Self::block_of(end - 1) {
                if self.is_locked(block) {
                    return Err(Error::BlockLocked(block));
                }
            }
        }
        self.data[offset..end].copy_from_slice(bytes);
        Ok(())
    }

    /// Raw write used for the signature tail; bypasses lock bits.
    pub(crate) fn write_reserved(&mut self, offset: usize, bytes: &[u8]) {
        self.data[offset..offset + bytes.len()].copy_from_slice(bytes);
    }

    /// Mutable access to the raw bytes, for fault-injection in tests and
    /// simulations. Ignores lock bits.
    pub fn bytes_mut(&mut self) -> &mut [u8; IMAGE_LEN] {
        &mut self.data
    }

    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(IMAGE_FILE_LEN);
        out.extend_from_slice(FILE_MAGIC);
        out.extend_from_slice(&self.uid.to_be_bytes());
        out.extend_from_slice(&self.data);
        out.extend_from_slice(&self.locks.to_le_bytes());
        out
    }

    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != IMAGE_FILE_LEN {
            return Err(Error::MalformedImageFile("wrong length"));
        }
        if &bytes[..4] != FILE_MAGIC {
            return Err(Error::MalformedImageFile("bad magic"));
        }
        let uid = TagUid::from_be_bytes(bytes[4..12].try_into().unwrap())
            .map_err(|_| Error::MalformedImageFile("uid prefix"))?;
        let mut data = [0; IMAGE_LEN];
        data.copy_from_slice(&bytes[12..12 + IMAGE_LEN]);
        let locks = u64::from_le_bytes(bytes[12 + IMAGE_LEN..].try_into().unwrap());
        if locks >> FIRST_RESERVED_BLOCK != 0 {
            return Err(Error::MalformedImageFile("reserved block locked"));
        }
        Ok(Self { uid, data, locks })
    }
}

impl std::fmt::Debug for TagImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TagImage")
            .field("uid", &self.uid)
            .field("locks", &format_args!("{:#018x}", self.locks))
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uid() -> TagUid {
        TagUid::from_serial(0x0102_0304)
    }

    #[test]
    fn locked_block_rejects_writes() {
        let mut img = TagImage::blank(uid());
        img.lock_block(2).unwrap();
        assert_eq!(img.write(6, &[1, 2, 3]), Err(Error::BlockLocked(2)));
        assert_eq!(img.write(7, &[1, 2]), Err(Error::BlockLocked(2)));
        img.write(12, &[9; 4]).unwrap();
        assert_eq!(&img.bytes()[12..16], &[9; 4]);
        assert!(img.bytes()[6..12].iter().all(|&b| b == 0));
    }

    #[test]
    fn reserved_tail_not_lockable() {
        let mut img = TagImage::blank(uid());
        assert_eq!(img.lock_block(61), Err(Error::BlockNotLockable(61)));
        assert!(img.lock_block(60).is_ok());
    }

    #[test]
    fn file_layout_is_bit_exact() {
        let mut img = TagImage::blank(uid());
        img.write(0, &[0xAA]).unwrap();
        img.lock_block(0).unwrap();
        img.lock_block(9).unwrap();
        let file = img.to_file_bytes();
        assert_eq!(file.len(), 276);
        assert_eq!(&file[..4], b"TIMG");
        assert_eq!(&file[4..12], &[0xE0, 0, 0, 0, 1, 2, 3, 4]);
        assert_eq!(file[12], 0xAA);
        assert_eq!(&file[268..], &[0x01, 0x02, 0, 0, 0, 0, 0, 0]);
        assert_eq!(TagImage::from_file_bytes(&file).unwrap(), img);
    }

    #[test]
    fn file_rejects_garbage() {
        assert!(TagImage::from_file_bytes(&[0; 10]).is_err());
        let mut file = TagImage::blank(uid()).to_file_bytes();
        file[0] = b'X';
        assert_eq!(
            TagImage::from_file_bytes(&file),
            Err(Error::MalformedImageFile("bad magic"))
        );
    }
}
