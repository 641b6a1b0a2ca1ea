use crate::crc::crc16_ccitt_false;
use crate::error::FrameError;

pub const MASTER: u8 = 0x00;
pub const BROADCAST: u8 = 0xFF;
pub const MAX_PAYLOAD: usize = 1024;
/// addr + code + len.
pub const HEADER_LEN: usize = 4;
const CRC_LEN: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    pub addr: u8,
    pub code: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(addr: u8, code: u8, payload: Vec<u8>) -> Self {
        Self { addr, code, payload }
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        let len = self.payload.len();
        if len > MAX_PAYLOAD {
            return Err(FrameError::PayloadTooLong(len));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + len + CRC_LEN);
        out.push(self.addr);
        out.push(self.code);
        out.extend_from_slice(&(len as u16).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc16_ccitt_false(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Decodes one complete frame. The bus delivers frames whole, so the
    /// CRC is taken from the last two bytes and checked before the length
    /// field is trusted.
    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < HEADER_LEN + CRC_LEN {
            return Err(FrameError::Truncated);
        }
        let (body, crc) = bytes.split_at(bytes.len() - CRC_LEN);
        if crc16_ccitt_false(body) != u16::from_le_bytes([crc[0], crc[1]]) {
            return Err(FrameError::BadCrc);
        }
        let len = u16::from_le_bytes([body[2], body[3]]) as usize;
        if len > MAX_PAYLOAD || body.len() != HEADER_LEN + len {
            return Err(FrameError::LengthMismatch);
        }
        Ok(Self {
            addr: body[0],
            code: body[1],
            payload: body[HEADER_LEN..].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_input_is_truncated() {
        assert_eq!(Frame::decode(&[1, 2, 3]), Err(FrameError::Truncated));
    }

    #[test]
    fn oversize_payload_rejected() {
        let f = Frame::new(1, 1, vec![0; MAX_PAYLOAD + 1]);
        assert_eq!(f.encode(), Err(FrameError::PayloadTooLong(1025)));
        assert!(Frame::new(1, 1, vec![0; MAX_PAYLOAD]).encode().is_ok());
    }

    #[test]
    fn dropped_byte_is_detected() {
        let bytes = Frame::new(2, 3, vec![9, 9, 9]).encode().unwrap();
        let mut short = bytes.clone();
        short.remove(5);
        assert_eq!(Frame::decode(&short), Err(FrameError::BadCrc));
    }
}
