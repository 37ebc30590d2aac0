//! Binary framing for external denoisers.
//!
//! Every message is one frame, all integers little-endian:
//!
//! ```text
//! "OSRD" | version u16 | opcode u16 | payload length u64 | payload
//! ```
//!
//! Tensor payloads are
//!
//! ```text
//! rank u8 | dims u32 x rank | dtype u8 (0 = f32, 1 = f64) | raw samples | t u32 | T u32 | m u32
//! ```
//!
//! `hello` carries a UTF-8 peer name, `error` a UTF-8 message, `shutdown`
//! nothing; every other opcode carries a tensor payload. Requests that have
//! no tensor to send (`predict`, `finalize`) send a rank-1 tensor with zero
//! elements so the step metadata still travels.

use std::io::{self, Read, Write};

use crate::io::{decode_samples, encode_samples, DType};

pub const FRAME_MAGIC: &[u8; 4] = b"OSRD";
pub const PROTOCOL_VERSION: u16 = 1;
pub const FRAME_HEADER_LEN: usize = 16;
/// Frames larger than this are rejected before allocation.
pub const MAX_PAYLOAD: u64 = 1 << 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Opcode {
    Hello = 0,
    Init = 1,
    Predict = 2,
    Advance = 3,
    Finalize = 4,
    Shutdown = 5,
    Error = 255,
}

impl Opcode {
    pub fn from_u16(v: u16) -> Option<Self> {
        Some(match v {
            0 => Opcode::Hello,
            1 => Opcode::Init,
            2 => Opcode::Predict,
            3 => Opcode::Advance,
            4 => Opcode::Finalize,
            5 => Opcode::Shutdown,
            255 => Opcode::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("connection failed: {0}")]
    Connection(#[source] io::Error),
    #[error("timed out waiting for the denoiser")]
    Timeout,
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("protocol version mismatch: local {local}, remote {remote}")]
    VersionMismatch { local: u16, remote: u16 },
    #[error("unknown opcode {0}")]
    UnknownOpcode(u16),
    #[error("unexpected {got:?} frame, expected {expected:?}")]
    Unexpected { expected: Opcode, got: Opcode },
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("tensor shape mismatch: sent {sent:?}, received {received:?}")]
    ShapeMismatch { sent: Vec<u32>, received: Vec<u32> },
    #[error("remote error: {0}")]
    Remote(String),
}

impl ProtocolError {
    fn from_io(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ProtocolError::Timeout,
            _ => ProtocolError::Connection(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub version: u16,
    pub opcode: Opcode,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(opcode: Opcode, payload: Vec<u8>) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            opcode,
            payload,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.payload.len());
        out.extend_from_slice(FRAME_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.opcode as u16).to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ProtocolError> {
        w.write_all(&self.encode()).map_err(ProtocolError::from_io)?;
        w.flush().map_err(ProtocolError::from_io)
    }

    /// Reads one frame. Version is reported, not checked; callers decide.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ProtocolError> {
        let mut header = [0u8; FRAME_HEADER_LEN];
        r.read_exact(&mut header).map_err(ProtocolError::from_io)?;
        let magic: [u8; 4] = header[..4].try_into().unwrap();
        if &magic != FRAME_MAGIC {
            return Err(ProtocolError::BadMagic(magic));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        let op = u16::from_le_bytes([header[6], header[7]]);
        let opcode = Opcode::from_u16(op).ok_or(ProtocolError::UnknownOpcode(op))?;
        let len = u64::from_le_bytes(header[8..16].try_into().unwrap());
        if len > MAX_PAYLOAD {
            return Err(ProtocolError::Malformed(format!("payload of {len} bytes exceeds limit")));
        }
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload).map_err(ProtocolError::from_io)?;
        Ok(Self {
            version,
            opcode,
            payload,
        })
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }
}

/// Step metadata attached to every tensor payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepMeta {
    pub t: u32,
    pub total_steps: u32,
    pub planes: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorPayload {
    pub dims: Vec<u32>,
    pub dtype: DType,
    pub data: Vec<f64>,
    pub meta: StepMeta,
}

impl TensorPayload {
    pub fn empty(meta: StepMeta) -> Self {
        Self {
            dims: vec![0],
            dtype: DType::F32,
            data: Vec::new(),
            meta,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + 4 * self.dims.len() + self.data.len() * self.dtype.size() + 12);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(self.dtype as u8);
        encode_samples(&mut out, &self.data, self.dtype);
        out.extend_from_slice(&self.meta.t.to_le_bytes());
        out.extend_from_slice(&self.meta.total_steps.to_le_bytes());
        out.extend_from_slice(&self.meta.planes.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let bad = |m: &str| ProtocolError::Malformed(m.to_string());
        let rank = *bytes.first().ok_or_else(|| bad("empty tensor payload"))? as usize;
        let header = 1 + 4 * rank + 1;
        if bytes.len() < header + 12 {
            return Err(bad("truncated tensor header"));
        }
        let dims: Vec<u32> = bytes[1..1 + 4 * rank]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let dtype = DType::from_u8(bytes[header - 1]).ok_or_else(|| bad("unknown dtype"))?;
        let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let nbytes = count
            .and_then(|c| c.checked_mul(dtype.size()))
            .ok_or_else(|| bad("tensor size overflows"))?;
        if bytes.len() != header + nbytes + 12 {
            return Err(ProtocolError::Malformed(format!(
                "declared {nbytes} data bytes, payload holds {}",
                bytes.len().saturating_sub(header + 12)
            )));
        }
        let data = decode_samples(&bytes[header..header + nbytes], dtype);
        let m = &bytes[header + nbytes..];
        let word = |i: usize| u32::from_le_bytes(m[4 * i..4 * i + 4].try_into().unwrap());
        Ok(Self {
            dims,
            dtype,
            data,
            meta: StepMeta {
                t: word(0),
                total_steps: word(1),
                planes: word(2),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_header_layout() {
        let f = Frame::new(Opcode::Advance, vec![9, 8]);
        let bytes = f.encode();
        assert_eq!(&bytes[..4], b"OSRD");
        assert_eq!(&bytes[4..8], &[1, 0, 3, 0]);
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..], &[9, 8]);
        assert_eq!(Frame::read_from(&mut &bytes[..]).unwrap(), f);
    }

    #[test]
    fn tensor_payload_layout() {
        let p = TensorPayload {
            dims: vec![1, 2],
            dtype: DType::F64,
            data: vec![0.5, -1.0],
            meta: StepMeta { t: 3, total_steps: 7, planes: 18 },
        };
        let b = p.encode();
        assert_eq!(b[0], 2);
        assert_eq!(&b[1..9], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(b[9], 1);
        assert_eq!(&b[10..18], &0.5f64.to_le_bytes());
        assert_eq!(&b[26..], &[3, 0, 0, 0, 7, 0, 0, 0, 18, 0, 0, 0]);
        assert_eq!(TensorPayload::decode(&b).unwrap(), p);
    }

    #[test]
    fn rejects_bad_magic_and_opcode() {
        let mut bytes = Frame::new(Opcode::Hello, vec![]).encode();
        bytes[0] = b'X';
        assert!(matches!(Frame::read_from(&mut &bytes[..]), Err(ProtocolError::BadMagic(_))));
        let mut bytes = Frame::new(Opcode::Hello, vec![]).encode();
        bytes[6] = 42;
        assert!(matches!(Frame::read_from(&mut &bytes[..]), Err(ProtocolError::UnknownOpcode(42))));
        let short = &Frame::new(Opcode::Hello, vec![1, 2, 3]).encode()[..18];
        assert!(matches!(Frame::read_from(&mut &short[..]), Err(ProtocolError::Connection(_))));
    }

    #[test]
    fn rejects_inconsistent_tensor() {
        let mut b = TensorPayload::empty(StepMeta::default()).encode();
        b[1] = 3;
        assert!(matches!(TensorPayload::decode(&b), Err(ProtocolError::Malformed(_))));
    }

    proptest! {
        #[test]
        fn f32_payload_round_trips_bit_exact(vals in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..200)) {
            let p = TensorPayload {
                dims: vec![vals.len() as u32],
                dtype: DType::F32,
                data: vals.iter().map(|&v| v as f64).collect(),
                meta: StepMeta { t: 1, total_steps: 2, planes: 3 },
            };
            let back = TensorPayload::decode(&p.encode()).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
