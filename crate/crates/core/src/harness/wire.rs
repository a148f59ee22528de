//! Length-prefixed binary framing of protocol messages.
//!
//! ```text
//! +----------------+-----+---------------------+
//! | length: u32 BE | tag | payload             |
//! +----------------+-----+---------------------+
//! ```
//!
//! `length` counts the tag byte plus the payload. Inside payloads every number is little-endian:
//! slot vectors are a u32 count followed by f64 values, ciphertexts and partial shares use the
//! engine encodings, digests are 32 raw bytes, and index arrays (canary positions, permutations)
//! are a u32 count followed by u32 entries.
//!
//! | tag  | message        | payload                                                  |
//! |------|----------------|----------------------------------------------------------|
//! | 0x01 | SubmitInput    | ct                                                       |
//! | 0x02 | EvalRequest    | input ct, degree u8, then degree+1 parameter cts         |
//! | 0x03 | EvalResult     | ct                                                       |
//! | 0x04 | CheckRequest   | masked ct, share, positions                              |
//! | 0x05 | CheckResponse  | 32-byte digest                                           |
//! | 0x06 | Unmask         | rand vector, permutation                                 |
//! | 0x07 | Abort          | u32 length, UTF-8 reason                                 |

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::engine::{EngineError, MockCiphertext, PartialShare, SlotVector};
use crate::protocol::ProtocolMessage;

/// Frames above this size are rejected before allocation.
pub const MAX_FRAME: usize = 1 << 28;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("empty frame")]
    Empty,
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<EngineError> for WireError {
    fn from(e: EngineError) -> Self {
        WireError::Malformed(e.to_string())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| WireError::Malformed("truncated".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn ct(&mut self) -> Result<MockCiphertext, WireError> {
        let (ct, used) = MockCiphertext::decode(&self.buf[self.pos..])?;
        self.pos += used;
        Ok(ct)
    }

    fn slots(&mut self) -> Result<SlotVector, WireError> {
        let (v, used) = SlotVector::decode(&self.buf[self.pos..])?;
        self.pos += used;
        Ok(v)
    }

    fn indices(&mut self) -> Result<Vec<u32>, WireError> {
        let n = self.u32()? as usize;
        if n > self.buf.len() / 4 {
            return Err(WireError::Malformed("index count".into()));
        }
        (0..n).map(|_| self.u32()).collect()
    }

    fn finish(self) -> Result<(), WireError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(WireError::Trailing(n)),
        }
    }
}

fn put_indices(out: &mut Vec<u8>, idx: &[u32]) {
    out.extend_from_slice(&(idx.len() as u32).to_le_bytes());
    for i in idx {
        out.extend_from_slice(&i.to_le_bytes());
    }
}

/// Encodes `tag ‖ payload` (the frame body, without the length prefix).
pub fn encode_body(msg: &ProtocolMessage) -> Vec<u8> {
    let mut out = vec![msg.tag()];
    match msg {
        ProtocolMessage::SubmitInput { ct } => ct.encode_into(&mut out),
        ProtocolMessage::EvalRequest {
            input_ct,
            param_cts,
            degree,
        } => {
            input_ct.encode_into(&mut out);
            out.push(*degree);
            for ct in param_cts {
                ct.encode_into(&mut out);
            }
        }
        ProtocolMessage::EvalResult { result_ct } => result_ct.encode_into(&mut out),
        ProtocolMessage::CheckRequest {
            masked_ct,
            provider_share,
            canary_positions,
        } => {
            masked_ct.encode_into(&mut out);
            provider_share.encode_into(&mut out);
            put_indices(&mut out, canary_positions);
        }
        ProtocolMessage::CheckResponse { hash_digest } => out.extend_from_slice(hash_digest),
        ProtocolMessage::Unmask { rand, permutation } => {
            rand.encode_into(&mut out);
            put_indices(&mut out, permutation);
        }
        ProtocolMessage::Abort { reason } => {
            out.extend_from_slice(&(reason.len() as u32).to_le_bytes());
            out.extend_from_slice(reason.as_bytes());
        }
    }
    out
}

pub fn decode_body(body: &[u8]) -> Result<ProtocolMessage, WireError> {
    let (&tag, payload) = body.split_first().ok_or(WireError::Empty)?;
    let mut r = Reader {
        buf: payload,
        pos: 0,
    };
    let msg = match tag {
        0x01 => ProtocolMessage::SubmitInput { ct: r.ct()? },
        0x02 => {
            let input_ct = r.ct()?;
            let degree = r.u8()?;
            let param_cts = (0..=degree).map(|_| r.ct()).collect::<Result<_, _>>()?;
            ProtocolMessage::EvalRequest {
                input_ct,
                param_cts,
                degree,
            }
        }
        0x03 => ProtocolMessage::EvalResult { result_ct: r.ct()? },
        0x04 => {
            let masked_ct = r.ct()?;
            let (provider_share, used) = PartialShare::decode(&payload[r.pos..])?;
            r.pos += used;
            ProtocolMessage::CheckRequest {
                masked_ct,
                provider_share,
                canary_positions: r.indices()?,
            }
        }
        0x05 => ProtocolMessage::CheckResponse {
            hash_digest: r.take(32)?.try_into().unwrap(),
        },
        0x06 => ProtocolMessage::Unmask {
            rand: r.slots()?,
            permutation: r.indices()?,
        },
        0x07 => {
            let n = r.u32()? as usize;
            let reason = std::str::from_utf8(r.take(n)?)
                .map_err(|e| WireError::Malformed(e.to_string()))?
                .to_owned();
            ProtocolMessage::Abort { reason }
        }
        other => return Err(WireError::UnknownTag(other)),
    };
    r.finish()?;
    Ok(msg)
}

/// Full frame: big-endian length prefix followed by the body.
pub fn encode_frame(msg: &ProtocolMessage) -> Vec<u8> {
    let body = encode_body(msg);
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode_frame(frame: &[u8]) -> Result<ProtocolMessage, WireError> {
    let head: [u8; 4] = frame
        .get(..4)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| WireError::Malformed("short frame".into()))?;
    let len = u32::from_be_bytes(head) as usize;
    let body = &frame[4..];
    if body.len() != len {
        return Err(WireError::Malformed(format!(
            "length prefix {len} but {} body bytes",
            body.len()
        )));
    }
    decode_body(body)
}

pub fn write_frame(w: &mut impl Write, msg: &ProtocolMessage) -> io::Result<()> {
    w.write_all(&encode_frame(msg))?;
    w.flush()
}

/// Reads one frame body. `Ok(None)` on a clean end of stream at a frame boundary.
pub fn read_body(r: &mut impl Read) -> Result<Option<Vec<u8>>, WireError> {
    let mut head = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut head[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(WireError::Malformed("truncated length prefix".into())),
            n => got += n,
        }
    }
    let len = u32::from_be_bytes(head) as usize;
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}
