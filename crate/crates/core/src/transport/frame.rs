//! Wire frame of the TCP backend.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "IGG1"
//!      4     1  version (1)
//!      5     4  src rank, u32 LE
//!      9     4  dst rank, u32 LE
//!     13     4  tag, u32 LE
//!     17     8  payload length in bytes, u64 LE (multiple of 8)
//!     25     n  payload, f64 LE
//! ```

use std::io::{self, Read, Write};

use super::Tag;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"IGG1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub src: u32,
    pub dst: u32,
    pub tag: Tag,
    pub payload_len: u64,
}

impl FrameHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&MAGIC);
        h[4] = VERSION;
        h[5..9].copy_from_slice(&self.src.to_le_bytes());
        h[9..13].copy_from_slice(&self.dst.to_le_bytes());
        h[13..17].copy_from_slice(&self.tag.to_le_bytes());
        h[17..25].copy_from_slice(&self.payload_len.to_le_bytes());
        h
    }

    pub fn parse(h: &[u8; HEADER_LEN]) -> Result<Self> {
        if h[0..4] != MAGIC {
            return Err(Error::Protocol(format!("bad frame magic {:02x?}", &h[0..4])));
        }
        if h[4] != VERSION {
            return Err(Error::Protocol(format!("unsupported frame version {}", h[4])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap());
        let header = Self {
            src: u32_at(5),
            dst: u32_at(9),
            tag: u32_at(13),
            payload_len: u64::from_le_bytes(h[17..25].try_into().unwrap()),
        };
        if header.payload_len % 8 != 0 {
            return Err(Error::Protocol(format!(
                "payload length {} is not a multiple of 8",
                header.payload_len
            )));
        }
        Ok(header)
    }
}

fn rank_u32(rank: usize) -> Result<u32> {
    u32::try_from(rank).map_err(|_| Error::Config(format!("rank {rank} does not fit in 32 bits")))
}

pub fn encode_frame(src: usize, dst: usize, tag: Tag, payload: &[f64]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() * 8);
    write_frame(&mut out, src, dst, tag, payload)?;
    Ok(out)
}

/// Writes one frame with a single `write_all`, so concurrent writers holding
/// the stream lock never interleave partial frames.
pub fn write_frame<W: Write>(w: &mut W, src: usize, dst: usize, tag: Tag, payload: &[f64]) -> Result<()> {
    let header = FrameHeader {
        src: rank_u32(src)?,
        dst: rank_u32(dst)?,
        tag,
        payload_len: (payload.len() * 8) as u64,
    };
    let mut bytes = Vec::with_capacity(HEADER_LEN + payload.len() * 8);
    bytes.extend_from_slice(&header.to_bytes());
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub struct Frame {
    pub src: usize,
    pub dst: usize,
    pub tag: Tag,
    pub payload: Vec<f64>,
}

fn payload_from_bytes(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Framing(format!(
            "{} bytes is shorter than a frame header",
            bytes.len()
        )));
    }
    let header = FrameHeader::parse(bytes[..HEADER_LEN].try_into().unwrap())?;
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != header.payload_len {
        return Err(Error::Framing(format!(
            "payload has {} bytes, header announces {}",
            body.len(),
            header.payload_len
        )));
    }
    Ok(Frame {
        src: header.src as usize,
        dst: header.dst as usize,
        tag: header.tag,
        payload: payload_from_bytes(body),
    })
}

/// Reads the next frame from a stream. `Ok(None)` means the stream ended
/// cleanly on a frame boundary.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>> {
    let mut h = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut h[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(Error::Framing(format!(
                    "stream ended after {got} header bytes"
                )))
            }
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let header = FrameHeader::parse(&h)?;
    let mut body = vec![0u8; header.payload_len as usize];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Framing(format!(
            "stream ended inside a {}-byte payload",
            header.payload_len
        )),
        _ => e.into(),
    })?;
    Ok(Some(Frame {
        src: header.src as usize,
        dst: header.dst as usize,
        tag: header.tag,
        payload: payload_from_bytes(&body),
    }))
}
