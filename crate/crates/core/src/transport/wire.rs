//! Frame layout for the TCP backend. All integers little-endian:
//!
//! ```text
//! magic[4] version[1] session[16] kind[1] round[4] segment[4] from[4] to[4] len[8] ciphertext[len]
//! ```

use std::io::{self, Read, Write};

use super::TransportError;
use crate::protocols::{MessageKind, PartyId, ProtocolMessage, SessionId};

pub const MAGIC: [u8; 4] = *b"SUA\x01";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 16 + 1 + 4 + 4 + 4 + 4 + 8;
/// Upper bound on a single frame body; larger lengths are treated as corrupt.
pub const MAX_FRAME: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameHeader {
    pub session: SessionId,
    pub kind: MessageKind,
    pub round: u32,
    pub segment: u32,
    pub from: PartyId,
    pub to: PartyId,
}

impl FrameHeader {
    pub fn of(msg: &ProtocolMessage) -> Self {
        Self {
            session: msg.session,
            kind: msg.kind,
            round: msg.round,
            segment: msg.segment,
            from: msg.from,
            to: msg.to,
        }
    }

    /// Header fields bound to the ciphertext as associated data (everything
    /// except magic, version and length).
    pub fn aad(&self) -> [u8; 33] {
        let mut out = [0u8; 33];
        out[..16].copy_from_slice(&self.session.0);
        out[16] = self.kind.code();
        out[17..21].copy_from_slice(&self.round.to_le_bytes());
        out[21..25].copy_from_slice(&self.segment.to_le_bytes());
        out[25..29].copy_from_slice(&self.from.0.to_le_bytes());
        out[29..33].copy_from_slice(&self.to.0.to_le_bytes());
        out
    }
}

pub fn encode_frame(header: &FrameHeader, ciphertext: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + ciphertext.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&header.aad());
    out.extend_from_slice(&(ciphertext.len() as u64).to_le_bytes());
    out.extend_from_slice(ciphertext);
    out
}

pub fn write_frame<W: Write>(w: &mut W, header: &FrameHeader, ciphertext: &[u8]) -> io::Result<()> {
    w.write_all(&encode_frame(header, ciphertext))
}

/// Reads one frame. `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<(FrameHeader, Vec<u8>)>, TransportError> {
    let mut head = [0u8; HEADER_LEN];
    match r.read_exact(&mut head[..1]) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    r.read_exact(&mut head[1..])?;
    let (header, len) = decode_header(&head)?;
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some((header, body)))
}

pub fn decode_header(head: &[u8; HEADER_LEN]) -> Result<(FrameHeader, usize), TransportError> {
    if head[..4] != MAGIC {
        return Err(TransportError::Frame("bad magic".into()));
    }
    if head[4] != VERSION {
        return Err(TransportError::Frame(format!("unsupported version {}", head[4])));
    }
    let u32_at = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().expect("4 bytes"));
    let kind = MessageKind::from_code(head[21]).ok_or_else(|| TransportError::Frame(format!("unknown kind {}", head[21])))?;
    let len = u64::from_le_bytes(head[38..46].try_into().expect("8 bytes"));
    if len > MAX_FRAME {
        return Err(TransportError::Frame(format!("frame length {len} too large")));
    }
    let header = FrameHeader {
        session: SessionId(head[5..21].try_into().expect("16 bytes")),
        kind,
        round: u32_at(22),
        segment: u32_at(26),
        from: PartyId(u32_at(30)),
        to: PartyId(u32_at(34)),
    };
    Ok((header, len as usize))
}
