//! Length-prefixed binary framing for the socket transport.
//!
//! ```text
//! u32 LE  payload length in bytes
//! u64 LE  round id
//! u8      kind
//! u16 LE  tag length in bytes
//! [u8]    tag (UTF-8)
//! [f64]   payload, little-endian
//! ```

use std::io::{ErrorKind, Read, Write};

use super::{Message, MessageKind};
use crate::error::{Error, Result};

const HEADER_LEN: usize = 4 + 8 + 1 + 2;

pub fn encode(msg: &Message) -> Result<Vec<u8>> {
    let payload_bytes = msg.payload.len() * 8;
    let payload_len = u32::try_from(payload_bytes)
        .map_err(|_| Error::Protocol(format!("payload of {payload_bytes} bytes too large")))?;
    let tag_len = u16::try_from(msg.tag.len())
        .map_err(|_| Error::Protocol("tag longer than 65535 bytes".into()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + msg.tag.len() + payload_bytes);
    buf.extend_from_slice(&payload_len.to_le_bytes());
    buf.extend_from_slice(&msg.round_id.to_le_bytes());
    buf.push(msg.kind as u8);
    buf.extend_from_slice(&tag_len.to_le_bytes());
    buf.extend_from_slice(msg.tag.as_bytes());
    for v in &msg.payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    w.write_all(&encode(msg)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream before the
/// first header byte.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Message>> {
    let mut header = [0u8; HEADER_LEN];
    match r.read_exact(&mut header[..1]) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    r.read_exact(&mut header[1..])?;
    let payload_len = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let round_id = u64::from_le_bytes(header[4..12].try_into().unwrap());
    let kind = MessageKind::from_byte(header[12])?;
    let tag_len = u16::from_le_bytes(header[13..15].try_into().unwrap()) as usize;
    if !payload_len.is_multiple_of(8) {
        return Err(Error::Protocol(format!(
            "payload length {payload_len} is not a multiple of 8"
        )));
    }
    let mut tag = vec![0u8; tag_len];
    r.read_exact(&mut tag)?;
    let tag = String::from_utf8(tag).map_err(|_| Error::Protocol("tag is not UTF-8".into()))?;
    let mut raw = vec![0u8; payload_len];
    r.read_exact(&mut raw)?;
    let payload = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Some(Message {
        round_id,
        kind,
        tag,
        payload,
    }))
}
