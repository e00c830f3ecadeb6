//! Blocking framed transport over any byte stream (e.g. a TCP socket).

use std::io::{self, Read, Write};

use super::codec::{decode, encode, DecodeError, MAX_FRAME_LEN};
use super::SepMessage;

fn invalid(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

/// Writes one encoded frame.
pub fn write_frame<W: Write>(w: &mut W, msg: &SepMessage) -> io::Result<usize> {
    let frame = encode(msg).map_err(invalid)?;
    w.write_all(&frame)?;
    Ok(frame.len())
}

/// Reads one frame. `Ok(None)` on a clean end of stream before any byte.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<SepMessage>> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut prefix[got..])?;
        if n == 0 {
            return if got == 0 {
                Ok(None)
            } else {
                Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "stream ended inside a length prefix",
                ))
            };
        }
        got += n;
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME_LEN {
        return Err(invalid(format!(
            "declared frame length {len} exceeds limit"
        )));
    }
    let mut frame = prefix.to_vec();
    frame.resize(4 + len, 0);
    r.read_exact(&mut frame[4..])?;
    decode(&frame).map(Some).map_err(invalid)
}

/// Incremental decoder for bytes arriving in arbitrary chunks.
#[derive(Debug, Default)]
pub struct FramedReader {
    buf: Vec<u8>,
}

impl FramedReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete message, `Ok(None)` if more bytes are needed. A
    /// malformed frame is consumed and reported, so the stream can continue.
    pub fn next_message(&mut self) -> Result<Option<SepMessage>, DecodeError> {
        match super::codec::decode_prefix(&self.buf) {
            Ok((msg, used)) => {
                self.buf.drain(..used);
                Ok(Some(msg))
            }
            Err(DecodeError::NeedMoreBytes { .. }) => Ok(None),
            Err(e) => {
                if self.buf.len() >= 4 {
                    let len =
                        u32::from_be_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]])
                            as usize;
                    let skip = if len > MAX_FRAME_LEN {
                        self.buf.len()
                    } else {
                        4 + len
                    };
                    self.buf.drain(..skip.min(self.buf.len()));
                }
                Err(e)
            }
        }
    }
}
