//! Frame = 4-byte big-endian body length + canonical JSON body whose
//! `msg_type` field names the message.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use super::SepMessage;
use crate::canonical;

/// Largest accepted body, in bytes.
pub const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("message invariant violated: {0}")]
    Invariant(String),
    #[error("message body too large: {0} bytes")]
    TooLarge(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("incomplete frame: need {needed} bytes, have {available}")]
    NeedMoreBytes { needed: usize, available: usize },
    #[error("protocol error at byte {offset}: {reason}")]
    ProtocolError { offset: usize, reason: String },
    #[error("unsupported message type {0:?}")]
    UnsupportedMessage(String),
}

fn body_of<T: Serialize>(msg_type: &str, body: &T) -> Result<Vec<u8>, EncodeError> {
    canonical::check_finite(body).map_err(|e| EncodeError::Invariant(e.to_string()))?;
    let mut v = serde_json::to_value(body).map_err(|e| EncodeError::Invariant(e.to_string()))?;
    let Value::Object(map) = &mut v else {
        return Err(EncodeError::Invariant(
            "message body is not an object".into(),
        ));
    };
    map.insert("msg_type".into(), Value::String(msg_type.into()));
    let mut out = Vec::new();
    canonical::write_value(&v, &mut out);
    Ok(out)
}

/// Canonical JSON body of `msg`, without the length prefix.
pub(crate) fn encode_body(msg: &SepMessage) -> Result<Vec<u8>, EncodeError> {
    msg.validate().map_err(EncodeError::Invariant)?;
    let t = msg.msg_type();
    match msg {
        SepMessage::TrpInformationRequest(b) => body_of(t, b),
        SepMessage::TrpInformationResponse(b) => body_of(t, b),
        SepMessage::TrpInformationFailure(b) => body_of(t, b),
        SepMessage::SensingRequest(b) => body_of(t, b),
        SepMessage::SensingResponse(b) => body_of(t, b),
        SepMessage::SensingFailure(b) => body_of(t, b),
        SepMessage::SensingUpdate(b) => body_of(t, b),
        SepMessage::SensingReport(b) => body_of(t, b),
        SepMessage::SensingAbort(b) => body_of(t, b),
        SepMessage::SensingFailureIndication(b) => body_of(t, b),
    }
}

/// Encodes one message as a length-prefixed frame.
pub fn encode(msg: &SepMessage) -> Result<Vec<u8>, EncodeError> {
    let body = encode_body(msg)?;
    if body.len() > MAX_FRAME_LEN {
        return Err(EncodeError::TooLarge(body.len()));
    }
    let mut frame = Vec::with_capacity(body.len() + 4);
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

/// Decodes exactly one frame; trailing bytes are a protocol error.
pub fn decode(frame: &[u8]) -> Result<SepMessage, DecodeError> {
    let (msg, used) = decode_prefix(frame)?;
    if used != frame.len() {
        return Err(DecodeError::ProtocolError {
            offset: used,
            reason: format!("{} trailing bytes after frame", frame.len() - used),
        });
    }
    Ok(msg)
}

/// Decodes the first frame of `bytes`, returning the message and the number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(SepMessage, usize), DecodeError> {
    if bytes.len() < 4 {
        return Err(DecodeError::NeedMoreBytes {
            needed: 4,
            available: bytes.len(),
        });
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > MAX_FRAME_LEN {
        return Err(DecodeError::ProtocolError {
            offset: 0,
            reason: format!("declared length {len} exceeds limit {MAX_FRAME_LEN}"),
        });
    }
    if bytes.len() < 4 + len {
        return Err(DecodeError::NeedMoreBytes {
            needed: 4 + len,
            available: bytes.len(),
        });
    }
    let msg = decode_body(&bytes[4..4 + len], 4)?;
    Ok((msg, 4 + len))
}

/// Byte offset in `body` of a serde_json (line, column) position.
pub(crate) fn byte_offset(body: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, chunk) in body.split(|b| *b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(body.len());
        }
        offset += chunk.len() + 1;
    }
    body.len()
}

fn field<T: DeserializeOwned>(map: Map<String, Value>, base: usize) -> Result<T, DecodeError> {
    serde_json::from_value(Value::Object(map)).map_err(|e| DecodeError::ProtocolError {
        offset: base,
        reason: e.to_string(),
    })
}

/// Parses a JSON object with a `msg_type` discriminator.
///
/// `base` is the offset of the body within the enclosing frame or stream,
/// used for error positions.
pub(crate) fn parse_tagged(
    body: &[u8],
    base: usize,
) -> Result<(String, Map<String, Value>), DecodeError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| DecodeError::ProtocolError {
        offset: base + byte_offset(body, e.line(), e.column()),
        reason: e.to_string(),
    })?;
    let Value::Object(mut map) = value else {
        return Err(DecodeError::ProtocolError {
            offset: base,
            reason: "body is not a JSON object".into(),
        });
    };
    match map.remove("msg_type") {
        Some(Value::String(t)) => Ok((t, map)),
        Some(_) => Err(DecodeError::ProtocolError {
            offset: base,
            reason: "msg_type is not a string".into(),
        }),
        None => Err(DecodeError::ProtocolError {
            offset: base,
            reason: "missing msg_type".into(),
        }),
    }
}

fn decode_body(body: &[u8], base: usize) -> Result<SepMessage, DecodeError> {
    let (t, map) = parse_tagged(body, base)?;
    let msg = match t.as_str() {
        "TrpInformationRequest" => SepMessage::TrpInformationRequest(field(map, base)?),
        "TrpInformationResponse" => SepMessage::TrpInformationResponse(field(map, base)?),
        "TrpInformationFailure" => SepMessage::TrpInformationFailure(field(map, base)?),
        "SensingRequest" => SepMessage::SensingRequest(field(map, base)?),
        "SensingResponse" => SepMessage::SensingResponse(field(map, base)?),
        "SensingFailure" => SepMessage::SensingFailure(field(map, base)?),
        "SensingUpdate" => SepMessage::SensingUpdate(field(map, base)?),
        "SensingReport" => SepMessage::SensingReport(field(map, base)?),
        "SensingAbort" => SepMessage::SensingAbort(field(map, base)?),
        "SensingFailureIndication" => SepMessage::SensingFailureIndication(field(map, base)?),
        _ => return Err(DecodeError::UnsupportedMessage(t)),
    };
    msg.validate()
        .map_err(|reason| DecodeError::ProtocolError {
            offset: base,
            reason,
        })?;
    Ok(msg)
}
