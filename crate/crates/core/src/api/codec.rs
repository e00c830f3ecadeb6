//! One canonical JSON object per line with a `msg_type` discriminator.
//! A bad line is reported on its own; the lines after it still decode.

use std::io::{self, BufRead};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use super::ApiMessage;
use crate::canonical;
use crate::sep::codec::byte_offset;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApiEncodeError {
    #[error("message invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApiDecodeError {
    /// `line` counts from 1; `column` is a byte offset within the line.
    #[error("protocol error on line {line}, byte {column}: {reason}")]
    ProtocolError {
        line: usize,
        column: usize,
        reason: String,
    },
}

fn line_of<T: Serialize>(msg_type: &str, body: &T) -> Result<Vec<u8>, ApiEncodeError> {
    canonical::check_finite(body).map_err(|e| ApiEncodeError::Invariant(e.to_string()))?;
    let mut v = serde_json::to_value(body).map_err(|e| ApiEncodeError::Invariant(e.to_string()))?;
    let Value::Object(map) = &mut v else {
        return Err(ApiEncodeError::Invariant(
            "message body is not an object".into(),
        ));
    };
    map.insert("msg_type".into(), Value::String(msg_type.into()));
    let mut out = Vec::new();
    canonical::write_value(&v, &mut out);
    out.push(b'\n');
    Ok(out)
}

/// Encodes `msg` as one line, including the terminating newline.
pub fn encode_line(msg: &ApiMessage) -> Result<Vec<u8>, ApiEncodeError> {
    msg.validate().map_err(ApiEncodeError::Invariant)?;
    let t = msg.msg_type();
    match msg {
        ApiMessage::SensingServiceRequest(b) => line_of(t, b),
        ApiMessage::SensingServiceResponse(b) => line_of(t, b),
        ApiMessage::SensingResultNotification(b) => line_of(t, b),
        ApiMessage::SensingServiceAbort(b) => line_of(t, b),
        ApiMessage::SensingServiceFailure(b) => line_of(t, b),
    }
}

fn field<T: DeserializeOwned>(map: Map<String, Value>, line: usize) -> Result<T, ApiDecodeError> {
    serde_json::from_value(Value::Object(map)).map_err(|e| ApiDecodeError::ProtocolError {
        line,
        column: 0,
        reason: e.to_string(),
    })
}

/// Decodes one line (with or without its newline). `line` is used for
/// error positions only.
pub fn decode_line(bytes: &[u8], line: usize) -> Result<ApiMessage, ApiDecodeError> {
    let bytes = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let bytes = bytes.strip_suffix(b"\r").unwrap_or(bytes);
    let err = |column: usize, reason: String| ApiDecodeError::ProtocolError {
        line,
        column,
        reason,
    };
    if bytes.contains(&b'\n') {
        return Err(err(0, "embedded newline".into()));
    }
    let value: Value = serde_json::from_slice(bytes)
        .map_err(|e| err(byte_offset(bytes, e.line(), e.column()), e.to_string()))?;
    let Value::Object(mut map) = value else {
        return Err(err(0, "line is not a JSON object".into()));
    };
    let t = match map.remove("msg_type") {
        Some(Value::String(t)) => t,
        Some(_) => return Err(err(0, "msg_type is not a string".into())),
        None => return Err(err(0, "missing msg_type".into())),
    };
    let msg = match t.as_str() {
        "SensingServiceRequest" => ApiMessage::SensingServiceRequest(field(map, line)?),
        "SensingServiceResponse" => ApiMessage::SensingServiceResponse(field(map, line)?),
        "SensingResultNotification" => ApiMessage::SensingResultNotification(field(map, line)?),
        "SensingServiceAbort" => ApiMessage::SensingServiceAbort(field(map, line)?),
        "SensingServiceFailure" => ApiMessage::SensingServiceFailure(field(map, line)?),
        _ => return Err(err(0, format!("unknown msg_type {t:?}"))),
    };
    msg.validate().map_err(|r| err(0, r))?;
    Ok(msg)
}

/// Decodes every non-blank line of `bytes` independently.
pub fn decode_lines(bytes: &[u8]) -> Vec<Result<ApiMessage, ApiDecodeError>> {
    bytes
        .split(|b| *b == b'\n')
        .enumerate()
        .filter(|(_, l)| !l.iter().all(u8::is_ascii_whitespace))
        .map(|(i, l)| decode_line(l, i + 1))
        .collect()
}

/// Reads messages from a byte stream one line at a time.
#[derive(Debug)]
pub struct ApiReader<R> {
    inner: R,
    line: usize,
    buf: Vec<u8>,
}

impl<R: BufRead> ApiReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            line: 0,
            buf: Vec::new(),
        }
    }

    /// Next message; `Ok(None)` at end of stream. A malformed line yields
    /// `Ok(Some(Err(_)))` and reading can continue.
    pub fn next_message(&mut self) -> io::Result<Option<Result<ApiMessage, ApiDecodeError>>> {
        loop {
            self.buf.clear();
            if self.inner.read_until(b'\n', &mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line += 1;
            if self.buf.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            return Ok(Some(decode_line(&self.buf, self.line)));
        }
    }
}
