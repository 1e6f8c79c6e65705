//! The frontend wire format: length-prefixed UTF-8 JSON messages. The
//! prefix is a big-endian u32 byte count; the body is a request
//! `{requester, kind, params}` or a response
//! `{payload, provenance, max_staleness, flags}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::FieldTree;
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub requester: String,
    pub kind: String,
    pub params: FieldTree,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireResponse {
    pub payload: FieldTree,
    pub provenance: Vec<(String, u64)>,
    pub max_staleness: Tick,
    pub flags: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("frame truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("frame body is not valid JSON: {0}")]
    BadJson(String),
    #[error("frame body is not valid UTF-8")]
    BadUtf8,
}

/// Frame a JSON body.
pub fn encode_frame(body: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body.as_bytes());
    out
}

/// Decode one frame from the front of `buf`, returning the body and the
/// total bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<(String, usize), WireError> {
    if buf.len() < 4 {
        return Err(WireError::Truncated { need: 4, have: buf.len() });
    }
    let len = u32::from_be_bytes(buf[..4].try_into().expect("4 bytes")) as usize;
    if buf.len() < 4 + len {
        return Err(WireError::Truncated { need: 4 + len, have: buf.len() });
    }
    let body = std::str::from_utf8(&buf[4..4 + len]).map_err(|_| WireError::BadUtf8)?;
    Ok((body.to_string(), 4 + len))
}

pub fn encode_request(req: &WireRequest) -> Vec<u8> {
    encode_frame(&serde_json::to_string(req).expect("requests serialize"))
}

pub fn decode_request(buf: &[u8]) -> Result<(WireRequest, usize), WireError> {
    let (body, used) = decode_frame(buf)?;
    let req = serde_json::from_str(&body).map_err(|e| WireError::BadJson(e.to_string()))?;
    Ok((req, used))
}

pub fn encode_response(resp: &WireResponse) -> Vec<u8> {
    encode_frame(&serde_json::to_string(resp).expect("responses serialize"))
}

pub fn decode_response(buf: &[u8]) -> Result<(WireResponse, usize), WireError> {
    let (body, used) = decode_frame(buf)?;
    let resp = serde_json::from_str(&body).map_err(|e| WireError::BadJson(e.to_string()))?;
    Ok((resp, used))
}
