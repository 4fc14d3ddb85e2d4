//! Batch stream format: one batch per line, `<len> <json>\n`, where `len` is
//! the byte length of the JSON payload.

use std::io::{BufRead, Write};

use super::TelemetryBatch;
use crate::error::{Error, Result};

pub fn encode_batch(b: &TelemetryBatch) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(b)?;
    let mut out = Vec::with_capacity(json.len() + 8);
    write!(out, "{} ", json.len())?;
    out.extend_from_slice(&json);
    out.push(b'\n');
    Ok(out)
}

/// Decode exactly one framed batch.
pub fn decode_batch(bytes: &[u8]) -> Result<TelemetryBatch> {
    let (b, used) = decode_at(bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::Decode {
            offset: used,
            reason: "trailing bytes after record".into(),
        });
    }
    Ok(b)
}

/// Decode a concatenation of framed batches.
pub fn decode_stream(bytes: &[u8]) -> Result<Vec<TelemetryBatch>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let (b, next) = decode_at(bytes, pos)?;
        out.push(b);
        pos = next;
    }
    Ok(out)
}

fn decode_at(bytes: &[u8], start: usize) -> Result<(TelemetryBatch, usize)> {
    let err = |offset: usize, reason: &str| Error::Decode {
        offset,
        reason: reason.to_string(),
    };
    let rest = &bytes[start..];
    let space = rest
        .iter()
        .position(|&c| c == b' ')
        .ok_or_else(|| err(start, "missing length prefix"))?;
    let len: usize = std::str::from_utf8(&rest[..space])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(start, "length prefix is not a number"))?;
    let body_start = start + space + 1;
    let body_end = body_start + len;
    if body_end >= bytes.len() {
        return Err(err(bytes.len(), "truncated payload"));
    }
    if bytes.get(body_end) != Some(&b'\n') {
        return Err(err(body_end.min(bytes.len()), "missing record terminator"));
    }
    let batch = serde_json::from_slice(&bytes[body_start..body_end]).map_err(|e| {
        // serde reports line/column; the payload is a single line
        err(body_start + e.column().saturating_sub(1), &e.to_string())
    })?;
    Ok((batch, body_end + 1))
}

pub fn write_batches<W: Write>(mut w: W, batches: &[TelemetryBatch]) -> Result<()> {
    for b in batches {
        w.write_all(&encode_batch(b)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_batches<R: BufRead>(mut r: R) -> Result<Vec<TelemetryBatch>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode_stream(&buf)
}
