//! Append-only JSON-lines log of retrospective snapshots.

use std::io::{BufRead, Write};

use super::TwinSnapshot;
use crate::error::{Error, Result};

pub fn append_snapshot<W: Write>(mut w: W, snap: &TwinSnapshot) -> Result<()> {
    serde_json::to_writer(&mut w, snap)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_snapshots<R: BufRead>(r: R) -> Result<Vec<TwinSnapshot>> {
    let mut out: Vec<TwinSnapshot> = Vec::new();
    let mut offset = 0;
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            let s: TwinSnapshot = serde_json::from_str(&line).map_err(|e| Error::Decode {
                offset: offset + e.column().saturating_sub(1),
                reason: e.to_string(),
            })?;
            if out.last().is_some_and(|p| p.timestamp >= s.timestamp) {
                return Err(Error::Decode {
                    offset,
                    reason: "snapshot timestamps must strictly increase".into(),
                });
            }
            out.push(s);
        }
        offset += line.len() + 1;
    }
    Ok(out)
}
