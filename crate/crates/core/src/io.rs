//! JSONL helpers for the on-disk artifact formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::corpus::{MarkedEvent, NodeInfo, NodeRoster};
use crate::error::{HbtmError, Result};

pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HbtmError::Parse {
            line: k + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), items)
}

/// Reads a marked-events file (`post_id`, `t`, `node`, `mark` per line).
pub fn read_events(path: &Path) -> Result<Vec<MarkedEvent>> {
    read_jsonl_file(path)
}

pub fn write_events(path: &Path, events: &[MarkedEvent]) -> Result<()> {
    write_jsonl_file(path, events)
}

/// Reads a roster file: one node object per line, line order = node index.
pub fn read_roster(path: &Path) -> Result<NodeRoster> {
    NodeRoster::new(read_jsonl_file::<NodeInfo>(path)?)
}

pub fn write_roster(path: &Path, roster: &NodeRoster) -> Result<()> {
    write_jsonl_file(path, roster.nodes())
}
