//! `events.jsonl`: one [`Event`] object per line.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{Event, PropagatorError};

/// Reads events, rejecting duplicate ids. Blank lines are skipped.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<Event>, PropagatorError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Event = serde_json::from_str(&line)
            .map_err(|err| PropagatorError::BadEvent(format!("line {}: {err}", n + 1)))?;
        if !seen.insert(e.id.clone()) {
            return Err(PropagatorError::BadEvent(format!(
                "duplicate event id `{}`",
                e.id
            )));
        }
        out.push(e);
    }
    Ok(out)
}

pub fn read_events_file(path: &Path) -> Result<Vec<Event>, PropagatorError> {
    read_events(BufReader::new(fs::File::open(path)?))
}

pub fn write_events<W: Write>(mut writer: W, events: &[Event]) -> Result<(), PropagatorError> {
    for e in events {
        serde_json::to_writer(&mut writer, e)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
