//! Event file formats: an inspectable CSV (`t_us,x,y,p`) and an equivalent
//! packed binary (magic `CS3DEVT1`, then little-endian u64/u16/u16/i8
//! records). Sensor geometry and labels travel in the dataset manifest, not
//! in the event files.

use std::io::{BufRead, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{Event, EventStream};
use crate::error::{CoreError, Result};

pub const EVENT_CSV_HEADER: &str = "t_us,x,y,p";
pub const EVENT_BINARY_MAGIC: &[u8; 8] = b"CS3DEVT1";

/// A parsed stream plus whether the source needed re-sorting (callers may
/// surface that as a warning).
#[derive(Clone, Debug)]
pub struct ParseReport {
    pub stream: EventStream,
    pub was_unsorted: bool,
}

pub fn parse_events(path: &Path, width: u16, height: u16) -> Result<ParseReport> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => parse_events_binary(path, width, height),
        _ => parse_events_csv(path, width, height),
    }
}

pub fn parse_events_csv(path: &Path, width: u16, height: u16) -> Result<ParseReport> {
    let file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut stream = EventStream::new(width, height);
    let mut lines = reader.lines().enumerate();

    if let Some((line, text)) = lines.next() {
        let text = text.map_err(|e| CoreError::io(path, e))?;
        if text.trim() != EVENT_CSV_HEADER {
            return Err(CoreError::MalformedRecord {
                path: path.to_path_buf(),
                line: line + 1,
                reason: format!("expected header `{EVENT_CSV_HEADER}`, got `{text}`"),
            });
        }
    }
    for (line, text) in lines {
        let text = text.map_err(|e| CoreError::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let event = parse_csv_record(&text).map_err(|reason| CoreError::MalformedRecord {
            path: path.to_path_buf(),
            line: line + 1,
            reason,
        })?;
        validate_bounds(&event, width, height, path, line + 1)?;
        stream.events.push(event);
    }
    let was_unsorted = stream.sort();
    Ok(ParseReport { stream, was_unsorted })
}

fn parse_csv_record(text: &str) -> std::result::Result<Event, String> {
    let mut parts = text.trim().split(',');
    let mut field = |name: &str| {
        parts
            .next()
            .ok_or_else(|| format!("missing field `{name}`"))
    };
    let t_us = field("t_us")?
        .parse::<u64>()
        .map_err(|e| format!("t_us: {e}"))?;
    let x = field("x")?.parse::<u16>().map_err(|e| format!("x: {e}"))?;
    let y = field("y")?.parse::<u16>().map_err(|e| format!("y: {e}"))?;
    let p = field("p")?.parse::<i8>().map_err(|e| format!("p: {e}"))?;
    if p != 1 && p != -1 {
        return Err(format!("polarity must be 1 or -1, got {p}"));
    }
    if parts.next().is_some() {
        return Err("trailing fields".into());
    }
    Ok(Event { t_us, x, y, polarity: p })
}

pub fn write_events_csv(path: &Path, stream: &EventStream) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{EVENT_CSV_HEADER}").map_err(|e| CoreError::io(path, e))?;
    for e in &stream.events {
        writeln!(w, "{},{},{},{}", e.t_us, e.x, e.y, e.polarity)
            .map_err(|e| CoreError::io(path, e))?;
    }
    Ok(())
}

pub fn parse_events_binary(path: &Path, width: u16, height: u16) -> Result<ParseReport> {
    let mut file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| CoreError::io(path, e))?;
    if bytes.len() < 8 || &bytes[..8] != EVENT_BINARY_MAGIC {
        return Err(CoreError::MalformedRecord {
            path: path.to_path_buf(),
            line: 0,
            reason: "bad magic".into(),
        });
    }
    const RECORD: usize = 8 + 2 + 2 + 1;
    let body = &bytes[8..];
    if body.len() % RECORD != 0 {
        return Err(CoreError::MalformedRecord {
            path: path.to_path_buf(),
            line: body.len() / RECORD + 1,
            reason: format!("truncated record ({} trailing bytes)", body.len() % RECORD),
        });
    }
    let mut stream = EventStream::new(width, height);
    for (i, rec) in body.chunks_exact(RECORD).enumerate() {
        let t_us = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes(rec[8..10].try_into().unwrap());
        let y = u16::from_le_bytes(rec[10..12].try_into().unwrap());
        let polarity = rec[12] as i8;
        if polarity != 1 && polarity != -1 {
            return Err(CoreError::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("polarity must be 1 or -1, got {polarity}"),
            });
        }
        let event = Event { t_us, x, y, polarity };
        validate_bounds(&event, width, height, path, i + 1)?;
        stream.events.push(event);
    }
    let was_unsorted = stream.sort();
    Ok(ParseReport { stream, was_unsorted })
}

pub fn write_events_binary(path: &Path, stream: &EventStream) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(EVENT_BINARY_MAGIC)
        .map_err(|e| CoreError::io(path, e))?;
    for e in &stream.events {
        w.write_all(&e.t_us.to_le_bytes())
            .and_then(|_| w.write_all(&e.x.to_le_bytes()))
            .and_then(|_| w.write_all(&e.y.to_le_bytes()))
            .and_then(|_| w.write_all(&[e.polarity as u8]))
            .map_err(|e| CoreError::io(path, e))?;
    }
    Ok(())
}

fn validate_bounds(e: &Event, width: u16, height: u16, path: &Path, line: usize) -> Result<()> {
    if e.x >= width || e.y >= height {
        return Err(CoreError::EventOutOfBounds {
            path: path.to_path_buf(),
            line,
            x: e.x,
            y: e.y,
            width,
            height,
        });
    }
    Ok(())
}

/// Dataset manifest: CSV of `path,label` pairs, paths relative to the
/// manifest's directory.
pub fn write_manifest(path: &Path, entries: &[(PathBuf, usize)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "path,label").map_err(|e| CoreError::io(path, e))?;
    for (p, label) in entries {
        writeln!(w, "{},{}", p.display(), label).map_err(|e| CoreError::io(path, e))?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, usize)>> {
    let file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (line, text) in reader.lines().enumerate() {
        let text = text.map_err(|e| CoreError::io(path, e))?;
        if line == 0 {
            if text.trim() != "path,label" {
                return Err(CoreError::MalformedRecord {
                    path: path.to_path_buf(),
                    line: 1,
                    reason: format!("expected header `path,label`, got `{text}`"),
                });
            }
            continue;
        }
        if text.trim().is_empty() {
            continue;
        }
        let (p, label) = text.rsplit_once(',').ok_or_else(|| CoreError::MalformedRecord {
            path: path.to_path_buf(),
            line: line + 1,
            reason: "expected `path,label`".into(),
        })?;
        let label = label.trim().parse::<usize>().map_err(|e| CoreError::MalformedRecord {
            path: path.to_path_buf(),
            line: line + 1,
            reason: format!("label: {e}"),
        })?;
        out.push((PathBuf::from(p), label));
    }
    Ok(out)
}
