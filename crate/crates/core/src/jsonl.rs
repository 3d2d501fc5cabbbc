//! Line-delimited JSON files with a leading `{"header": ...}` record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: line {line}: {source}")]
    Json {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: missing header line")]
    MissingHeader { path: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct HeaderLine<H> {
    header: H,
}

pub fn write_jsonl<H: Serialize, T: Serialize>(
    path: impl AsRef<Path>,
    header: &H,
    records: impl IntoIterator<Item = T>,
) -> Result<(), JsonlError> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path)?);
    write_jsonl_to(&mut out, header, records).map_err(|e| match e {
        JsonlError::Json { line, source, .. } => JsonlError::Json {
            path: path.display().to_string(),
            line,
            source,
        },
        other => other,
    })?;
    out.flush()?;
    Ok(())
}

pub fn write_jsonl_to<H: Serialize, T: Serialize>(
    out: &mut impl Write,
    header: &H,
    records: impl IntoIterator<Item = T>,
) -> Result<(), JsonlError> {
    let json_err = |line, source| JsonlError::Json {
        path: String::new(),
        line,
        source,
    };
    serde_json::to_writer(&mut *out, &HeaderLine { header }).map_err(|e| json_err(1, e))?;
    out.write_all(b"\n")?;
    for (i, r) in records.into_iter().enumerate() {
        serde_json::to_writer(&mut *out, &r).map_err(|e| json_err(i + 2, e))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<H: DeserializeOwned, T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(H, Vec<T>), JsonlError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(JsonlError::MissingHeader { path: name }),
            Some((_, Ok(l))) if l.trim().is_empty() => continue,
            Some((i, Ok(l))) => {
                let h: HeaderLine<H> = serde_json::from_str(&l).map_err(|source| JsonlError::Json {
                    path: name.clone(),
                    line: i + 1,
                    source,
                })?;
                break h.header;
            }
            Some((_, Err(e))) => return Err(e.into()),
        }
    };
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|source| JsonlError::Json {
            path: name.clone(),
            line: i + 1,
            source,
        })?);
    }
    Ok((header, records))
}

/// Reads only the header record.
pub fn read_header<H: DeserializeOwned>(path: impl AsRef<Path>) -> Result<H, JsonlError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let h: HeaderLine<H> = serde_json::from_str(&line).map_err(|source| JsonlError::Json {
            path: name.clone(),
            line: i + 1,
            source,
        })?;
        return Ok(h.header);
    }
    Err(JsonlError::MissingHeader { path: name })
}
