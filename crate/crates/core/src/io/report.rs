//! JSON Lines files with a schema header. The first line identifies
//! the record schema and version; every following line is one record.
//! Readers reject files whose header does not match what they expect.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct SchemaHeader {
    schema: String,
    version: u32,
}

/// Writes `records` as JSONL under a `{"schema": .., "version": ..}`
/// header line.
pub fn write_jsonl<T: Serialize>(
    path: &Path,
    schema: &str,
    version: u32,
    records: &[T],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = SchemaHeader {
        schema: schema.to_string(),
        version,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSONL file, checking the header names the expected schema.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, schema: &str, version: u32) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::malformed(path, "empty file, missing schema header"))??;
    let header: SchemaHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::malformed(path, format!("bad schema header: {e}")))?;
    if header.schema != schema || header.version != version {
        return Err(Error::malformed(
            path,
            format!(
                "expected schema {schema} v{version}, found {} v{}",
                header.schema, header.version
            ),
        ));
    }
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, format!("record on line {}: {e}", idx + 2)))?;
        out.push(record);
    }
    Ok(out)
}
