//! Dense head-output binary format. Layout:
//!
//! ```text
//! 8 bytes  magic "BEVHEAD1"
//! 8 bytes  header length N, u64 little endian
//! N bytes  JSON header: rows, cols, channel layout
//! then     class_scores, reg, relation as f64 little endian,
//!          each row-major with the width implied by the layout
//! ```
//!
//! The self-describing header lets outputs produced elsewhere be
//! evaluated here, as long as shapes agree.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{HeadLayout, HeadOutput};
use crate::field::Field;
use crate::{Error, Result};

pub const HEAD_MAGIC: &[u8; 8] = b"BEVHEAD1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HeadHeader {
    rows: usize,
    cols: usize,
    layout: HeadLayout,
}

fn write_field(w: &mut impl Write, f: &Field) -> Result<()> {
    for v in f.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_field(
    r: &mut impl Read,
    rows: usize,
    cols: usize,
    width: usize,
    path: &Path,
    what: &str,
) -> Result<Field> {
    let len = rows * cols * width;
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::malformed(path, format!("truncated {what} block: {e}")))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Field::from_data(rows, cols, width, data)
}

pub fn write_head(path: &Path, out: &HeadOutput) -> Result<()> {
    out.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    let header = HeadHeader {
        rows: out.rows(),
        cols: out.cols(),
        layout: out.layout.clone(),
    };
    let header_json = serde_json::to_vec(&header)?;
    w.write_all(HEAD_MAGIC)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    write_field(&mut w, &out.class_scores)?;
    write_field(&mut w, &out.reg)?;
    write_field(&mut w, &out.relation)?;
    w.flush()?;
    Ok(())
}

pub fn read_head(path: &Path) -> Result<HeadOutput> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| Error::malformed(path, format!("missing magic: {e}")))?;
    if &magic != HEAD_MAGIC {
        return Err(Error::malformed(path, "bad magic, not a head output file"));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|e| Error::malformed(path, format!("missing header length: {e}")))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 1 << 20 {
        return Err(Error::malformed(path, "implausible header length"));
    }
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)
        .map_err(|e| Error::malformed(path, format!("truncated header: {e}")))?;
    let header: HeadHeader = serde_json::from_slice(&header_json)
        .map_err(|e| Error::malformed(path, format!("bad header: {e}")))?;
    let (rows, cols) = (header.rows, header.cols);
    let layout = header.layout;
    let class_scores = read_field(&mut r, rows, cols, layout.num_classes, path, "class score")?;
    let reg = read_field(&mut r, rows, cols, layout.reg_width(), path, "regression")?;
    let relation = read_field(&mut r, rows, cols, layout.relation.arity(), path, "relation")?;
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(Error::malformed(path, "trailing bytes after tensor data"));
    }
    let out = HeadOutput {
        layout,
        class_scores,
        reg,
        relation,
    };
    out.validate()?;
    Ok(out)
}
