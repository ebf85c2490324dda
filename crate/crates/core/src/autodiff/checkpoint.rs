//! Flat parameter archive.
//!
//! Layout: the header line `ADAMORE-CKPT-1`, a line with the entry count,
//! one manifest line per entry (`name rows cols byte_offset`), then the
//! concatenated little-endian `f64` payloads. Offsets are relative to the
//! start of the payload section.

use std::io::{BufRead, Read};
use std::path::Path;

use ndarray::Array2;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::Matrix;

pub const CHECKPOINT_HEADER: &str = "ADAMORE-CKPT-1";

pub fn encode(entries: &[(&str, &Matrix)]) -> Vec<u8> {
    let mut manifest = format!("{CHECKPOINT_HEADER}\n{}\n", entries.len());
    let mut offset = 0usize;
    for (name, m) in entries {
        assert!(
            !name.is_empty() && !name.contains(char::is_whitespace),
            "checkpoint names must be non-empty and whitespace-free"
        );
        manifest.push_str(&format!("{name} {} {} {offset}\n", m.nrows(), m.ncols()));
        offset += m.len() * 8;
    }
    let mut out = manifest.into_bytes();
    for (_, m) in entries {
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, Matrix)>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut cursor = std::io::Cursor::new(bytes);
    let mut line = String::new();
    let mut read_line = |cursor: &mut std::io::Cursor<&[u8]>, no: usize| -> Result<String> {
        line.clear();
        cursor
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            return Err(parse_err(no, "unexpected end of manifest".into()));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    let header = read_line(&mut cursor, 1)?;
    if header != CHECKPOINT_HEADER {
        return Err(parse_err(1, format!("bad header {header:?}")));
    }
    let count: usize = read_line(&mut cursor, 2)?
        .parse()
        .map_err(|e| parse_err(2, format!("entry count: {e}")))?;
    let mut manifest = Vec::with_capacity(count);
    for k in 0..count {
        let no = k + 3;
        let l = read_line(&mut cursor, no)?;
        let fields: Vec<&str> = l.split(' ').collect();
        if fields.len() != 4 {
            return Err(parse_err(no, format!("expected 4 fields, got {}", fields.len())));
        }
        let num = |s: &str| -> Result<usize> {
            s.parse().map_err(|e| parse_err(no, format!("{s:?}: {e}")))
        };
        manifest.push((
            fields[0].to_string(),
            num(fields[1])?,
            num(fields[2])?,
            num(fields[3])?,
        ));
    }
    let mut payload = Vec::new();
    cursor
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(count);
    for (k, (name, rows, cols, offset)) in manifest.into_iter().enumerate() {
        let len = rows * cols * 8;
        let chunk = payload
            .get(offset..offset + len)
            .ok_or_else(|| parse_err(k + 3, format!("payload for {name} out of range")))?;
        let values = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let m = Array2::from_shape_vec((rows, cols), values).expect("length checked");
        out.push((name, m));
    }
    Ok(out)
}

pub fn save(path: &Path, store: &ParamStore) -> Result<()> {
    let entries: Vec<(&str, &Matrix)> = store.named_values().collect();
    crate::io::write_atomic(path, &encode(&entries))
}

pub fn load(path: &Path) -> Result<Vec<(String, Matrix)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Overwrites every parameter of `store` from the archive at `path`. Names
/// and shapes must match exactly.
pub fn restore(path: &Path, store: &mut ParamStore) -> Result<()> {
    let entries = load(path)?;
    if entries.len() != store.len() {
        return Err(Error::invalid(format!(
            "{}: checkpoint has {} entries, model has {}",
            path.display(),
            entries.len(),
            store.len()
        )));
    }
    for (name, m) in entries {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::invalid(format!("{}: unknown parameter {name}", path.display())))?;
        if store.value(id).raw_dim() != m.raw_dim() {
            return Err(Error::invalid(format!(
                "{}: parameter {name} has shape {:?}, model expects {:?}",
                path.display(),
                m.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = m;
    }
    Ok(())
}
