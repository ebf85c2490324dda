//! Output helpers: atomic writes and the small tabular export formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Matrix;

/// Writes `bytes` to a sibling temp file then renames it over `path`, so an
/// interrupted run never leaves a truncated file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{}: not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Whitespace-separated rows, one matrix row per line.
pub fn matrix_to_tsv(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.len() * 12);
    for row in m.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push('\t');
            }
            first = false;
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_matrix_tsv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        path: path.to_path_buf(),
                        line: no + 1,
                        msg: format!("invalid or non-finite value {t:?}"),
                    })
            })
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: no + 1,
                    msg: format!("ragged row: {} values, expected {c}", row.len()),
                })
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Ok(Matrix::from_shape_vec((rows, cols), values).expect("rectangular"))
}
