//! FSMX binary matrix files and CSV import/export.
//!
//! FSMX layout (all integers little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `b"FSMX"`               |
//! | 4      | 1    | version, `0x01`               |
//! | 5      | 8    | rows (`u64`)                  |
//! | 13     | 8    | cols (`u64`)                  |
//! | 21     | 4·n  | `rows·cols` `f32` values, row-major |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const FSMX_MAGIC: &[u8; 4] = b"FSMX";
pub const FSMX_VERSION: u8 = 0x01;
const HEADER_LEN: usize = 21;

/// Upper bound on element count accepted by the reader (2^32 elements).
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn encode_fsmx(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(FSMX_MAGIC);
    out.push(FSMX_VERSION);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fsmx(bytes: &[u8]) -> Result<DenseMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "header needs {HEADER_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != FSMX_MAGIC {
        return Err(Error::MalformedHeader(format!("bad magic {:?}", &bytes[0..4])));
    }
    if bytes[4] != FSMX_VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {:#04x}", bytes[4])));
    }
    let rows = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[13..21].try_into().unwrap());
    if rows == 0 || cols == 0 {
        return Err(Error::MalformedHeader(format!("zero dimension {rows}x{cols}")));
    }
    let count = rows
        .checked_mul(cols)
        .filter(|n| *n <= MAX_ELEMENTS)
        .ok_or(Error::DimensionOverflow { rows, cols })?;
    let expected = HEADER_LEN + 4 * count as usize;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(Error::MalformedEncoding(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseMatrix::new(rows as usize, cols as usize, data)
}

pub fn store_matrix(m: &DenseMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_fsmx(m))?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_fsmx(&bytes)
}

/// One row per line, comma-separated, shortest round-trip float formatting.
pub fn matrix_to_csv(m: &DenseMatrix) -> String {
    let mut s = String::new();
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn matrix_from_csv(text: &str) -> Result<DenseMatrix> {
    let rows = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f32>()
                        .map_err(|e| Error::MalformedEncoding(format!("bad CSV value {t:?}: {e}")))
                })
                .collect::<Result<Vec<f32>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::Empty("CSV contains no rows".into()));
    }
    DenseMatrix::from_rows(&rows)
}
