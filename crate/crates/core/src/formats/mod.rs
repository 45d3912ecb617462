//! Sparse matrix formats and their memory-footprint accounting.
//!
//! Bit widths: values are 32-bit words everywhere. CSR/CSC use 16-bit
//! indices and 32-bit pointers; COO stores 16+16+32 bits per non-zero; RLE-4
//! stores a 4-bit run code and a 32-bit value per pair. Bitmaps are packed
//! into zero-padded 32-bit words. CSB stores a 32-bit value and a 16-bit
//! column index per entry plus one 32-bit merged-column count.

mod bits;
pub mod csb;
pub mod generic;
pub mod two_stage;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bits::{pack as pack_bits, unpack as unpack_bits, words_for_bits};
pub use csb::{decode_csb, encode_csb, CsbEntry, CsbTile, ZERO_SLOT};
pub use generic::GenericEncoding;
pub use two_stage::{decode_two_stage_bitmap, encode_two_stage_bitmap, ElementLookup, TwoStageBitmapTile};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Sparsity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FormatKind {
    Dense,
    Csr,
    Csc,
    Coo,
    Rle4,
    Bitmap,
    TwoStageBitmap,
    Csb,
}

impl FormatKind {
    pub const ALL: [FormatKind; 8] = [
        FormatKind::Dense,
        FormatKind::Csr,
        FormatKind::Csc,
        FormatKind::Coo,
        FormatKind::Rle4,
        FormatKind::Bitmap,
        FormatKind::TwoStageBitmap,
        FormatKind::Csb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dense => "dense",
            Self::Csr => "csr",
            Self::Csc => "csc",
            Self::Coo => "coo",
            Self::Rle4 => "rle4",
            Self::Bitmap => "bitmap",
            Self::TwoStageBitmap => "two-stage-bitmap",
            Self::Csb => "csb",
        }
    }

    fn tag(self) -> u8 {
        self as u8
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for FormatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FormatKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL.into_iter().find(|k| k.name() == key).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::InvalidValue(format!("unknown format {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// Any supported encoding of a matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoding {
    Dense(DenseMatrix),
    Generic(GenericEncoding),
    TwoStageBitmap(TwoStageBitmapTile),
    Csb(CsbTile),
}

const ENCODING_MAGIC: &[u8; 4] = b"FSEN";

impl Encoding {
    pub fn kind(&self) -> FormatKind {
        match self {
            Self::Dense(_) => FormatKind::Dense,
            Self::Generic(g) => match g {
                GenericEncoding::Csr { .. } => FormatKind::Csr,
                GenericEncoding::Csc { .. } => FormatKind::Csc,
                GenericEncoding::Coo { .. } => FormatKind::Coo,
                GenericEncoding::Rle4 { .. } => FormatKind::Rle4,
                GenericEncoding::Bitmap { .. } => FormatKind::Bitmap,
            },
            Self::TwoStageBitmap(_) => FormatKind::TwoStageBitmap,
            Self::Csb(_) => FormatKind::Csb,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Self::Dense(m) => (m.rows(), m.cols()),
            Self::Generic(g) => g.dims(),
            Self::TwoStageBitmap(t) => (t.rows(), t.cols()),
            Self::Csb(t) => (t.rows(), t.original_cols()),
        }
    }

    pub fn decode(&self) -> Result<DenseMatrix> {
        match self {
            Self::Dense(m) => Ok(m.clone()),
            Self::Generic(g) => g.decode(),
            Self::TwoStageBitmap(t) => decode_two_stage_bitmap(t),
            Self::Csb(t) => decode_csb(t),
        }
    }

    pub fn footprint_bits(&self) -> u64 {
        match self {
            Self::Dense(m) => 32 * m.len() as u64,
            Self::Generic(g) => g.footprint_bits(),
            Self::TwoStageBitmap(t) => t.footprint_bits(),
            Self::Csb(t) => t.footprint_bits(),
        }
    }

    /// Serialized form: `"FSEN"`, format tag byte, rows and cols as `u32`
    /// little-endian, then the format payload described in `docs/formats.md`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (rows, cols) = self.dims();
        let mut out = Vec::new();
        out.extend_from_slice(ENCODING_MAGIC);
        out.push(self.kind().tag());
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        match self {
            Self::Dense(m) => {
                for v in m.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Self::Generic(g) => g.write_payload(&mut out),
            Self::TwoStageBitmap(t) => out.extend_from_slice(&t.to_bytes()),
            Self::Csb(t) => out.extend_from_slice(&t.to_bytes()),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bits::Reader::new(bytes);
        if r.take(4).ok() != Some(&ENCODING_MAGIC[..]) {
            return Err(Error::MalformedHeader("missing FSEN magic".into()));
        }
        let tag = r.u8()?;
        let kind = FormatKind::from_tag(tag)
            .ok_or_else(|| Error::MalformedHeader(format!("unknown format tag {tag}")))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows == 0 || cols == 0 {
            return Err(Error::MalformedHeader(format!("zero dimension {rows}x{cols}")));
        }
        if (rows as u64) * (cols as u64) > 1 << 32 {
            return Err(Error::DimensionOverflow { rows: rows as u64, cols: cols as u64 });
        }
        let enc = match kind {
            FormatKind::Dense => {
                let data = (0..rows * cols).map(|_| r.f32()).collect::<Result<_>>()?;
                Self::Dense(DenseMatrix::new(rows, cols, data)?)
            }
            FormatKind::TwoStageBitmap => {
                Self::TwoStageBitmap(TwoStageBitmapTile::read_payload(&mut r, rows, cols)?)
            }
            FormatKind::Csb => Self::Csb(CsbTile::read_payload(&mut r, rows, cols)?),
            k => Self::Generic(GenericEncoding::read_payload(k, &mut r, rows, cols)?),
        };
        r.finish()?;
        Ok(enc)
    }
}

pub fn encode(m: &DenseMatrix, kind: FormatKind) -> Result<Encoding> {
    Ok(match kind {
        FormatKind::Dense => Encoding::Dense(m.clone()),
        FormatKind::Csr => Encoding::Generic(generic::encode_csr(m)?),
        FormatKind::Csc => Encoding::Generic(generic::encode_csc(m)?),
        FormatKind::Coo => Encoding::Generic(generic::encode_coo(m)?),
        FormatKind::Rle4 => Encoding::Generic(generic::encode_rle4(m)),
        FormatKind::Bitmap => Encoding::Generic(generic::encode_bitmap(m)),
        FormatKind::TwoStageBitmap => Encoding::TwoStageBitmap(encode_two_stage_bitmap(m)),
        FormatKind::Csb => Encoding::Csb(encode_csb(m)),
    })
}

/// Closed-form footprint of `m` stored whole in format `kind`.
pub fn footprint_bits(m: &DenseMatrix, kind: FormatKind) -> u64 {
    let nnz = m.nnz() as u64;
    let (rows, cols) = (m.rows() as u64, m.cols() as u64);
    let words = |bits: u64| 32 * bits.div_ceil(32);
    match kind {
        FormatKind::Dense => 32 * rows * cols,
        FormatKind::Csr => 48 * nnz + 32 * (rows + 1),
        FormatKind::Csc => 48 * nnz + 32 * (cols + 1),
        FormatKind::Coo => 64 * nnz,
        FormatKind::Rle4 => match generic::encode_rle4(m) {
            GenericEncoding::Rle4 { codes, .. } => 36 * codes.len() as u64,
            _ => unreachable!(),
        },
        FormatKind::Bitmap => 32 * nnz + words(rows * cols),
        FormatKind::TwoStageBitmap => {
            let nzc = (0..m.cols()).filter(|&c| !m.is_zero_column(c)).count() as u64;
            32 * nnz + words(cols) + words(rows * nzc)
        }
        FormatKind::Csb => encode_csb(m).footprint_bits(),
    }
}

/// Footprint when the column-oriented tile formats (two-stage bitmap, CSB)
/// are applied to horizontal strips of `column_height` rows, so zero columns
/// are detected at that height. Other formats are unaffected.
pub fn footprint_bits_with_column_height(
    m: &DenseMatrix,
    kind: FormatKind,
    column_height: usize,
) -> Result<u64> {
    if column_height == 0 {
        return Err(Error::InvalidValue("column height must be positive".into()));
    }
    if !matches!(kind, FormatKind::TwoStageBitmap | FormatKind::Csb) || column_height >= m.rows() {
        return Ok(footprint_bits(m, kind));
    }
    let mut total = 0;
    for r0 in (0..m.rows()).step_by(column_height) {
        let h = column_height.min(m.rows() - r0);
        let strip = DenseMatrix::from_fn(h, m.cols(), |r, c| m.get(r0 + r, c));
        total += footprint_bits(&strip, kind);
    }
    Ok(total)
}

/// Probability that a column of `n` independent elements, each zero with
/// probability `s`, is entirely zero: `s^n`.
pub fn zero_column_probability(s: Sparsity, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidValue("column height must be at least 1".into()));
    }
    Ok(s.value().powi(n as i32))
}
