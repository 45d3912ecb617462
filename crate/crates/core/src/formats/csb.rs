//! Compressed sparse block (CSB) tiles.
//!
//! Non-zero columns whose non-zero supports are pairwise disjoint are merged
//! into one streamed column. Every merged column holds exactly `rows`
//! entries; each entry carries its original column index, or
//! [`ZERO_SLOT`] where no merged column has a non-zero at that row. The row
//! index is implicit in the entry order. All-zero columns are dropped.
//!
//! Merging is first-fit: columns are visited in ascending index order and
//! each joins the lowest-numbered merged column it does not collide with.

use serde::{Deserialize, Serialize};

use super::bits::Reader;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Column index stored for a zero slot.
pub const ZERO_SLOT: i32 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsbEntry {
    pub value: f32,
    pub col_index: i32,
}

impl CsbEntry {
    pub const EMPTY: CsbEntry = CsbEntry { value: 0.0, col_index: ZERO_SLOT };

    #[inline]
    pub fn is_zero_slot(&self) -> bool {
        self.col_index == ZERO_SLOT
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsbTile {
    rows: usize,
    original_cols: usize,
    merged_col_count: usize,
    entries: Vec<CsbEntry>,
}

impl CsbTile {
    pub fn from_parts(
        rows: usize,
        original_cols: usize,
        merged_col_count: usize,
        entries: Vec<CsbEntry>,
    ) -> Result<Self> {
        let tile = Self { rows, original_cols, merged_col_count, entries };
        tile.validate()?;
        Ok(tile)
    }

    fn validate(&self) -> Result<()> {
        if self.entries.len() != self.merged_col_count * self.rows {
            return Err(Error::MalformedEncoding(format!(
                "{} entries for {} merged columns of {} rows",
                self.entries.len(),
                self.merged_col_count,
                self.rows
            )));
        }
        let mut seen = vec![false; self.rows * self.original_cols];
        for (i, e) in self.entries.iter().enumerate() {
            let row = i % self.rows;
            if e.is_zero_slot() {
                if e.value != 0.0 {
                    return Err(Error::MalformedEncoding(format!(
                        "zero slot at entry {i} carries value {}",
                        e.value
                    )));
                }
                continue;
            }
            if e.col_index < 0 || e.col_index as usize >= self.original_cols {
                return Err(Error::MalformedEncoding(format!(
                    "column index {} out of range 0..{}",
                    e.col_index, self.original_cols
                )));
            }
            let slot = row * self.original_cols + e.col_index as usize;
            if std::mem::replace(&mut seen[slot], true) {
                return Err(Error::MalformedEncoding(format!(
                    "duplicate assignment to ({row}, {})",
                    e.col_index
                )));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn original_cols(&self) -> usize {
        self.original_cols
    }

    pub fn merged_col_count(&self) -> usize {
        self.merged_col_count
    }

    pub fn entries(&self) -> &[CsbEntry] {
        &self.entries
    }

    /// The `rows` entries of merged column `g`, ascending row.
    pub fn merged_column(&self, g: usize) -> &[CsbEntry] {
        &self.entries[g * self.rows..(g + 1) * self.rows]
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().filter(|e| !e.is_zero_slot()).count()
    }

    /// 16-bit column indices of one merged column, packed two per word.
    pub fn index_words_per_column(&self) -> usize {
        self.rows.div_ceil(2)
    }

    /// 32-bit value and 16-bit column index per entry, plus one count word.
    pub fn footprint_bits(&self) -> u64 {
        48 * self.entries.len() as u64 + 32
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 6 * self.entries.len());
        out.extend_from_slice(&(self.merged_col_count as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.value.to_le_bytes());
            out.extend_from_slice(&(e.col_index as i16).to_le_bytes());
        }
        out
    }

    pub(crate) fn read_payload(r: &mut Reader<'_>, rows: usize, cols: usize) -> Result<Self> {
        let merged = r.u32()? as usize;
        let count = merged
            .checked_mul(rows)
            .filter(|n| *n <= rows * cols)
            .ok_or_else(|| Error::MalformedEncoding(format!("{merged} merged columns")))?;
        let entries = (0..count)
            .map(|_| Ok(CsbEntry { value: r.f32()?, col_index: r.i16()? as i32 }))
            .collect::<Result<_>>()?;
        Self::from_parts(rows, cols, merged, entries)
    }
}

pub fn encode_csb(tile: &DenseMatrix) -> CsbTile {
    let rows = tile.rows();
    // occupancy[g][r] == Some(c): merged column g holds original column c at row r.
    let mut groups: Vec<Vec<Option<usize>>> = Vec::new();
    for c in 0..tile.cols() {
        let support: Vec<usize> = (0..rows).filter(|&r| tile.get(r, c) != 0.0).collect();
        if support.is_empty() {
            continue;
        }
        let target = groups.iter().position(|g| support.iter().all(|&r| g[r].is_none()));
        let g = match target {
            Some(g) => g,
            None => {
                groups.push(vec![None; rows]);
                groups.len() - 1
            }
        };
        for &r in &support {
            groups[g][r] = Some(c);
        }
    }
    let entries = groups
        .iter()
        .flat_map(|g| {
            g.iter().enumerate().map(|(r, slot)| match slot {
                Some(c) => CsbEntry { value: tile.get(r, *c), col_index: *c as i32 },
                None => CsbEntry::EMPTY,
            })
        })
        .collect();
    CsbTile { rows, original_cols: tile.cols(), merged_col_count: groups.len(), entries }
}

pub fn decode_csb(enc: &CsbTile) -> Result<DenseMatrix> {
    enc.validate()?;
    let mut m = DenseMatrix::zeros(enc.rows, enc.original_cols);
    for (i, e) in enc.entries.iter().enumerate() {
        if !e.is_zero_slot() {
            m.set(i % enc.rows, e.col_index as usize, e.value);
        }
    }
    Ok(m)
}
