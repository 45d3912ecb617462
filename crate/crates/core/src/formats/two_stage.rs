//! Two-stage bitmap tiles: a column bit array marking non-zero columns, an
//! element bit array covering only those columns, and the packed non-zero
//! values in column-major order.

use serde::{Deserialize, Serialize};

use super::bits::{self, words_for_bits, Reader};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStageBitmapTile {
    rows: usize,
    cols: usize,
    col_bitmap: Vec<bool>,
    elem_bitmap: Vec<bool>,
    values: Vec<f32>,
    // Derived: original index of each non-zero column, and the offset of its
    // first value in `values`.
    #[serde(skip)]
    nonzero_cols: Vec<usize>,
    #[serde(skip)]
    value_offsets: Vec<usize>,
}

/// Result of a decompression-unit lookup of one tile element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementLookup {
    /// The whole column is zero; the controller never schedules it.
    ZeroColumn,
    /// Declared zero by the element bitmap; no memory read is needed.
    Zero,
    /// Stored value and its word index within `values`.
    Value { index: usize, value: f32 },
}

impl TwoStageBitmapTile {
    pub fn from_parts(
        rows: usize,
        cols: usize,
        col_bitmap: Vec<bool>,
        elem_bitmap: Vec<bool>,
        values: Vec<f32>,
    ) -> Result<Self> {
        if col_bitmap.len() != cols {
            return Err(Error::MalformedEncoding(format!(
                "column bitmap has {} bits for {cols} columns",
                col_bitmap.len()
            )));
        }
        let nzc = col_bitmap.iter().filter(|b| **b).count();
        if elem_bitmap.len() != rows * nzc {
            return Err(Error::MalformedEncoding(format!(
                "element bitmap has {} bits, expected {rows} x {nzc}",
                elem_bitmap.len()
            )));
        }
        let ones = elem_bitmap.iter().filter(|b| **b).count();
        if ones != values.len() {
            return Err(Error::MalformedEncoding(format!(
                "element bitmap popcount {ones} != {} values",
                values.len()
            )));
        }
        let nonzero_cols: Vec<usize> =
            col_bitmap.iter().enumerate().filter(|(_, b)| **b).map(|(c, _)| c).collect();
        let mut value_offsets = Vec::with_capacity(nzc);
        let mut off = 0;
        for chunk in elem_bitmap.chunks(rows.max(1)).take(nzc) {
            value_offsets.push(off);
            off += chunk.iter().filter(|b| **b).count();
        }
        Ok(Self { rows, cols, col_bitmap, elem_bitmap, values, nonzero_cols, value_offsets })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn col_bitmap(&self) -> &[bool] {
        &self.col_bitmap
    }

    pub fn elem_bitmap(&self) -> &[bool] {
        &self.elem_bitmap
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Original indices of the non-zero columns, ascending.
    pub fn nonzero_columns(&self) -> &[usize] {
        &self.nonzero_cols
    }

    /// Packed column bitmap words plus packed element bitmap words.
    pub fn metadata_words(&self) -> usize {
        words_for_bits(self.cols) + words_for_bits(self.elem_bitmap.len())
    }

    /// Total 32-bit words needed to stream the whole tile.
    pub fn data_words(&self) -> usize {
        self.metadata_words() + self.values.len()
    }

    pub fn footprint_bits(&self) -> u64 {
        32 * self.data_words() as u64
    }

    /// Looks up element `(r, c)` of the original tile.
    pub fn lookup(&self, r: usize, c: usize) -> ElementLookup {
        let Ok(pos) = self.nonzero_cols.binary_search(&c) else {
            return ElementLookup::ZeroColumn;
        };
        self.lookup_nonzero(pos, r)
    }

    /// Looks up row `r` of the `pos`-th non-zero column.
    pub fn lookup_nonzero(&self, pos: usize, r: usize) -> ElementLookup {
        let base = pos * self.rows;
        if !self.elem_bitmap[base + r] {
            return ElementLookup::Zero;
        }
        let before = self.elem_bitmap[base..base + r].iter().filter(|b| **b).count();
        let index = self.value_offsets[pos] + before;
        ElementLookup::Value { index, value: self.values[index] }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for w in bits::pack(&self.col_bitmap) {
            out.extend_from_slice(&w.to_le_bytes());
        }
        let elem = bits::pack(&self.elem_bitmap);
        out.extend_from_slice(&(self.elem_bitmap.len() as u32).to_le_bytes());
        for w in elem {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub(crate) fn read_payload(r: &mut Reader<'_>, rows: usize, cols: usize) -> Result<Self> {
        let col_words: Vec<u32> =
            (0..words_for_bits(cols)).map(|_| r.u32()).collect::<Result<_>>()?;
        let elem_len = r.u32()? as usize;
        let elem_words: Vec<u32> =
            (0..words_for_bits(elem_len)).map(|_| r.u32()).collect::<Result<_>>()?;
        let nnz = r.u32()? as usize;
        let values = (0..nnz).map(|_| r.f32()).collect::<Result<_>>()?;
        Self::from_parts(
            rows,
            cols,
            bits::unpack(&col_words, cols),
            bits::unpack(&elem_words, elem_len),
            values,
        )
    }
}

pub fn encode_two_stage_bitmap(tile: &DenseMatrix) -> TwoStageBitmapTile {
    let (rows, cols) = (tile.rows(), tile.cols());
    let mut col_bitmap = Vec::with_capacity(cols);
    let mut elem_bitmap = Vec::new();
    let mut values = Vec::new();
    for c in 0..cols {
        let nonzero = !tile.is_zero_column(c);
        col_bitmap.push(nonzero);
        if nonzero {
            for v in tile.column(c) {
                elem_bitmap.push(v != 0.0);
                if v != 0.0 {
                    values.push(v);
                }
            }
        }
    }
    TwoStageBitmapTile::from_parts(rows, cols, col_bitmap, elem_bitmap, values)
        .expect("encoder output satisfies the tile invariants")
}

pub fn decode_two_stage_bitmap(enc: &TwoStageBitmapTile) -> Result<DenseMatrix> {
    // Re-validate: the tile may have been deserialized or built by hand.
    let enc = TwoStageBitmapTile::from_parts(
        enc.rows,
        enc.cols,
        enc.col_bitmap.clone(),
        enc.elem_bitmap.clone(),
        enc.values.clone(),
    )?;
    let mut m = DenseMatrix::zeros(enc.rows, enc.cols);
    let mut vals = enc.values.iter();
    let mut bits = enc.elem_bitmap.iter();
    for &c in &enc.nonzero_cols {
        for r in 0..enc.rows {
            if *bits.next().unwrap() {
                m.set(r, c, *vals.next().unwrap());
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{random_sparse, Sparsity};

    /// The 3x4 weight tile of the sOS walk-through: non-zero columns 0 and 3,
    /// `(a, c, 0)` and `(b, d, e)`.
    fn sos_tile() -> DenseMatrix {
        DenseMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0, 2.0],
            vec![3.0, 0.0, 0.0, 4.0],
            vec![0.0, 0.0, 0.0, 5.0],
        ])
        .unwrap()
    }

    #[test]
    fn worked_tile_uses_seven_words() {
        let enc = encode_two_stage_bitmap(&sos_tile());
        assert_eq!(enc.col_bitmap(), &[true, false, false, true]);
        assert_eq!(enc.elem_bitmap().len(), 6);
        assert_eq!(enc.values(), &[1.0, 3.0, 2.0, 4.0, 5.0]);
        assert_eq!(enc.metadata_words(), 2);
        assert_eq!(enc.data_words(), 7);
        assert_eq!(decode_two_stage_bitmap(&enc).unwrap(), sos_tile());
    }

    #[test]
    fn all_zero_tile() {
        let enc = encode_two_stage_bitmap(&DenseMatrix::zeros(4, 4));
        assert!(enc.col_bitmap().iter().all(|b| !b));
        assert!(enc.values().is_empty());
        assert_eq!(decode_two_stage_bitmap(&enc).unwrap(), DenseMatrix::zeros(4, 4));
    }

    #[test]
    fn random_roundtrip() {
        for (i, s) in [0.0, 0.5, 0.9, 1.0].into_iter().enumerate() {
            for seed in 0..10 {
                let t = random_sparse(8, 8, Sparsity::new(s).unwrap(), seed * 31 + i as u64);
                assert_eq!(decode_two_stage_bitmap(&encode_two_stage_bitmap(&t)).unwrap(), t);
            }
        }
    }

    #[test]
    fn popcount_mismatch_rejected() {
        let enc = encode_two_stage_bitmap(&sos_tile());
        let err = TwoStageBitmapTile::from_parts(
            3,
            4,
            enc.col_bitmap().to_vec(),
            enc.elem_bitmap().to_vec(),
            vec![1.0; 4],
        );
        assert!(matches!(err, Err(Error::MalformedEncoding(_))));
    }

    #[test]
    fn lookup_matches_source() {
        let t = sos_tile();
        let enc = encode_two_stage_bitmap(&t);
        assert_eq!(enc.lookup(0, 1), ElementLookup::ZeroColumn);
        assert_eq!(enc.lookup(2, 0), ElementLookup::Zero);
        assert_eq!(enc.lookup(2, 3), ElementLookup::Value { index: 4, value: 5.0 });
        assert_eq!(enc.lookup(1, 3), ElementLookup::Value { index: 3, value: 4.0 });
    }
}
