//! Reference sparse formats used for footprint comparison: CSR, CSC, COO,
//! RLE-4 and the single-stage bitmap.

use serde::{Deserialize, Serialize};

use super::bits::{self, words_for_bits, Reader};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Longest zero run a single RLE-4 code can express.
pub const RLE4_MAX_RUN: u8 = 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GenericEncoding {
    Csr { rows: usize, cols: usize, values: Vec<f32>, col_indices: Vec<u16>, row_ptr: Vec<u32> },
    Csc { rows: usize, cols: usize, values: Vec<f32>, row_indices: Vec<u16>, col_ptr: Vec<u32> },
    Coo { rows: usize, cols: usize, entries: Vec<(u16, u16, f32)> },
    /// Pairs of (zero-run code, value) over the row-major element stream.
    /// Each code is followed by a value word; runs longer than 15 are split
    /// by emitting code 15 with a stored zero value, which consumes 16
    /// elements. Trailing zeros after the last pair are implicit.
    Rle4 { rows: usize, cols: usize, codes: Vec<u8>, values: Vec<f32> },
    /// One bit per element (row-major), plus the non-zero values.
    Bitmap { rows: usize, cols: usize, bitmap: Vec<bool>, values: Vec<f32> },
}

fn check_index_range(rows: usize, cols: usize) -> Result<()> {
    if rows > u16::MAX as usize + 1 || cols > u16::MAX as usize + 1 {
        return Err(Error::Unsupported(format!(
            "{rows}x{cols} exceeds the 16-bit index range"
        )));
    }
    Ok(())
}

pub fn encode_csr(m: &DenseMatrix) -> Result<GenericEncoding> {
    check_index_range(m.rows(), m.cols())?;
    let mut values = Vec::new();
    let mut col_indices = Vec::new();
    let mut row_ptr = vec![0u32];
    for r in 0..m.rows() {
        for (c, v) in m.row(r).iter().enumerate() {
            if *v != 0.0 {
                values.push(*v);
                col_indices.push(c as u16);
            }
        }
        row_ptr.push(values.len() as u32);
    }
    Ok(GenericEncoding::Csr { rows: m.rows(), cols: m.cols(), values, col_indices, row_ptr })
}

pub fn encode_csc(m: &DenseMatrix) -> Result<GenericEncoding> {
    check_index_range(m.rows(), m.cols())?;
    let mut values = Vec::new();
    let mut row_indices = Vec::new();
    let mut col_ptr = vec![0u32];
    for c in 0..m.cols() {
        for (r, v) in m.column(c).enumerate() {
            if v != 0.0 {
                values.push(v);
                row_indices.push(r as u16);
            }
        }
        col_ptr.push(values.len() as u32);
    }
    Ok(GenericEncoding::Csc { rows: m.rows(), cols: m.cols(), values, row_indices, col_ptr })
}

pub fn encode_coo(m: &DenseMatrix) -> Result<GenericEncoding> {
    check_index_range(m.rows(), m.cols())?;
    let mut entries = Vec::new();
    for r in 0..m.rows() {
        for (c, v) in m.row(r).iter().enumerate() {
            if *v != 0.0 {
                entries.push((r as u16, c as u16, *v));
            }
        }
    }
    Ok(GenericEncoding::Coo { rows: m.rows(), cols: m.cols(), entries })
}

pub fn encode_rle4(m: &DenseMatrix) -> GenericEncoding {
    let mut codes = Vec::new();
    let mut values = Vec::new();
    let mut run = 0usize;
    for v in m.data() {
        if *v == 0.0 {
            run += 1;
            continue;
        }
        while run > RLE4_MAX_RUN as usize {
            codes.push(RLE4_MAX_RUN);
            values.push(0.0);
            run -= RLE4_MAX_RUN as usize + 1;
        }
        codes.push(run as u8);
        values.push(*v);
        run = 0;
    }
    GenericEncoding::Rle4 { rows: m.rows(), cols: m.cols(), codes, values }
}

pub fn encode_bitmap(m: &DenseMatrix) -> GenericEncoding {
    let bitmap = m.data().iter().map(|v| *v != 0.0).collect();
    let values = m.data().iter().copied().filter(|v| *v != 0.0).collect();
    GenericEncoding::Bitmap { rows: m.rows(), cols: m.cols(), bitmap, values }
}

impl GenericEncoding {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Self::Csr { rows, cols, .. }
            | Self::Csc { rows, cols, .. }
            | Self::Coo { rows, cols, .. }
            | Self::Rle4 { rows, cols, .. }
            | Self::Bitmap { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn decode(&self) -> Result<DenseMatrix> {
        let (rows, cols) = self.dims();
        let mut m = DenseMatrix::new(rows, cols, vec![0.0; rows * cols])?;
        let bad = |msg: String| Error::MalformedEncoding(msg);
        match self {
            Self::Csr { values, col_indices, row_ptr, .. } => {
                if row_ptr.len() != rows + 1 || col_indices.len() != values.len() {
                    return Err(bad("CSR array lengths disagree".into()));
                }
                if row_ptr[0] != 0 || *row_ptr.last().unwrap() as usize != values.len() {
                    return Err(bad("CSR row pointers do not span the values".into()));
                }
                for r in 0..rows {
                    let (lo, hi) = (row_ptr[r] as usize, row_ptr[r + 1] as usize);
                    if lo > hi {
                        return Err(bad(format!("CSR row pointer decreases at row {r}")));
                    }
                    for i in lo..hi {
                        let c = col_indices[i] as usize;
                        if c >= cols {
                            return Err(bad(format!("CSR column index {c} out of range")));
                        }
                        m.set(r, c, values[i]);
                    }
                }
            }
            Self::Csc { values, row_indices, col_ptr, .. } => {
                if col_ptr.len() != cols + 1 || row_indices.len() != values.len() {
                    return Err(bad("CSC array lengths disagree".into()));
                }
                if col_ptr[0] != 0 || *col_ptr.last().unwrap() as usize != values.len() {
                    return Err(bad("CSC column pointers do not span the values".into()));
                }
                for c in 0..cols {
                    let (lo, hi) = (col_ptr[c] as usize, col_ptr[c + 1] as usize);
                    if lo > hi {
                        return Err(bad(format!("CSC column pointer decreases at column {c}")));
                    }
                    for i in lo..hi {
                        let r = row_indices[i] as usize;
                        if r >= rows {
                            return Err(bad(format!("CSC row index {r} out of range")));
                        }
                        m.set(r, c, values[i]);
                    }
                }
            }
            Self::Coo { entries, .. } => {
                for (r, c, v) in entries {
                    let (r, c) = (*r as usize, *c as usize);
                    if r >= rows || c >= cols {
                        return Err(bad(format!("COO entry ({r}, {c}) out of range")));
                    }
                    m.set(r, c, *v);
                }
            }
            Self::Rle4 { codes, values, .. } => {
                if codes.len() != values.len() {
                    return Err(bad("RLE-4 code and value counts differ".into()));
                }
                let mut pos = 0usize;
                for (code, v) in codes.iter().zip(values) {
                    if *code > RLE4_MAX_RUN {
                        return Err(bad(format!("RLE-4 code {code} exceeds 4 bits")));
                    }
                    pos += *code as usize;
                    if pos >= rows * cols {
                        return Err(bad("RLE-4 stream overruns the matrix".into()));
                    }
                    m.set(pos / cols, pos % cols, *v);
                    pos += 1;
                }
            }
            Self::Bitmap { bitmap, values, .. } => {
                if bitmap.len() != rows * cols {
                    return Err(bad("bitmap length differs from element count".into()));
                }
                if bitmap.iter().filter(|b| **b).count() != values.len() {
                    return Err(bad("bitmap popcount differs from value count".into()));
                }
                let mut vals = values.iter();
                for (i, b) in bitmap.iter().enumerate() {
                    if *b {
                        m.set(i / cols, i % cols, *vals.next().unwrap());
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn footprint_bits(&self) -> u64 {
        let (rows, cols) = self.dims();
        match self {
            Self::Csr { values, .. } => 48 * values.len() as u64 + 32 * (rows as u64 + 1),
            Self::Csc { values, .. } => 48 * values.len() as u64 + 32 * (cols as u64 + 1),
            Self::Coo { entries, .. } => 64 * entries.len() as u64,
            Self::Rle4 { codes, .. } => 36 * codes.len() as u64,
            Self::Bitmap { values, .. } => {
                32 * values.len() as u64 + 32 * words_for_bits(rows * cols) as u64
            }
        }
    }

    pub(crate) fn write_payload(&self, out: &mut Vec<u8>) {
        let put_f32s = |out: &mut Vec<u8>, vs: &[f32]| {
            for v in vs {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        match self {
            Self::Csr { values, col_indices: idx, row_ptr: ptr, .. }
            | Self::Csc { values, row_indices: idx, col_ptr: ptr, .. } => {
                out.extend_from_slice(&(values.len() as u32).to_le_bytes());
                put_f32s(out, values);
                for i in idx {
                    out.extend_from_slice(&i.to_le_bytes());
                }
                for p in ptr {
                    out.extend_from_slice(&p.to_le_bytes());
                }
            }
            Self::Coo { entries, .. } => {
                out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
                for (r, c, v) in entries {
                    out.extend_from_slice(&r.to_le_bytes());
                    out.extend_from_slice(&c.to_le_bytes());
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Self::Rle4 { codes, values, .. } => {
                out.extend_from_slice(&(codes.len() as u32).to_le_bytes());
                for pair in codes.chunks(2) {
                    out.push(pair[0] | pair.get(1).map_or(0, |c| c << 4));
                }
                put_f32s(out, values);
            }
            Self::Bitmap { bitmap, values, .. } => {
                out.extend_from_slice(&(values.len() as u32).to_le_bytes());
                for w in bits::pack(bitmap) {
                    out.extend_from_slice(&w.to_le_bytes());
                }
                put_f32s(out, values);
            }
        }
    }

    pub(crate) fn read_payload(
        kind: super::FormatKind,
        r: &mut Reader<'_>,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        use super::FormatKind as F;
        let limit = rows * cols;
        let count = |r: &mut Reader<'_>| -> Result<usize> {
            let n = r.u32()? as usize;
            if n > limit {
                return Err(Error::MalformedEncoding(format!("count {n} exceeds {limit} elements")));
            }
            Ok(n)
        };
        let f32s = |r: &mut Reader<'_>, n: usize| (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>();
        Ok(match kind {
            F::Csr | F::Csc => {
                let nnz = count(r)?;
                let values = f32s(r, nnz)?;
                let idx = (0..nnz).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
                let outer = if kind == F::Csr { rows } else { cols };
                let ptr = (0..=outer).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                if kind == F::Csr {
                    Self::Csr { rows, cols, values, col_indices: idx, row_ptr: ptr }
                } else {
                    Self::Csc { rows, cols, values, row_indices: idx, col_ptr: ptr }
                }
            }
            F::Coo => {
                let nnz = count(r)?;
                let entries = (0..nnz)
                    .map(|_| Ok((r.u16()?, r.u16()?, r.f32()?)))
                    .collect::<Result<Vec<_>>>()?;
                Self::Coo { rows, cols, entries }
            }
            F::Rle4 => {
                let n = count(r)?;
                let packed = r.take(n.div_ceil(2))?;
                let codes = (0..n).map(|i| (packed[i / 2] >> (4 * (i % 2))) & 0xF).collect();
                let values = f32s(r, n)?;
                Self::Rle4 { rows, cols, codes, values }
            }
            F::Bitmap => {
                let nnz = count(r)?;
                let words =
                    (0..words_for_bits(limit)).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                let values = f32s(r, nnz)?;
                Self::Bitmap { rows, cols, bitmap: bits::unpack(&words, limit), values }
            }
            other => {
                return Err(Error::Unsupported(format!("{other:?} is not a generic format")))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{random_sparse, Sparsity};

    #[test]
    fn csr_of_identity() {
        let GenericEncoding::Csr { values, col_indices, row_ptr, .. } =
            encode_csr(&DenseMatrix::identity(3)).unwrap()
        else {
            unreachable!()
        };
        assert_eq!(values, vec![1.0, 1.0, 1.0]);
        assert_eq!(col_indices, vec![0, 1, 2]);
        assert_eq!(row_ptr, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rle4_splits_long_runs() {
        let mut data = vec![0.0f32; 21];
        data[20] = 7.0;
        let m = DenseMatrix::new(1, 21, data).unwrap();
        let GenericEncoding::Rle4 { codes, values, .. } = encode_rle4(&m) else { unreachable!() };
        assert_eq!(codes, vec![15, 4]);
        assert_eq!(values, vec![0.0, 7.0]);
        assert_eq!(encode_rle4(&m).decode().unwrap(), m);
    }

    #[test]
    fn rle4_run_of_exactly_fifteen() {
        let mut data = vec![0.0f32; 16];
        data[15] = 1.0;
        let m = DenseMatrix::new(4, 4, data).unwrap();
        let GenericEncoding::Rle4 { codes, .. } = encode_rle4(&m) else { unreachable!() };
        assert_eq!(codes, vec![15]);
        assert_eq!(encode_rle4(&m).decode().unwrap(), m);
    }

    #[test]
    fn coo_roundtrip() {
        for seed in 0..20 {
            let m = random_sparse(9, 13, Sparsity::new(0.6).unwrap(), seed);
            assert_eq!(encode_coo(&m).unwrap().decode().unwrap(), m);
        }
    }

    #[test]
    fn malformed_streams_rejected() {
        let bad = GenericEncoding::Csr {
            rows: 2,
            cols: 2,
            values: vec![1.0],
            col_indices: vec![5],
            row_ptr: vec![0, 1, 1],
        };
        assert!(bad.decode().is_err());
        let bad = GenericEncoding::Rle4 { rows: 1, cols: 2, codes: vec![3], values: vec![1.0] };
        assert!(bad.decode().is_err());
    }

    #[test]
    fn oversized_dims_unsupported() {
        let m = DenseMatrix::zeros(1, 70_000);
        assert!(matches!(encode_csr(&m), Err(Error::Unsupported(_))));
    }
}
