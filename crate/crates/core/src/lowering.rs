//! Lowering of CONV and FC operators to GEMM operands, and zero-padded tiling.
//!
//! CONV kernels are flattened channel-major, then kernel row, then kernel
//! column. The same order indexes the rows of the lowered input matrix, so
//! `W · X` is the convolution with output pixels in raster order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OperatorSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        input_h: usize,
        input_w: usize,
        stride: usize,
        padding: usize,
    },
    Fc {
        in_features: usize,
        out_features: usize,
        batch: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Conv,
    Fc,
}

impl OperatorSpec {
    pub fn kind(&self) -> OperatorKind {
        match self {
            Self::Conv { .. } => OperatorKind::Conv,
            Self::Fc { .. } => OperatorKind::Fc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Conv { in_channels, out_channels, kernel_h, kernel_w, input_h, input_w, stride, .. } => {
                if [in_channels, out_channels, kernel_h, kernel_w, input_h, input_w, stride]
                    .contains(&0)
                {
                    return Err(Error::InvalidValue(format!("CONV counts must be positive: {self:?}")));
                }
                self.output_hw().map(|_| ())
            }
            Self::Fc { in_features, out_features, batch } => {
                if [in_features, out_features, batch].contains(&0) {
                    return Err(Error::InvalidValue(format!("FC counts must be positive: {self:?}")));
                }
                Ok(())
            }
        }
    }

    /// Output spatial size of a CONV; `(1, batch)` for FC.
    pub fn output_hw(&self) -> Result<(usize, usize)> {
        match *self {
            Self::Conv { kernel_h, kernel_w, input_h, input_w, stride, padding, .. } => {
                let dim = |input: usize, kernel: usize| {
                    let span = input + 2 * padding;
                    if span < kernel {
                        return Err(Error::InvalidValue(format!(
                            "kernel {kernel} larger than padded input {span}"
                        )));
                    }
                    Ok((span - kernel) / stride + 1)
                };
                Ok((dim(input_h, kernel_h)?, dim(input_w, kernel_w)?))
            }
            Self::Fc { batch, .. } => Ok((1, batch)),
        }
    }

    /// GEMM dimensions `(M, K, N)` of the lowered operator.
    pub fn gemm_dims(&self) -> Result<(usize, usize, usize)> {
        self.validate()?;
        Ok(match *self {
            Self::Conv { in_channels, out_channels, kernel_h, kernel_w, .. } => {
                let (oh, ow) = self.output_hw()?;
                (out_channels, in_channels * kernel_h * kernel_w, oh * ow)
            }
            Self::Fc { in_features, out_features, batch } => (out_features, in_features, batch),
        })
    }

    /// Shape of the raw input tensor as a matrix: `C_in × (H·W)` for CONV,
    /// `in_features × batch` for FC.
    pub fn input_shape(&self) -> (usize, usize) {
        match *self {
            Self::Conv { in_channels, input_h, input_w, .. } => (in_channels, input_h * input_w),
            Self::Fc { in_features, batch, .. } => (in_features, batch),
        }
    }
}

/// Lowers a flattened CONV kernel tensor `[C_out][C_in][k_h][k_w]` to a
/// `C_out × (C_in·k_h·k_w)` weight matrix.
pub fn im2col_weights(spec: &OperatorSpec, kernel: &[f32]) -> Result<DenseMatrix> {
    let OperatorSpec::Conv { in_channels, out_channels, kernel_h, kernel_w, .. } = *spec else {
        return Err(Error::Unsupported("im2col_weights needs a CONV operator".into()));
    };
    spec.validate()?;
    let k = in_channels * kernel_h * kernel_w;
    if kernel.len() != out_channels * k {
        return Err(Error::DimensionMismatch(format!(
            "kernel tensor has {} elements, expected {}",
            kernel.len(),
            out_channels * k
        )));
    }
    DenseMatrix::new(out_channels, k, kernel.to_vec())
}

/// Lowers an input tensor `[C_in][H][W]` to the `(C_in·k_h·k_w) × (out_h·out_w)`
/// patch matrix; out-of-bounds taps read zero padding.
pub fn im2col_inputs(spec: &OperatorSpec, input: &[f32]) -> Result<DenseMatrix> {
    let OperatorSpec::Conv { in_channels, kernel_h, kernel_w, input_h, input_w, stride, padding, .. } =
        *spec
    else {
        return Err(Error::Unsupported("im2col_inputs needs a CONV operator".into()));
    };
    spec.validate()?;
    if input.len() != in_channels * input_h * input_w {
        return Err(Error::DimensionMismatch(format!(
            "input tensor has {} elements, expected {}",
            input.len(),
            in_channels * input_h * input_w
        )));
    }
    let (oh, ow) = spec.output_hw()?;
    let rows = in_channels * kernel_h * kernel_w;
    Ok(DenseMatrix::from_fn(rows, oh * ow, |row, col| {
        let c = row / (kernel_h * kernel_w);
        let ky = (row / kernel_w) % kernel_h;
        let kx = row % kernel_w;
        let (oy, ox) = (col / ow, col % ow);
        let y = (oy * stride + ky) as isize - padding as isize;
        let x = (ox * stride + kx) as isize - padding as isize;
        if y < 0 || x < 0 || y >= input_h as isize || x >= input_w as isize {
            0.0
        } else {
            input[(c * input_h + y as usize) * input_w + x as usize]
        }
    }))
}

/// Lowers an operator whose weights are given as a matrix (`C_out × C_in·k_h·k_w`
/// for CONV, `out × in` for FC) and whose inputs are given in the shape of
/// [`OperatorSpec::input_shape`]. Returns the GEMM operands `(W, X)`.
pub fn lower_operator(
    spec: &OperatorSpec,
    weights: &DenseMatrix,
    inputs: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let (m, k, _) = spec.gemm_dims()?;
    if (weights.rows(), weights.cols()) != (m, k) {
        return Err(Error::DimensionMismatch(format!(
            "weights are {}x{}, operator needs {m}x{k}",
            weights.rows(),
            weights.cols()
        )));
    }
    if (inputs.rows(), inputs.cols()) != spec.input_shape() {
        return Err(Error::DimensionMismatch(format!(
            "inputs are {}x{}, operator needs {:?}",
            inputs.rows(),
            inputs.cols(),
            spec.input_shape()
        )));
    }
    let x = match spec {
        OperatorSpec::Conv { .. } => im2col_inputs(spec, inputs.data())?,
        OperatorSpec::Fc { .. } => inputs.clone(),
    };
    Ok((weights.clone(), x))
}

/// A matrix split into equally sized, zero-padded tiles (row-major grid).
#[derive(Clone, Debug, PartialEq)]
pub struct TileGrid {
    pub tile_rows: usize,
    pub tile_cols: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub source_rows: usize,
    pub source_cols: usize,
    tiles: Vec<DenseMatrix>,
}

impl TileGrid {
    pub fn tile(&self, gr: usize, gc: usize) -> &DenseMatrix {
        &self.tiles[gr * self.grid_cols + gc]
    }

    pub fn tiles(&self) -> &[DenseMatrix] {
        &self.tiles
    }

    /// Rows of tile row `gr` that lie inside the source matrix.
    pub fn valid_rows(&self, gr: usize) -> usize {
        self.tile_rows.min(self.source_rows - gr * self.tile_rows)
    }

    pub fn valid_cols(&self, gc: usize) -> usize {
        self.tile_cols.min(self.source_cols - gc * self.tile_cols)
    }

    /// Concatenates the tiles and crops the padding.
    pub fn reassemble(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.source_rows, self.source_cols, |r, c| {
            self.tile(r / self.tile_rows, c / self.tile_cols)
                .get(r % self.tile_rows, c % self.tile_cols)
        })
    }
}

pub fn tile_matrix(m: &DenseMatrix, tile_rows: usize, tile_cols: usize) -> Result<TileGrid> {
    if tile_rows == 0 || tile_cols == 0 {
        return Err(Error::InvalidValue("tile dimensions must be positive".into()));
    }
    let grid_rows = m.rows().div_ceil(tile_rows);
    let grid_cols = m.cols().div_ceil(tile_cols);
    let mut tiles = Vec::with_capacity(grid_rows * grid_cols);
    for gr in 0..grid_rows {
        for gc in 0..grid_cols {
            tiles.push(DenseMatrix::from_fn(tile_rows, tile_cols, |r, c| {
                let (rr, cc) = (gr * tile_rows + r, gc * tile_cols + c);
                if rr < m.rows() && cc < m.cols() {
                    m.get(rr, cc)
                } else {
                    0.0
                }
            }));
        }
    }
    Ok(TileGrid {
        tile_rows,
        tile_cols,
        grid_rows,
        grid_cols,
        source_rows: m.rows(),
        source_cols: m.cols(),
        tiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{gemm_ref, random_dense, random_sparse, Sparsity};

    fn conv(cin: usize, cout: usize, k: usize, hw: usize, stride: usize, padding: usize) -> OperatorSpec {
        OperatorSpec::Conv {
            in_channels: cin,
            out_channels: cout,
            kernel_h: k,
            kernel_w: k,
            input_h: hw,
            input_w: hw,
            stride,
            padding,
        }
    }

    /// Direct sliding-window convolution, accumulated in f64.
    fn direct_conv(spec: &OperatorSpec, kernel: &[f32], input: &[f32]) -> Vec<f32> {
        let OperatorSpec::Conv { in_channels, out_channels, kernel_h, kernel_w, input_h, input_w, stride, padding } = *spec else {
            unreachable!()
        };
        let (oh, ow) = spec.output_hw().unwrap();
        let mut out = vec![];
        for co in 0..out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0f64;
                    for ci in 0..in_channels {
                        for ky in 0..kernel_h {
                            for kx in 0..kernel_w {
                                let y = (oy * stride + ky) as isize - padding as isize;
                                let x = (ox * stride + kx) as isize - padding as isize;
                                if y < 0 || x < 0 || y >= input_h as isize || x >= input_w as isize {
                                    continue;
                                }
                                let w = kernel[((co * in_channels + ci) * kernel_h + ky) * kernel_w + kx];
                                let v = input[(ci * input_h + y as usize) * input_w + x as usize];
                                s += w as f64 * v as f64;
                            }
                        }
                    }
                    out.push(s as f32);
                }
            }
        }
        out
    }

    #[test]
    fn one_by_one_kernel_is_raw_weights() {
        let spec = conv(3, 2, 1, 4, 1, 0);
        let k: Vec<f32> = (0..6).map(|i| i as f32).collect();
        let w = im2col_weights(&spec, &k).unwrap();
        assert_eq!((w.rows(), w.cols()), (2, 3));
        assert_eq!(w.data(), k.as_slice());
    }

    #[test]
    fn single_filter_window_order() {
        let spec = conv(1, 1, 3, 5, 1, 0);
        let k: Vec<f32> = (1..=9).map(|i| i as f32).collect();
        let w = im2col_weights(&spec, &k).unwrap();
        assert_eq!((w.rows(), w.cols()), (1, 9));
        assert_eq!(w.row(0), k.as_slice());
    }

    #[test]
    fn lowered_gemm_equals_direct_convolution() {
        for (i, (cin, cout, k, stride, pad)) in
            [(1, 1, 3, 1, 0), (2, 3, 3, 1, 1), (3, 4, 2, 2, 0), (2, 2, 3, 2, 1)].into_iter().enumerate()
        {
            let spec = conv(cin, cout, k, 8, stride, pad);
            let kernel = random_dense(1, cout * cin * k * k, i as u64).into_data();
            let input = random_dense(1, cin * 64, 100 + i as u64).into_data();
            let w = im2col_weights(&spec, &kernel).unwrap();
            let x = im2col_inputs(&spec, &input).unwrap();
            let o = gemm_ref(&w, &x).unwrap();
            let direct = direct_conv(&spec, &kernel, &input);
            for (a, b) in o.data().iter().zip(&direct) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn non_overlapping_patches() {
        let spec = conv(1, 1, 2, 4, 2, 0);
        let input: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let x = im2col_inputs(&spec, &input).unwrap();
        assert_eq!((x.rows(), x.cols()), (4, 4));
        let mut seen: Vec<f32> = x.data().to_vec();
        seen.sort_by(f32::total_cmp);
        assert_eq!(seen, input);
    }

    #[test]
    fn padded_border_patches_contain_zeros() {
        let spec = conv(1, 1, 3, 4, 1, 1);
        let input = vec![1.0; 16];
        let x = im2col_inputs(&spec, &input).unwrap();
        // Top-left output pixel: first row and column of the window are padding.
        let col0: Vec<f32> = x.column(0).collect();
        assert_eq!(col0, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn size_mismatch_errors() {
        let spec = conv(1, 1, 3, 4, 1, 0);
        assert!(im2col_weights(&spec, &[0.0; 8]).is_err());
        assert!(im2col_inputs(&spec, &[0.0; 15]).is_err());
        let bad = conv(1, 1, 5, 3, 1, 0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tiling_exact_and_padded() {
        let g = tile_matrix(&random_dense(6, 6, 1), 3, 3).unwrap();
        assert_eq!(g.tiles().len(), 4);
        let m = random_dense(5, 5, 2);
        let g = tile_matrix(&m, 3, 3).unwrap();
        assert_eq!(g.tiles().len(), 4);
        assert_eq!(g.tile(1, 1).get(2, 2), 0.0);
        assert_eq!(g.valid_rows(1), 2);
        assert_eq!(g.reassemble(), m);
    }

    #[test]
    fn tiled_gemm_equals_reference() {
        let w = random_sparse(7, 10, Sparsity::new(0.3).unwrap(), 5);
        let x = random_dense(10, 6, 6);
        let reference = gemm_ref(&w, &x).unwrap();
        for (tr, tk, tn) in [(2, 3, 4), (3, 3, 3), (7, 10, 6), (4, 1, 5)] {
            let wg = tile_matrix(&w, tr, tk).unwrap();
            let xg = tile_matrix(&x, tk, tn).unwrap();
            let mut out = DenseMatrix::zeros(wg.grid_rows * tr, xg.grid_cols * tn);
            for i in 0..wg.grid_rows {
                for j in 0..xg.grid_cols {
                    let mut acc = vec![0f64; tr * tn];
                    for k in 0..wg.grid_cols {
                        let p = gemm_ref(wg.tile(i, k), xg.tile(k, j)).unwrap();
                        acc.iter_mut().zip(p.data()).for_each(|(a, v)| *a += *v as f64);
                    }
                    for r in 0..tr {
                        for c in 0..tn {
                            out.set(i * tr + r, j * tn + c, acc[r * tn + c] as f32);
                        }
                    }
                }
            }
            for r in 0..7 {
                for c in 0..6 {
                    let (a, b) = (out.get(r, c), reference.get(r, c));
                    assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn fc_batch_maps_to_columns() {
        let spec = OperatorSpec::Fc { in_features: 4, out_features: 3, batch: 5 };
        assert_eq!(spec.gemm_dims().unwrap(), (3, 4, 5));
        let (w, x) = lower_operator(&spec, &random_dense(3, 4, 0), &random_dense(4, 5, 1)).unwrap();
        assert_eq!((w.rows(), x.cols()), (3, 5));
    }
}
