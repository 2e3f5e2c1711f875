//! Very sparse random projections.
//!
//! Each entry of the `D × d` matrix is `+√s/√d` with probability `1/(2s)`,
//! `−√s/√d` with probability `1/(2s)` and zero otherwise, so squared norms are
//! preserved in expectation. The matrix is a pure function of
//! `(seed, D, d, s)` and is stored row-wise as its non-zero entries.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseProjection {
    input_dim: usize,
    output_dim: usize,
    sparsity: f64,
    seed: u64,
    // Non-zero entries of each input row as (output column, value).
    rows: Vec<Vec<(u32, f64)>>,
}

impl SparseProjection {
    /// Builds the projection with the default sparsity `s = √D`.
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        Self::with_sparsity(input_dim, output_dim, (input_dim as f64).sqrt(), seed)
    }

    pub fn with_sparsity(input_dim: usize, output_dim: usize, sparsity: f64, seed: u64) -> Result<Self> {
        if output_dim == 0 {
            return Err(Error::invalid("projection output dimension must be at least 1"));
        }
        if output_dim > input_dim {
            return Err(Error::invalid(format!(
                "cannot project up from {input_dim} to {output_dim} dimensions"
            )));
        }
        if !(sparsity.is_finite() && sparsity >= 1.0) {
            return Err(Error::invalid(format!("sparsity must be >= 1, got {sparsity}")));
        }
        let scale = (sparsity / output_dim as f64).sqrt();
        let half = 0.5 / sparsity;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..input_dim)
            .map(|_| {
                let mut row = Vec::new();
                for col in 0..output_dim {
                    let u: f64 = rng.random();
                    if u < half {
                        row.push((col as u32, scale));
                    } else if u < 2.0 * half {
                        row.push((col as u32, -scale));
                    }
                }
                row
            })
            .collect();
        Ok(Self {
            input_dim,
            output_dim,
            sparsity,
            seed,
            rows,
        })
    }

    /// Passthrough projection (the `dim × dim` identity).
    pub fn identity(dim: usize) -> Self {
        Self {
            input_dim: dim,
            output_dim: dim,
            sparsity: 1.0,
            seed: 0,
            rows: (0..dim).map(|i| vec![(i as u32, 1.0)]).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn sparsity(&self) -> f64 {
        self.sparsity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn apply(&self, v: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_dim(self.input_dim, v.len())?;
        let mut out = Array1::zeros(self.output_dim);
        self.accumulate(v.iter().copied(), out.as_slice_mut().unwrap());
        Ok(out)
    }

    /// Projects every row of `m`.
    pub fn apply_rows(&self, m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim(self.input_dim, m.ncols())?;
        let mut out = Array2::zeros((m.nrows(), self.output_dim));
        for (src, mut dst) in m.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            self.accumulate(src.iter().copied(), dst.as_slice_mut().unwrap());
        }
        Ok(out)
    }

    /// Projects rows stored as `f32`, accumulating in `f64`.
    pub fn apply_rows_f32(&self, m: ArrayView2<'_, f32>) -> Result<Array2<f64>> {
        check_dim(self.input_dim, m.ncols())?;
        let mut out = Array2::zeros((m.nrows(), self.output_dim));
        for (src, mut dst) in m.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            self.accumulate(src.iter().map(|&x| x as f64), dst.as_slice_mut().unwrap());
        }
        Ok(out)
    }

    fn accumulate(&self, v: impl Iterator<Item = f64>, out: &mut [f64]) {
        for (x, row) in v.zip(&self.rows) {
            if x == 0.0 {
                continue;
            }
            for &(col, w) in row {
                out[col as usize] += w * x;
            }
        }
    }

    /// Materializes the `D × d` matrix.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.input_dim, self.output_dim));
        for (i, row) in self.rows.iter().enumerate() {
            for &(col, w) in row {
                m[[i, col as usize]] = w;
            }
        }
        m
    }
}
