//! Independent reference computations for unit tests. Nothing here shares code
//! with the incremental routines it checks.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dense LU inverse via nalgebra.
pub fn direct_inverse(m: &Array2<f64>) -> Array2<f64> {
    let (r, c) = m.dim();
    let dm = DMatrix::from_row_slice(r, c, m.as_slice().expect("standard layout"));
    let inv = dm.try_inverse().expect("matrix is invertible");
    Array2::from_shape_fn((r, c), |(i, j)| inv[(i, j)])
}

/// `λI + Σ rowᵢ rowᵢᵀ`.
pub fn scatter(lambda: f64, rows: &Array2<f64>) -> Array2<f64> {
    let d = rows.ncols();
    Array2::<f64>::eye(d) * lambda + rows.t().dot(rows)
}

/// `(λI + Σ (rowᵢ − μ)(rowᵢ − μ)ᵀ)⁻¹`.
pub fn centered_scatter_inverse(lambda: f64, rows: &Array2<f64>) -> Array2<f64> {
    let mu: Array1<f64> = rows.mean_axis(Axis(0)).unwrap();
    let centered = rows - &mu;
    direct_inverse(&scatter(lambda, &centered))
}

pub fn gaussian_rows(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
}
