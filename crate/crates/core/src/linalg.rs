//! Elliptic bonuses over a regularized inverse covariance.
//!
//! [`InverseCovariance`] holds `Λ = (λI + Σⱼ hⱼhⱼᵀ)⁻¹` and is kept current with
//! Sherman-Morrison updates, so absorbing one vector costs `O(d²)`. It also
//! tracks the running sum and count of absorbed vectors, which is what the
//! mean-centered correction in [`InverseCovariance::mean_centered_inverse`]
//! needs when the mean shifts as more data arrives.
//!
//! All arithmetic is `f64`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{check_dim, Error, Result};

/// Smallest magnitude accepted for the denominator of the mean-centering
/// correction.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct InverseCovariance {
    inverse: Array2<f64>,
    lambda: f64,
    count: u64,
    mean_sum: Array1<f64>,
}

impl InverseCovariance {
    /// Fresh state `Λ₀ = λ⁻¹ I` with nothing absorbed.
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self {
            inverse: Array2::eye(dim) / lambda,
            lambda,
            count: 0,
            mean_sum: Array1::zeros(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean_sum.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of vectors absorbed so far.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean_sum(&self) -> ArrayView1<'_, f64> {
        self.mean_sum.view()
    }

    /// Mean of the absorbed vectors, or `None` before the first update.
    pub fn mean(&self) -> Option<Array1<f64>> {
        (self.count > 0).then(|| &self.mean_sum / self.count as f64)
    }

    /// The current (non-centered) inverse `Λ`.
    pub fn inverse(&self) -> ArrayView2<'_, f64> {
        self.inverse.view()
    }

    /// Elliptic bonus `hᵀ Λ h`.
    pub fn bonus(&self, h: ArrayView1<'_, f64>) -> Result<f64> {
        check_dim(self.dim(), h.len())?;
        Ok(quadratic_form(self.inverse.view(), h))
    }

    /// Absorbs `h` into the covariance.
    pub fn update(&mut self, h: ArrayView1<'_, f64>) -> Result<()> {
        self.absorb(h).map(|_| ())
    }

    /// Absorbs `h` and returns `(Λₜ₋₁h, 1 + hᵀΛₜ₋₁h)`.
    ///
    /// Callers tracking bonuses of many fixed vectors can use these to update
    /// each bonus in `O(d)`: `b(y) -= (yᵀu)² / denom`.
    pub fn absorb(&mut self, h: ArrayView1<'_, f64>) -> Result<(Array1<f64>, f64)> {
        check_dim(self.dim(), h.len())?;
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("update vector"));
        }
        let u = self.inverse.dot(&h);
        let denom = 1.0 + h.dot(&u);
        assert!(
            denom > 0.0,
            "Sherman-Morrison denominator {denom} is not positive; inverse lost definiteness"
        );
        subtract_symmetric_outer(&mut self.inverse, u.view(), 1.0 / denom);
        self.count += 1;
        self.mean_sum += &h;
        Ok((u, denom))
    }

    /// Inverse of the mean-centered regularized covariance
    /// `λI + Σⱼ (hⱼ − μ)(hⱼ − μ)ᵀ`, obtained from the non-centered inverse by a
    /// single rank-one correction:
    ///
    /// `Λ − (Λμ)(Λμ)ᵀ / (−1/H + μᵀΛμ)`.
    pub fn mean_centered_inverse(&self) -> Result<Array2<f64>> {
        if self.count == 0 {
            return Err(Error::NoData);
        }
        let h = self.count as f64;
        let mu = &self.mean_sum / h;
        let v = self.inverse.dot(&mu);
        let denom = -1.0 / h + mu.dot(&v);
        if denom.abs() < DEGENERACY_THRESHOLD {
            return Err(Error::Degenerate(denom));
        }
        let mut out = self.inverse.clone();
        subtract_symmetric_outer(&mut out, v.view(), 1.0 / denom);
        Ok(out)
    }
}

/// `hᵀ M h`.
pub fn quadratic_form(m: ArrayView2<'_, f64>, h: ArrayView1<'_, f64>) -> f64 {
    h.dot(&m.dot(&h))
}

/// `m -= scale · u uᵀ`, computed on the upper triangle and mirrored so the
/// result is exactly symmetric.
fn subtract_symmetric_outer(m: &mut Array2<f64>, u: ArrayView1<'_, f64>, scale: f64) {
    let d = u.len();
    for i in 0..d {
        let ui = u[i] * scale;
        for j in i..d {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]) - ui * u[j];
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

/// Leverage score of row `index` within `group`: `hᵢᵀ(λI + Σⱼ hⱼhⱼᵀ)⁻¹hᵢ`
/// where the sum runs over every row, including `index`.
pub fn leverage_score(group: ArrayView2<'_, f64>, index: usize, lambda: f64) -> Result<f64> {
    if index >= group.nrows() {
        return Err(Error::invalid(format!(
            "row index {index} out of range for group of {}",
            group.nrows()
        )));
    }
    let cov = group_inverse(group, lambda)?;
    cov.bonus(group.row(index))
}

/// Leverage scores of every row of `group`, sharing one inverse.
pub fn leverage_scores(group: ArrayView2<'_, f64>, lambda: f64) -> Result<Vec<f64>> {
    let cov = group_inverse(group, lambda)?;
    group.axis_iter(Axis(0)).map(|row| cov.bonus(row)).collect()
}

fn group_inverse(group: ArrayView2<'_, f64>, lambda: f64) -> Result<InverseCovariance> {
    let mut cov = InverseCovariance::new(group.ncols(), lambda)?;
    for row in group.axis_iter(Axis(0)) {
        cov.update(row)?;
    }
    Ok(cov)
}

/// Relative Frobenius distance `‖a − b‖_F / ‖b‖_F`.
pub fn relative_frobenius(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let diff = (&a - &b).mapv(|v| v * v).sum().sqrt();
    let norm = b.mapv(|v| v * v).sum().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_oracle::{centered_scatter_inverse, direct_inverse, gaussian_rows, scatter};
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn e(d: usize, i: usize) -> Array1<f64> {
        let mut v = Array1::zeros(d);
        v[i] = 1.0;
        v
    }

    #[test]
    fn fresh_bonus_is_scaled_norm() {
        let s = InverseCovariance::new(3, 1.0).unwrap();
        assert_eq!(s.bonus(e(3, 0).view()).unwrap(), 1.0);
        let s = InverseCovariance::new(3, 4.0).unwrap();
        assert_eq!(s.bonus(e(3, 0).view()).unwrap(), 0.25);
    }

    #[test]
    fn absorbing_basis_vector() {
        let mut s = InverseCovariance::new(2, 1.0).unwrap();
        s.update(e(2, 0).view()).unwrap();
        assert_eq!(s.inverse(), array![[0.5, 0.0], [0.0, 1.0]]);
        assert_eq!(s.bonus(e(2, 0).view()).unwrap(), 0.5);
        assert_eq!(s.bonus(e(2, 1).view()).unwrap(), 1.0);
    }

    #[test]
    fn zero_vector_only_counts() {
        let mut s = InverseCovariance::new(4, 2.0).unwrap();
        let before = s.inverse().to_owned();
        s.update(Array1::zeros(4).view()).unwrap();
        assert_eq!(s.inverse(), before);
        assert_eq!(s.count(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        let mut s = InverseCovariance::new(3, 1.0).unwrap();
        assert!(matches!(
            s.bonus(Array1::zeros(2).view()),
            Err(Error::DimensionMismatch { expected: 3, actual: 2 })
        ));
        assert!(matches!(
            s.update(array![1.0, f64::NAN, 0.0].view()),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(s.count(), 0);
        assert!(InverseCovariance::new(3, 0.0).is_err());
        assert!(InverseCovariance::new(0, 1.0).is_err());
    }

    #[test]
    fn fifty_gaussian_updates_match_direct_inverse() {
        let rows = gaussian_rows(50, 8, 11);
        let mut s = InverseCovariance::new(8, 1.0).unwrap();
        for r in rows.rows() {
            s.update(r).unwrap();
        }
        let direct = direct_inverse(&scatter(1.0, &rows));
        assert!(relative_frobenius(s.inverse(), direct.view()) < 1e-8);
    }

    #[test]
    fn mean_centered_inverse_of_constant_data_is_scaled_identity() {
        for c in [array![0.0, 0.0, 0.0], array![1.5, -2.0, 0.25]] {
            let mut s = InverseCovariance::new(3, 0.5).unwrap();
            for _ in 0..3 {
                s.update(c.view()).unwrap();
            }
            let m = s.mean_centered_inverse().unwrap();
            let expected: Array2<f64> = Array2::eye(3) / 0.5;
            assert!(relative_frobenius(m.view(), expected.view()) < 1e-10, "{m}");
        }
    }

    #[test]
    fn mean_centered_inverse_matches_direct() {
        let rows = gaussian_rows(2, 3, 5);
        let mut s = InverseCovariance::new(3, 0.1).unwrap();
        for r in rows.rows() {
            s.update(r).unwrap();
        }
        let m = s.mean_centered_inverse().unwrap();
        let direct = centered_scatter_inverse(0.1, &rows);
        assert!(relative_frobenius(m.view(), direct.view()) < 1e-8);
    }

    #[test]
    fn mean_centered_inverse_needs_data() {
        let s = InverseCovariance::new(3, 1.0).unwrap();
        assert!(matches!(s.mean_centered_inverse(), Err(Error::NoData)));
    }

    #[test]
    fn leverage_examples() {
        let group = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        for i in 0..2 {
            let l = leverage_score(group.view(), i, 1.0).unwrap();
            assert!((l - 0.5).abs() < 1e-15);
        }
        let k = 5;
        let v = array![0.6, 0.8];
        let group = Array2::from_shape_fn((k, 2), |(_, j)| v[j]);
        for i in 0..k {
            let l = leverage_score(group.view(), i, 1e-6).unwrap();
            assert!((l - 1.0 / k as f64).abs() < 1e-5, "{l}");
        }
        let group = array![[0.0, 0.0], [1.0, 2.0]];
        assert_eq!(leverage_score(group.view(), 0, 1.0).unwrap(), 0.0);
        assert!(leverage_score(group.view(), 2, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn bonus_never_increases_with_data(
            seed in any::<u64>(),
            n in 1usize..20,
            d in 1usize..8,
            lambda in 0.01f64..10.0,
        ) {
            let rows = gaussian_rows(n + 1, d, seed);
            let query = rows.row(n);
            let mut s = InverseCovariance::new(d, lambda).unwrap();
            let mut prev = s.bonus(query).unwrap();
            for r in rows.rows().into_iter().take(n) {
                s.update(r).unwrap();
                let b = s.bonus(query).unwrap();
                prop_assert!(b <= prev * (1.0 + 1e-12) + 1e-15);
                prop_assert!(b >= 0.0);
                prev = b;
            }
        }

        #[test]
        fn leverage_scores_sum_to_trace(
            seed in any::<u64>(),
            k in 1usize..16,
            d in 1usize..10,
            lambda in 0.05f64..5.0,
        ) {
            let rows = gaussian_rows(k, d, seed);
            let scores = leverage_scores(rows.view(), lambda).unwrap();
            let sigma = scatter(lambda, &rows);
            let inv = direct_inverse(&sigma);
            let shifted = &sigma - &(Array2::<f64>::eye(d) * lambda);
            let trace = inv.dot(&shifted).diag().sum();
            let total: f64 = scores.iter().sum();
            prop_assert!((total - trace).abs() < 1e-8 * trace.max(1.0));
            prop_assert!(total <= d as f64 + 1e-9);
            for s in scores {
                prop_assert!((0.0..1.0).contains(&s));
            }
        }

        #[test]
        fn inverse_stays_symmetric(seed in any::<u64>(), n in 1usize..40, d in 1usize..12) {
            let rows = gaussian_rows(n, d, seed);
            let mut s = InverseCovariance::new(d, 0.3).unwrap();
            for r in rows.rows() {
                s.update(r).unwrap();
            }
            let inv = s.inverse();
            prop_assert_eq!(inv.to_owned(), inv.t().to_owned());
        }
    }
}
