//! Greedy elliptic coreset selection and the uniform baseline.

use ndarray::{Array1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::InverseCovariance;
use crate::pool::PreprocessedPool;

/// Ordered selection with the bonus each pick had when it was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub bonuses: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Repexp,
    Random,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repexp" => Ok(Self::Repexp),
            "random" => Ok(Self::Random),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Repexp => "repexp",
            Self::Random => "random",
        })
    }
}

impl Method {
    pub fn select(self, pool: &PreprocessedPool, k: usize, lambda: f64, seed: u64) -> Result<SelectionResult> {
        match self {
            Self::Repexp => repexp_select(pool, k, lambda, seed),
            Self::Random => random_select(pool, k, seed),
        }
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds pool size {n}")));
    }
    Ok(())
}

/// Greedy elliptic selection over a preprocessed pool.
pub fn repexp_select(pool: &PreprocessedPool, k: usize, lambda: f64, seed: u64) -> Result<SelectionResult> {
    select_greedy(pool.vectors.view(), k, lambda, seed)
}

/// Greedy elliptic selection over the rows of `vectors`.
///
/// The first pick is uniform under `seed`. Each later pick is the unselected
/// row with the largest `hᵀΛh`, where `Λ` is the regularized inverse
/// covariance of the rows picked so far; ties go to the lowest index.
///
/// Bonuses of all rows are kept current with an `O(d)` correction per row
/// after each Sherman-Morrison step, so a full run costs `O(k(nd + d²))`.
pub fn select_greedy(vectors: ArrayView2<'_, f64>, k: usize, lambda: f64, seed: u64) -> Result<SelectionResult> {
    let n = vectors.nrows();
    check_k(k, n)?;
    if vectors.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("pool vectors"));
    }
    let mut cov = InverseCovariance::new(vectors.ncols(), lambda)?;
    let mut bonus: Array1<f64> = vectors.axis_iter(Axis(0)).map(|h| h.dot(&h) / lambda).collect();
    let mut taken = vec![false; n];
    let mut indices = Vec::with_capacity(k);
    let mut bonuses = Vec::with_capacity(k);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = rng.random_range(0..n);
    loop {
        taken[pick] = true;
        indices.push(pick);
        bonuses.push(bonus[pick].max(0.0));
        if indices.len() == k {
            break;
        }
        let (u, denom) = cov.absorb(vectors.row(pick))?;
        let proj = vectors.dot(&u);
        bonus.zip_mut_with(&proj, |b, &p| *b -= p * p / denom);

        let mut best: Option<usize> = None;
        for i in 0..n {
            if !taken[i] && best.is_none_or(|b| bonus[i] > bonus[b]) {
                best = Some(i);
            }
        }
        pick = best.expect("k <= n leaves an unselected row");
    }
    Ok(SelectionResult { indices, bonuses, seed })
}

/// `k` distinct indices drawn uniformly without replacement. Bonuses are zero.
pub fn random_select(pool: &PreprocessedPool, k: usize, seed: u64) -> Result<SelectionResult> {
    random_indices(pool.n(), k, seed)
}

pub fn random_indices(n: usize, k: usize, seed: u64) -> Result<SelectionResult> {
    check_k(k, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher-Yates.
    let mut perm: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        perm.swap(i, j);
    }
    perm.truncate(k);
    Ok(SelectionResult {
        indices: perm,
        bonuses: vec![0.0; k],
        seed,
    })
}
