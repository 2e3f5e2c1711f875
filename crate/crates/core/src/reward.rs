//! Leverage-score reward bonuses for RL rollout groups.
//!
//! For each prompt's group of `k` rollouts, embeddings are projected with a
//! fresh seeded projection, mean-centered over the group, and each rollout
//! receives `β · hᵢᵀ(λI + Σⱼ hⱼhⱼᵀ)⁻¹hᵢ` on top of its extrinsic reward. Groups
//! in which every rollout failed are passed through untouched.
//!
//! The module is stateless: a trainer passes a per-step projection seed.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::leverage_scores;
use crate::pool::mean_center;
use crate::projection::SparseProjection;

/// Reference GRPO group size.
pub const REFERENCE_GROUP_SIZE: usize = 8;
/// Projection dimension used for long-context tasks.
pub const LONG_CONTEXT_PROJECTION_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BonusConfig {
    pub beta: f64,
    pub lambda: f64,
    pub projection_dim: usize,
    /// Projection sparsity; `None` means `√D`.
    pub sparsity: Option<f64>,
}

impl Default for BonusConfig {
    fn default() -> Self {
        default_config()
    }
}

/// β = 0.01, λ = 1, projection to 32 dimensions.
pub fn default_config() -> BonusConfig {
    BonusConfig {
        beta: 0.01,
        lambda: 1.0,
        projection_dim: 32,
        sparsity: None,
    }
}

impl BonusConfig {
    pub fn long_context() -> Self {
        Self {
            projection_dim: LONG_CONTEXT_PROJECTION_DIM,
            ..default_config()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.projection_dim == 0 {
            return Err(Error::invalid("projection dimension must be at least 1"));
        }
        Ok(())
    }
}

/// One prompt's rollouts for one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardGroup {
    pub prompt_id: String,
    /// `k × D` raw embeddings.
    pub embeddings: Array2<f64>,
    /// Extrinsic 0/1 rewards.
    pub extrinsic: Vec<u8>,
    /// Seed of this step's projection.
    pub projection_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRewards {
    pub prompt_id: String,
    pub augmented: Vec<f64>,
    /// Bonus actually added to each reward (`β` times the leverage score, or
    /// zero for pass-through groups).
    pub bonuses: Vec<f64>,
}

/// Projects, centers and scores a group.
///
/// When the configured projection dimension is not smaller than the raw
/// dimension the embeddings are used unprojected.
pub fn augment_group(group: &RewardGroup, config: &BonusConfig) -> Result<AugmentedRewards> {
    config.validate()?;
    let (k, raw_dim) = group.embeddings.dim();
    if k == 0 {
        return Err(Error::invalid("reward group is empty"));
    }
    if group.extrinsic.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: group.extrinsic.len(),
        });
    }
    if group.embeddings.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("rollout embeddings"));
    }
    let projected = if config.projection_dim < raw_dim {
        let sparsity = config.sparsity.unwrap_or((raw_dim as f64).sqrt());
        let p = SparseProjection::with_sparsity(raw_dim, config.projection_dim, sparsity, group.projection_seed)?;
        p.apply_rows(group.embeddings.view())?
    } else {
        group.embeddings.clone()
    };
    let mut centered = projected;
    mean_center(&mut centered);
    let (augmented, bonuses) = augment_centered(centered.view(), &group.extrinsic, config.beta, config.lambda)?;
    Ok(AugmentedRewards {
        prompt_id: group.prompt_id.clone(),
        augmented,
        bonuses,
    })
}

/// Adds leverage-score bonuses to rewards for vectors already in working
/// space. Returns `(augmented, bonuses)`.
pub fn augment_centered(
    vectors: ArrayView2<'_, f64>,
    extrinsic: &[u8],
    beta: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if vectors.nrows() != extrinsic.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.nrows(),
            actual: extrinsic.len(),
        });
    }
    if let Some(&bad) = extrinsic.iter().find(|&&r| r > 1) {
        return Err(Error::BadReward(bad));
    }
    let base: Vec<f64> = extrinsic.iter().map(|&r| r as f64).collect();
    if extrinsic.iter().all(|&r| r == 0) || beta == 0.0 {
        return Ok((base, vec![0.0; extrinsic.len()]));
    }
    let scores = leverage_scores(vectors, lambda)?;
    let bonuses: Vec<f64> = scores.iter().map(|s| beta * s.max(0.0)).collect();
    let augmented = base.iter().zip(&bonuses).map(|(r, b)| r + b).collect();
    Ok((augmented, bonuses))
}
