//! Representation-based exploration.
//!
//! Response embeddings are scored with elliptic bonuses `hᵀ Σ⁻¹ h` against a
//! regularized covariance of what has already been seen. The crate provides:
//!
//! * [`linalg`]: inverse covariance maintained by rank-one updates, the
//!   mean-centered correction and leverage scores.
//! * [`projection`]: seeded very sparse random projections.
//! * [`pool`]: the embedding pool file format and preprocessing.
//! * [`selection`]: greedy elliptic coreset selection and the random baseline.
//! * [`reward`]: leverage-score bonuses for RL rollout groups.
//! * [`guided`]: token-level bonus-guided decoding over a toy sequence model.
//! * [`metrics`]: pass@k, samples-to-correct and hardness binning.
//! * [`synth`]: synthetic Gaussian-mixture pools and end-to-end experiments.
//! * [`report`]: CSV/JSON report emission.

pub mod error;
pub mod guided;
pub mod linalg;
pub mod metrics;
pub mod pool;
pub mod projection;
pub mod report;
pub mod reward;
pub mod selection;
pub mod synth;

#[cfg(test)]
mod test_oracle;

pub use error::{Error, Result};
pub use linalg::{leverage_score, leverage_scores, InverseCovariance};
pub use pool::{EmbeddingPool, ManifestRecord, PoolingMode, PreprocessedPool};
pub use projection::SparseProjection;
pub use selection::{random_select, repexp_select, SelectionResult};

/// Default regularization for coreset selection.
pub const DEFAULT_LAMBDA: f64 = 1.0;
/// Default working dimension after projection for coreset selection.
pub const DEFAULT_WORKING_DIM: usize = 512;

/// Independent seed for sub-stream `stream` of `base` (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
