//! Embedding pools on disk and in memory.
//!
//! A pool is one prompt's candidate responses, each reduced to a single
//! response-level vector. Pools are listed in a JSON-lines manifest with one
//! binary data file per prompt:
//!
//! ```text
//! magic   "REPX"            4 bytes
//! version u32 = 1
//! n       u64
//! dim     u64
//! flags   u32               bit 0: rewards, bit 1: lengths
//! n × dim f32               row-major embeddings
//! n       u8                rewards (0/1), if flagged
//! n       u32               token lengths, if flagged
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::SparseProjection;

pub const MAGIC: [u8; 4] = *b"REPX";
pub const VERSION: u32 = 1;
pub const FLAG_REWARDS: u32 = 1;
pub const FLAG_LENGTHS: u32 = 1 << 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 4;

/// How per-token hidden states were reduced to one vector per response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    Mean,
    LastToken,
    PenultimateToken,
}

impl std::str::FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "last_token" => Ok(Self::LastToken),
            "penultimate_token" => Ok(Self::PenultimateToken),
            other => Err(Error::invalid(format!("unknown pooling mode {other:?}"))),
        }
    }
}

/// One line of the pool manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub prompt_id: String,
    pub n: u64,
    pub dim: u64,
    pub pooling_mode: PoolingMode,
    pub file: String,
    pub has_rewards: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPool {
    prompt_id: String,
    pooling_mode: PoolingMode,
    embeddings: Array2<f32>,
    rewards: Option<Vec<u8>>,
    lengths: Option<Vec<u32>>,
}

impl EmbeddingPool {
    pub fn new(
        prompt_id: impl Into<String>,
        pooling_mode: PoolingMode,
        embeddings: Array2<f32>,
        rewards: Option<Vec<u8>>,
        lengths: Option<Vec<u32>>,
    ) -> Result<Self> {
        let n = embeddings.nrows();
        if embeddings.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("pool embeddings"));
        }
        if let Some(r) = &rewards {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: r.len(),
                });
            }
            if let Some(&bad) = r.iter().find(|&&x| x > 1) {
                return Err(Error::BadReward(bad));
            }
        }
        if let Some(l) = &lengths {
            if l.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: l.len(),
                });
            }
        }
        Ok(Self {
            prompt_id: prompt_id.into(),
            pooling_mode,
            embeddings: embeddings.as_standard_layout().into_owned(),
            rewards,
            lengths,
        })
    }

    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    pub fn pooling_mode(&self) -> PoolingMode {
        self.pooling_mode
    }

    pub fn n(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn embeddings(&self) -> ArrayView2<'_, f32> {
        self.embeddings.view()
    }

    pub fn rewards(&self) -> Option<&[u8]> {
        self.rewards.as_deref()
    }

    pub fn lengths(&self) -> Option<&[u32]> {
        self.lengths.as_deref()
    }

    /// Number of responses labelled correct, if labels are present.
    pub fn correct_count(&self) -> Option<usize> {
        self.rewards.as_ref().map(|r| r.iter().filter(|&&x| x == 1).count())
    }

    /// Manifest line describing this pool stored at `file`.
    pub fn manifest_record(&self, file: impl Into<String>) -> ManifestRecord {
        ManifestRecord {
            prompt_id: self.prompt_id.clone(),
            n: self.n() as u64,
            dim: self.dim() as u64,
            pooling_mode: self.pooling_mode,
            file: file.into(),
            has_rewards: self.rewards.is_some(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, dim) = self.embeddings.dim();
        let mut flags = 0;
        if self.rewards.is_some() {
            flags |= FLAG_REWARDS;
        }
        if self.lengths.is_some() {
            flags |= FLAG_LENGTHS;
        }
        let mut buf = Vec::with_capacity(HEADER_LEN + n * dim * 4 + n * 5);
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(n as u64).to_le_bytes());
        buf.extend_from_slice(&(dim as u64).to_le_bytes());
        buf.extend_from_slice(&flags.to_le_bytes());
        for x in self.embeddings.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        if let Some(r) = &self.rewards {
            buf.extend_from_slice(r);
        }
        if let Some(l) = &self.lengths {
            for x in l {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    /// Parses a data file. `record`, when given, is checked against the header.
    pub fn from_bytes(bytes: &[u8], record: Option<&ManifestRecord>, path: &Path) -> Result<Self> {
        let truncated = |expected: usize| Error::TruncatedPayload {
            path: path.to_owned(),
            expected: expected as u64,
            found: bytes.len() as u64,
        };
        if bytes.len() < 4 {
            return Err(truncated(HEADER_LEN));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_owned(),
                found: magic,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated(HEADER_LEN));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let n = u64_at(8);
        let dim = u64_at(16);
        let flags = u32_at(24);
        if flags & !(FLAG_REWARDS | FLAG_LENGTHS) != 0 {
            return Err(Error::invalid(format!("unknown flag bits {flags:#x}")));
        }
        let has_rewards = flags & FLAG_REWARDS != 0;
        let has_lengths = flags & FLAG_LENGTHS != 0;

        if let Some(rec) = record {
            let mismatch = |field, manifest, file| Error::ManifestMismatch {
                path: path.to_owned(),
                field,
                manifest,
                file,
            };
            if rec.dim != dim {
                return Err(mismatch("dim", rec.dim, dim));
            }
            if n < rec.n {
                return Err(Error::Truncated {
                    path: path.to_owned(),
                    expected: rec.n,
                    found: n,
                });
            }
            if n > rec.n {
                return Err(mismatch("n", rec.n, n));
            }
            if rec.has_rewards != has_rewards {
                return Err(mismatch("has_rewards", rec.has_rewards as u64, has_rewards as u64));
            }
        }

        let (n, dim) = (usize::try_from(n), usize::try_from(dim));
        let (Ok(n), Ok(dim)) = (n, dim) else {
            return Err(Error::invalid("pool dimensions overflow usize"));
        };
        let cells = n
            .checked_mul(dim)
            .ok_or_else(|| Error::invalid("pool dimensions overflow usize"))?;
        let mut need = HEADER_LEN + cells * 4;
        if has_rewards {
            need += n;
        }
        if has_lengths {
            need += n * 4;
        }
        if bytes.len() < need {
            if let Some(rec) = record {
                let rows = ((bytes.len() - HEADER_LEN) / 4).checked_div(dim).unwrap_or(0);
                if (rows as u64) < rec.n {
                    return Err(Error::Truncated {
                        path: path.to_owned(),
                        expected: rec.n,
                        found: rows as u64,
                    });
                }
            }
            return Err(truncated(need));
        }
        if bytes.len() > need {
            return Err(Error::invalid(format!(
                "{} trailing bytes after payload in {}",
                bytes.len() - need,
                path.display()
            )));
        }

        let mut off = HEADER_LEN;
        let data: Vec<f32> = bytes[off..off + cells * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += cells * 4;
        let embeddings = Array2::from_shape_vec((n, dim), data).map_err(|e| Error::invalid(e.to_string()))?;
        let rewards = has_rewards.then(|| {
            let r = bytes[off..off + n].to_vec();
            off += n;
            r
        });
        let lengths = has_lengths.then(|| {
            bytes[off..off + n * 4]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        });
        let prompt_id = record.map(|r| r.prompt_id.clone()).unwrap_or_default();
        let mode = record.map(|r| r.pooling_mode).unwrap_or(PoolingMode::Mean);
        Self::new(prompt_id, mode, embeddings, rewards, lengths)
    }
}

pub fn write_pool(path: &Path, pool: &EmbeddingPool) -> Result<()> {
    crate::report::atomic_write(path, &pool.to_bytes())
}

/// Reads and validates the data file described by `record`.
pub fn read_pool(record: &ManifestRecord, data_file: &Path) -> Result<EmbeddingPool> {
    let bytes = fs::read(data_file)?;
    EmbeddingPool::from_bytes(&bytes, Some(record), data_file)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    crate::report::atomic_write(path, &buf)
}

/// Resolves a record's data file relative to the manifest's directory.
pub fn resolve_data_file(manifest: &Path, record: &ManifestRecord) -> PathBuf {
    manifest.parent().unwrap_or_else(|| Path::new(".")).join(&record.file)
}

/// Reads every pool listed in a manifest, in manifest order.
pub fn load_pools(manifest: &Path) -> Result<Vec<EmbeddingPool>> {
    read_manifest(manifest)?
        .iter()
        .map(|rec| read_pool(rec, &resolve_data_file(manifest, rec)))
        .collect()
}

/// A pool after projection and mean-centering: the vectors bonuses are
/// computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedPool {
    pub prompt_id: String,
    pub vectors: Array2<f64>,
    pub projection_seed: u64,
    pub rewards: Option<Vec<u8>>,
}

impl PreprocessedPool {
    /// Wraps vectors that are already in working space, centering them.
    pub fn from_vectors(prompt_id: impl Into<String>, mut vectors: Array2<f64>) -> Self {
        mean_center(&mut vectors);
        Self {
            prompt_id: prompt_id.into(),
            vectors,
            projection_seed: 0,
            rewards: None,
        }
    }

    /// Wraps vectors as-is, without centering.
    pub fn uncentered(prompt_id: impl Into<String>, vectors: Array2<f64>) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            vectors,
            projection_seed: 0,
            rewards: None,
        }
    }

    pub fn with_rewards(mut self, rewards: Option<Vec<u8>>) -> Self {
        self.rewards = rewards;
        self
    }

    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Projects every response, then subtracts the pool mean from each row.
pub fn preprocess(pool: &EmbeddingPool, projection: &SparseProjection) -> Result<PreprocessedPool> {
    if projection.input_dim() != pool.dim() {
        return Err(Error::DimensionMismatch {
            expected: projection.input_dim(),
            actual: pool.dim(),
        });
    }
    let mut vectors = projection.apply_rows_f32(pool.embeddings())?;
    mean_center(&mut vectors);
    Ok(PreprocessedPool {
        prompt_id: pool.prompt_id().to_owned(),
        vectors,
        projection_seed: projection.seed(),
        rewards: pool.rewards.clone(),
    })
}

/// Subtracts the column means in place. No-op on an empty matrix.
///
/// The mean is accumulated relative to the first row, so constant columns
/// center to exactly zero.
pub fn mean_center(m: &mut Array2<f64>) {
    if m.nrows() == 0 {
        return;
    }
    let pivot = m.row(0).to_owned();
    let shifted: Array1<f64> = (&*m - &pivot).mean_axis(Axis(0)).unwrap();
    let mean = pivot + shifted;
    *m -= &mean;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_oracle::gaussian_rows;
    use ndarray::array;
    use proptest::prelude::*;

    fn random_pool(n: usize, dim: usize, seed: u64) -> EmbeddingPool {
        let emb = gaussian_rows(n, dim, seed).mapv(|x| x as f32);
        let rewards = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let lengths = (0..n as u32).map(|i| 10 + i).collect();
        EmbeddingPool::new("p0", PoolingMode::Mean, emb, Some(rewards), Some(lengths)).unwrap()
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pool = random_pool(10, 6, 1);
        let path = dir.path().join("p0.bin");
        write_pool(&path, &pool).unwrap();
        let rec = pool.manifest_record("p0.bin");
        let back = read_pool(&rec, &path).unwrap();
        assert_eq!(back, pool);
        assert_eq!(fs::read(&path).unwrap(), back.to_bytes());
    }

    #[test]
    fn manifest_round_trip_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let pool = random_pool(4, 3, 2);
        let rec = pool.manifest_record("a.bin");
        let path = dir.path().join("manifest.jsonl");
        write_manifest(&path, &[rec.clone(), rec.clone()]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"prompt_id":"p0","n":4,"dim":3,"pooling_mode":"mean","file":"a.bin","has_rewards":true}"#
        );
        assert_eq!(read_manifest(&path).unwrap(), vec![rec.clone(), rec]);
    }

    #[test]
    fn manifest_claiming_more_rows_is_truncation() {
        let pool = random_pool(9, 4, 3);
        let mut rec = pool.manifest_record("x.bin");
        rec.n = 10;
        let err = EmbeddingPool::from_bytes(&pool.to_bytes(), Some(&rec), Path::new("x.bin")).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Truncated {
                    expected: 10,
                    found: 9,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn cut_payload_is_truncation() {
        let pool = random_pool(10, 4, 3);
        let rec = pool.manifest_record("x.bin");
        let bytes = pool.to_bytes();
        let err = EmbeddingPool::from_bytes(&bytes[..HEADER_LEN + 9 * 16], Some(&rec), Path::new("x")).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Truncated {
                    expected: 10,
                    found: 9,
                    ..
                }
            ),
            "{err}"
        );
        let err = EmbeddingPool::from_bytes(&bytes[..bytes.len() - 1], Some(&rec), Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::TruncatedPayload { .. }), "{err}");
        let err = EmbeddingPool::from_bytes(&bytes[..10], None, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::TruncatedPayload { .. }), "{err}");
    }

    #[test]
    fn wrong_magic_and_version() {
        let pool = random_pool(2, 2, 4);
        let mut bytes = pool.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingPool::from_bytes(&bytes, None, Path::new("x")),
            Err(Error::BadMagic { .. })
        ));
        let mut bytes = pool.to_bytes();
        bytes[4] = 2;
        assert!(matches!(
            EmbeddingPool::from_bytes(&bytes, None, Path::new("x")),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn manifest_dim_mismatch() {
        let pool = random_pool(3, 5, 4);
        let mut rec = pool.manifest_record("x");
        rec.dim = 6;
        assert!(matches!(
            EmbeddingPool::from_bytes(&pool.to_bytes(), Some(&rec), Path::new("x")),
            Err(Error::ManifestMismatch { field: "dim", .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let mut emb = Array2::<f32>::zeros((2, 2));
        emb[[1, 1]] = f32::INFINITY;
        assert!(matches!(
            EmbeddingPool::new("p", PoolingMode::Mean, emb.clone(), None, None),
            Err(Error::NonFinite(_))
        ));
        let mut bytes = EmbeddingPool::new("p", PoolingMode::Mean, Array2::zeros((2, 2)), None, None)
            .unwrap()
            .to_bytes();
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingPool::from_bytes(&bytes, None, Path::new("x")),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn constant_pool_centers_to_zero() {
        let emb = Array2::from_shape_fn((5, 8), |(_, j)| j as f32 * 0.5 - 1.0);
        let pool = EmbeddingPool::new("c", PoolingMode::Mean, emb, None, None).unwrap();
        let p = SparseProjection::new(8, 4, 1).unwrap();
        let out = preprocess(&pool, &p).unwrap();
        assert!(out.vectors.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_rows_center_antisymmetrically() {
        let emb = array![[1.0f32, 4.0, -2.0], [3.0, 0.0, 2.0]];
        let pool = EmbeddingPool::new("ab", PoolingMode::Mean, emb, None, None).unwrap();
        let out = preprocess(&pool, &SparseProjection::identity(3)).unwrap();
        let half = array![-1.0, 2.0, -2.0];
        assert_eq!(out.vectors.row(0), half);
        assert_eq!(out.vectors.row(1), -&half);
    }

    #[test]
    fn projection_dim_must_match() {
        let pool = random_pool(3, 5, 4);
        let p = SparseProjection::new(6, 2, 0).unwrap();
        assert!(matches!(preprocess(&pool, &p), Err(Error::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(n in 0usize..12, dim in 1usize..9, seed in any::<u64>(), flags in 0u8..4) {
            let emb = gaussian_rows(n, dim, seed).mapv(|x| x as f32);
            let rewards = (flags & 1 != 0).then(|| (0..n).map(|i| (i % 2) as u8).collect());
            let lengths = (flags & 2 != 0).then(|| (0..n as u32).collect());
            let pool = EmbeddingPool::new("q", PoolingMode::LastToken, emb, rewards, lengths).unwrap();
            let rec = pool.manifest_record("q.bin");
            let back = EmbeddingPool::from_bytes(&pool.to_bytes(), Some(&rec), Path::new("q.bin")).unwrap();
            prop_assert_eq!(back, pool);
        }

        #[test]
        fn centered_columns_and_idempotent(n in 1usize..40, seed in any::<u64>()) {
            let emb = gaussian_rows(n, 64, seed).mapv(|x| (x * 3.0 + 1.0) as f32);
            let pool = EmbeddingPool::new("r", PoolingMode::Mean, emb, None, None).unwrap();
            let p = SparseProjection::new(64, 16, seed).unwrap();
            let out = preprocess(&pool, &p).unwrap();
            // Recompute the column means directly.
            for j in 0..out.dim() {
                let mean: f64 = out.vectors.column(j).iter().sum::<f64>() / n as f64;
                prop_assert!(mean.abs() <= 1e-9);
            }
            let mut again = out.vectors.clone();
            mean_center(&mut again);
            prop_assert!((&again - &out.vectors).iter().all(|d| d.abs() <= 1e-12));
        }
    }
}
