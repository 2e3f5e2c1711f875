//! Synthetic Gaussian-mixture pools with one planted correct cluster, and the
//! end-to-end selection experiment run over them.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::pool::{EmbeddingPool, PoolingMode, PreprocessedPool};
use crate::report::{build_report, Question, Report, SelectionRecord};
use crate::selection::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_clusters: usize,
    pub points_per_cluster: usize,
    /// Distance between cluster means in units of the within-cluster std.
    pub separation: f64,
    pub within_std: f64,
    pub correct_cluster: usize,
    /// Fraction of the correct cluster labelled correct.
    pub correct_fraction: f64,
    pub dim: usize,
    pub seed: u64,
    /// Number of pools (prompts) to generate.
    pub n_pools: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_clusters: 8,
            points_per_cluster: 100,
            separation: 10.0,
            within_std: 1.0,
            correct_cluster: 0,
            correct_fraction: 1.0,
            dim: 32,
            seed: 0,
            n_pools: 1,
        }
    }
}

impl SynthConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are skipped;
    /// missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn std::fmt::Display| err(format!("{key}: {e}"));
            match key {
                "n_clusters" => cfg.n_clusters = value.parse().map_err(|e| bad(&e))?,
                "points_per_cluster" => cfg.points_per_cluster = value.parse().map_err(|e| bad(&e))?,
                "separation" => cfg.separation = value.parse().map_err(|e| bad(&e))?,
                "within_std" => cfg.within_std = value.parse().map_err(|e| bad(&e))?,
                "correct_cluster" => cfg.correct_cluster = value.parse().map_err(|e| bad(&e))?,
                "correct_fraction" => cfg.correct_fraction = value.parse().map_err(|e| bad(&e))?,
                "dim" => cfg.dim = value.parse().map_err(|e| bad(&e))?,
                "seed" => cfg.seed = value.parse().map_err(|e| bad(&e))?,
                "n_pools" => cfg.n_pools = value.parse().map_err(|e| bad(&e))?,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_clusters = {}", self.n_clusters);
        let _ = writeln!(s, "points_per_cluster = {}", self.points_per_cluster);
        let _ = writeln!(s, "separation = {}", self.separation);
        let _ = writeln!(s, "within_std = {}", self.within_std);
        let _ = writeln!(s, "correct_cluster = {}", self.correct_cluster);
        let _ = writeln!(s, "correct_fraction = {}", self.correct_fraction);
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "n_pools = {}", self.n_pools);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.points_per_cluster == 0 || self.dim == 0 || self.n_pools == 0 {
            return Err(Error::invalid(
                "cluster count, cluster size, dim and n_pools must be positive",
            ));
        }
        if self.correct_cluster >= self.n_clusters {
            return Err(Error::invalid(format!(
                "correct_cluster {} out of range for {} clusters",
                self.correct_cluster, self.n_clusters
            )));
        }
        if !(0.0..=1.0).contains(&self.correct_fraction) {
            return Err(Error::invalid("correct_fraction must be in [0, 1]"));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::invalid("separation must be finite and >= 0"));
        }
        if !(self.within_std.is_finite() && self.within_std >= 0.0) {
            return Err(Error::invalid("within_std must be finite and >= 0"));
        }
        let means_coincide = self.n_clusters > 1 && (self.separation == 0.0 || self.within_std == 0.0);
        if self.within_std == 0.0 && (means_coincide || self.points_per_cluster > 1) {
            return Err(Error::invalid("zero within-cluster spread yields duplicate points"));
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.n_clusters * self.points_per_cluster
    }

    /// Cluster of pool row `index` (rows are laid out cluster by cluster).
    pub fn cluster_of(&self, index: usize) -> usize {
        index / self.points_per_cluster
    }

    pub fn correct_per_pool(&self) -> usize {
        (self.correct_fraction * self.points_per_cluster as f64).round() as usize
    }
}

/// One Gaussian-mixture pool. Cluster means sit on scaled orthogonal axes when
/// `dim >= n_clusters` (random unit directions otherwise), so the distance
/// between two means is `separation · within_std`.
pub fn generate_pool(cfg: &SynthConfig) -> Result<EmbeddingPool> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let radius = cfg.separation * cfg.within_std / std::f64::consts::SQRT_2;
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let means: Array2<f64> = if cfg.dim >= cfg.n_clusters {
        Array2::from_shape_fn((cfg.n_clusters, cfg.dim), |(c, j)| if c == j { radius } else { 0.0 })
    } else {
        let mut m = Array2::from_shape_fn((cfg.n_clusters, cfg.dim), |_| gauss());
        for mut row in m.rows_mut() {
            let norm = row.dot(&row).sqrt().max(f64::MIN_POSITIVE);
            row *= radius / norm;
        }
        m
    };
    let n = cfg.n_points();
    let mut emb = Array2::<f32>::zeros((n, cfg.dim));
    for i in 0..n {
        let c = cfg.cluster_of(i);
        for j in 0..cfg.dim {
            emb[[i, j]] = (means[[c, j]] + cfg.within_std * gauss()) as f32;
        }
    }
    let correct = cfg.correct_per_pool();
    let rewards = (0..n)
        .map(|i| {
            let local = i % cfg.points_per_cluster;
            u8::from(cfg.cluster_of(i) == cfg.correct_cluster && local < correct)
        })
        .collect();
    EmbeddingPool::new(format!("synth-{:04}", 0), PoolingMode::Mean, emb, Some(rewards), None)
}

/// `n_pools` pools with independent derived seeds, ids `synth-0000`, ….
pub fn generate_pools(cfg: &SynthConfig) -> Result<Vec<EmbeddingPool>> {
    (0..cfg.n_pools)
        .map(|p| {
            let sub = SynthConfig {
                seed: derive_seed(cfg.seed, p as u64),
                n_pools: 1,
                ..cfg.clone()
            };
            let pool = generate_pool(&sub)?;
            let (emb, rewards) = (pool.embeddings().to_owned(), pool.rewards().map(<[u8]>::to_vec));
            EmbeddingPool::new(format!("synth-{p:04}"), PoolingMode::Mean, emb, rewards, None)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    /// Selection budget per trial; `None` selects the whole pool.
    pub k_max: Option<usize>,
    pub trials: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Repexp, Method::Random],
            k_max: None,
            trials: 5,
            lambda: crate::DEFAULT_LAMBDA,
            seed: 0,
        }
    }
}

/// Seed of one selection trial.
pub fn trial_seed(base: u64, question: usize, method: Method, trial: usize) -> u64 {
    let m = match method {
        Method::Repexp => 0,
        Method::Random => 1,
    };
    derive_seed(derive_seed(base, question as u64), ((trial as u64) << 1) | m)
}

/// Runs every method on every pool and returns the raw selection records.
pub fn run_trials(pools: &[PreprocessedPool], cfg: &ExperimentConfig) -> Result<Vec<SelectionRecord>> {
    if cfg.trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let mut out = Vec::new();
    for (q, pool) in pools.iter().enumerate() {
        let k = cfg.k_max.unwrap_or(pool.n());
        if k > pool.n() {
            return Err(Error::invalid(format!(
                "k_max {k} exceeds pool size {} for {}",
                pool.n(),
                pool.prompt_id
            )));
        }
        for &method in &cfg.methods {
            for trial in 0..cfg.trials {
                let seed = trial_seed(cfg.seed, q, method, trial);
                let sel = method.select(pool, k, cfg.lambda, seed)?;
                out.push(SelectionRecord {
                    prompt_id: pool.prompt_id.clone(),
                    method,
                    trial,
                    seed,
                    indices: sel.indices,
                    bonuses: sel.bonuses,
                });
            }
        }
    }
    Ok(out)
}

/// Trials plus report for labelled pools.
pub fn run_experiment(pools: &[PreprocessedPool], cfg: &ExperimentConfig) -> Result<(Vec<SelectionRecord>, Report)> {
    let questions = pools
        .iter()
        .map(|p| {
            let rewards = p
                .rewards
                .clone()
                .ok_or_else(|| Error::invalid(format!("pool {} has no reward labels", p.prompt_id)))?;
            Ok(Question {
                id: p.prompt_id.clone(),
                rewards,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let records = run_trials(pools, cfg)?;
    let report = build_report(&questions, &records, cfg.seed)?;
    Ok((records, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{samples_to_correct_ordered, samples_to_correct_random};
    use crate::pool::mean_center;
    use crate::projection::SparseProjection;
    use crate::test_oracle::gaussian_rows;
    use ndarray::{Array1, Axis};

    #[test]
    fn parse_round_trip() {
        let cfg = SynthConfig {
            n_clusters: 3,
            separation: 4.5,
            seed: 11,
            n_pools: 2,
            ..Default::default()
        };
        assert_eq!(SynthConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let text = "# comment\nn_clusters = 4\n\npoints_per_cluster=7 # inline\n";
        let parsed = SynthConfig::parse(text).unwrap();
        assert_eq!((parsed.n_clusters, parsed.points_per_cluster), (4, 7));
        assert!(matches!(
            SynthConfig::parse("bogus = 1"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            SynthConfig::parse("\ndim = x"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(SynthConfig::parse("correct_cluster = 9").is_err());
    }

    #[test]
    fn reward_planting() {
        let none = SynthConfig {
            correct_fraction: 0.0,
            ..Default::default()
        };
        assert_eq!(generate_pool(&none).unwrap().correct_count(), Some(0));
        let all = SynthConfig {
            n_clusters: 1,
            correct_fraction: 1.0,
            points_per_cluster: 30,
            ..Default::default()
        };
        assert_eq!(generate_pool(&all).unwrap().rewards().unwrap(), &[1u8; 30][..]);
        let part = SynthConfig {
            correct_cluster: 2,
            correct_fraction: 0.25,
            ..Default::default()
        };
        let pool = generate_pool(&part).unwrap();
        assert_eq!(pool.correct_count(), Some(25));
        for (i, &r) in pool.rewards().unwrap().iter().enumerate() {
            if r == 1 {
                assert_eq!(part.cluster_of(i), 2);
            }
        }
    }

    #[test]
    fn degenerate_config_rejected() {
        let cfg = SynthConfig {
            within_std: 0.0,
            separation: 0.0,
            ..Default::default()
        };
        assert!(generate_pool(&cfg).is_err());
        let cfg = SynthConfig {
            within_std: 0.0,
            ..Default::default()
        };
        assert!(generate_pool(&cfg).is_err());
        let ok = SynthConfig {
            within_std: 0.0,
            points_per_cluster: 1,
            separation: 1.0,
            ..Default::default()
        };
        // Zero spread with a single point per cluster is fine, but the
        // separation is measured in units of spread, so the means coincide.
        assert!(generate_pool(&ok).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = SynthConfig {
            n_pools: 3,
            ..Default::default()
        };
        assert_eq!(generate_pools(&cfg).unwrap(), generate_pools(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_pools(&cfg).unwrap(), generate_pools(&other).unwrap());
    }

    /// Lloyd's algorithm with farthest-point initialization.
    fn kmeans(x: &Array2<f64>, k: usize) -> Vec<usize> {
        let mut centers = vec![x.row(0).to_owned()];
        while centers.len() < k {
            let far = (0..x.nrows())
                .max_by(|&a, &b| {
                    let da = centers
                        .iter()
                        .map(|c| (&x.row(a) - c).mapv(|v| v * v).sum())
                        .fold(f64::MAX, f64::min);
                    let db = centers
                        .iter()
                        .map(|c| (&x.row(b) - c).mapv(|v| v * v).sum())
                        .fold(f64::MAX, f64::min);
                    da.total_cmp(&db)
                })
                .unwrap();
            centers.push(x.row(far).to_owned());
        }
        let mut assign = vec![0; x.nrows()];
        for _ in 0..50 {
            for (i, row) in x.axis_iter(Axis(0)).enumerate() {
                assign[i] = (0..k)
                    .min_by(|&a, &b| {
                        let da = (&row - &centers[a]).mapv(|v| v * v).sum();
                        let db = (&row - &centers[b]).mapv(|v| v * v).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
            }
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<usize> = (0..x.nrows()).filter(|&i| assign[i] == c).collect();
                if !members.is_empty() {
                    *center = x.select(Axis(0), &members).mean_axis(Axis(0)).unwrap();
                }
            }
        }
        assign
    }

    #[test]
    fn clusters_are_recoverable() {
        let cfg = SynthConfig {
            n_clusters: 8,
            points_per_cluster: 100,
            separation: 10.0,
            dim: 16,
            seed: 4,
            ..Default::default()
        };
        let pool = generate_pool(&cfg).unwrap();
        let x = pool.embeddings().mapv(|v| v as f64);
        let assign = kmeans(&x, 8);
        // Every true cluster maps to exactly one k-means label.
        let mut label_of = vec![None; 8];
        for (i, &a) in assign.iter().enumerate() {
            let c = cfg.cluster_of(i);
            match label_of[c] {
                None => label_of[c] = Some(a),
                Some(l) => assert_eq!(l, a, "cluster {c} split"),
            }
        }
        let mut labels: Vec<usize> = label_of.into_iter().map(Option::unwrap).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 8);
    }

    #[test]
    fn mean_distance_matches_separation() {
        let cfg = SynthConfig {
            n_clusters: 4,
            points_per_cluster: 400,
            separation: 6.0,
            dim: 8,
            seed: 2,
            ..Default::default()
        };
        let x = generate_pool(&cfg).unwrap().embeddings().mapv(|v| v as f64);
        let mean = |c: usize| -> Array1<f64> {
            x.slice(ndarray::s![c * 400..(c + 1) * 400, ..])
                .mean_axis(Axis(0))
                .unwrap()
        };
        let d = (&mean(0) - &mean(3)).mapv(|v| v * v).sum().sqrt();
        assert!((d - 6.0).abs() < 0.3, "{d}");
    }

    #[test]
    fn experiment_is_deterministic() {
        let mut v = gaussian_rows(30, 4, 1);
        mean_center(&mut v);
        let rewards: Vec<u8> = (0..30).map(|i| (i % 7 == 0) as u8).collect();
        let pools = vec![PreprocessedPool::uncentered("q", v).with_rewards(Some(rewards))];
        let cfg = ExperimentConfig {
            methods: vec![Method::Random],
            trials: 3,
            ..Default::default()
        };
        let a = run_experiment(&pools, &cfg).unwrap();
        let b = run_experiment(&pools, &cfg).unwrap();
        assert_eq!(a, b);
        let too_big = ExperimentConfig { k_max: Some(31), ..cfg };
        assert!(run_experiment(&pools, &too_big).is_err());
    }

    /// Mean samples-to-correct per method over `seeds` × 5 trials.
    fn measured_stc(cfg: &SynthConfig, seeds: u64) -> (f64, f64, Vec<f64>) {
        let (mut rep, mut rnd) = (Vec::new(), Vec::new());
        for seed in 0..seeds {
            let pool = generate_pool(&SynthConfig { seed, ..cfg.clone() }).unwrap();
            let pre = crate::pool::preprocess(&pool, &SparseProjection::identity(cfg.dim)).unwrap();
            let exp = ExperimentConfig { seed, ..Default::default() };
            for r in run_trials(&[pre.clone()], &exp).unwrap() {
                let v = samples_to_correct_ordered(&r.indices, pre.rewards.as_ref().unwrap()).unwrap().value;
                match r.method {
                    Method::Repexp => rep.push(v),
                    Method::Random => rnd.push(v),
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        (mean(&rep), mean(&rnd), rnd)
    }

    #[test]
    fn single_cluster_gives_no_advantage() {
        let cfg = SynthConfig {
            n_clusters: 1,
            points_per_cluster: 800,
            correct_fraction: 0.125,
            ..Default::default()
        };
        let closed = samples_to_correct_random(800, 100).unwrap().value;
        // 20 seeds leave a standard error of about 11%, wider than the band.
        let (rep, _, _) = measured_stc(&cfg, 200);
        assert!((rep / closed - 1.0).abs() <= 0.1, "repexp {rep} vs {closed}");
    }

    #[test]
    fn random_baseline_matches_closed_form() {
        let (_, rnd, samples) = measured_stc(&SynthConfig::default(), 20);
        let closed = samples_to_correct_random(800, 100).unwrap().value;
        let var = samples.iter().map(|v| (v - rnd).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
        let se = (var / samples.len() as f64).sqrt();
        assert!((rnd - closed).abs() <= 3.0 * se, "random {rnd} ± {se} vs {closed}");
    }
}
