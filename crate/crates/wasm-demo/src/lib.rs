//! Browser bindings. Each exported function takes plain numbers and returns a
//! JSON string; failures come back as `{"error": "..."}`.

use repexp::guided::{
    distinct_fraction, mean_pairwise_distance, run_generations, SamplingParams, ToyModel, ToyModelConfig,
};
use repexp::metrics::{hit_within, pass_at_k, samples_to_correct_ordered, samples_to_correct_random};
use repexp::pool::preprocess;
use repexp::selection::Method;
use repexp::synth::{generate_pool, trial_seed, SynthConfig};
use repexp::{Result, SparseProjection};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

fn respond<T: Serialize>(r: Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| json!({ "error": e.to_string() }).to_string()),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn planar_config(seed: u64, clusters: usize, per_cluster: usize, separation: f64) -> SynthConfig {
    SynthConfig {
        n_clusters: clusters,
        points_per_cluster: per_cluster,
        separation,
        within_std: 1.0,
        correct_cluster: 0,
        correct_fraction: 1.0,
        dim: 2,
        seed,
        n_pools: 1,
    }
}

#[derive(Serialize)]
struct Ordering {
    indices: Vec<usize>,
    /// Distinct clusters among the first `i + 1` picks.
    coverage: Vec<usize>,
    samples_to_correct: f64,
}

#[derive(Serialize)]
struct SelectionView {
    points: Vec<[f32; 2]>,
    clusters: Vec<usize>,
    rewards: Vec<u8>,
    repexp: Ordering,
    random: Ordering,
    random_closed_form: f64,
}

fn ordering(indices: Vec<usize>, cfg: &SynthConfig, rewards: &[u8]) -> Result<Ordering> {
    let mut seen = vec![false; cfg.n_clusters];
    let mut distinct = 0;
    let coverage = indices
        .iter()
        .map(|&i| {
            let c = cfg.cluster_of(i);
            if !seen[c] {
                seen[c] = true;
                distinct += 1;
            }
            distinct
        })
        .collect();
    let stc = samples_to_correct_ordered(&indices, rewards)?.value;
    Ok(Ordering {
        indices,
        coverage,
        samples_to_correct: stc,
    })
}

fn selection(seed: u64, clusters: usize, per_cluster: usize, separation: f64, k: usize) -> Result<SelectionView> {
    let cfg = planar_config(seed, clusters, per_cluster, separation);
    cfg.validate()?;
    let pool = generate_pool(&cfg)?;
    let pre = preprocess(&pool, &SparseProjection::identity(2))?;
    let rewards = pool.rewards().unwrap_or_default().to_vec();
    let k = k.clamp(1, pre.n());
    let rep = Method::Repexp.select(&pre, k, repexp::DEFAULT_LAMBDA, trial_seed(seed, 0, Method::Repexp, 0))?;
    let rnd = Method::Random.select(&pre, k, 0.0, trial_seed(seed, 0, Method::Random, 0))?;
    let c = rewards.iter().filter(|&&r| r == 1).count() as u64;
    Ok(SelectionView {
        points: pool.embeddings().rows().into_iter().map(|r| [r[0], r[1]]).collect(),
        clusters: (0..pool.n()).map(|i| cfg.cluster_of(i)).collect(),
        random_closed_form: samples_to_correct_random(pool.n() as u64, c)?.value,
        repexp: ordering(rep.indices, &cfg, &rewards)?,
        random: ordering(rnd.indices, &cfg, &rewards)?,
        rewards,
    })
}

/// Greedy elliptic selection against uniform sampling on a planar
/// Gaussian mixture whose cluster 0 is the only correct one.
#[wasm_bindgen]
pub fn selection_demo(seed: u32, clusters: u32, per_cluster: u32, separation: f64, k: u32) -> String {
    respond(selection(
        seed as u64,
        clusters as usize,
        per_cluster as usize,
        separation,
        k as usize,
    ))
}

#[derive(Serialize)]
struct Curves {
    ks: Vec<usize>,
    /// Fraction of trials whose first `k` greedy picks contain a correct one.
    repexp_pass_at_k: Vec<f64>,
    random_pass_at_k: Vec<f64>,
    repexp_samples_to_correct: f64,
    random_samples_to_correct: f64,
}

fn curves(
    seed: u64,
    clusters: usize,
    per_cluster: usize,
    separation: f64,
    trials: usize,
    k_max: usize,
) -> Result<Curves> {
    let cfg = planar_config(seed, clusters, per_cluster, separation);
    cfg.validate()?;
    let pool = generate_pool(&cfg)?;
    let pre = preprocess(&pool, &SparseProjection::identity(2))?;
    let rewards = pool.rewards().unwrap_or_default();
    let n = pre.n();
    let k_max = k_max.clamp(1, n);
    let trials = trials.max(1);
    let mut hits = vec![0usize; k_max];
    let mut stc = 0.0;
    for t in 0..trials {
        let sel = Method::Repexp.select(&pre, n, repexp::DEFAULT_LAMBDA, trial_seed(seed, 0, Method::Repexp, t))?;
        for (k, h) in hits.iter_mut().enumerate() {
            *h += usize::from(hit_within(&sel.indices, rewards, k + 1));
        }
        stc += samples_to_correct_ordered(&sel.indices, rewards)?.value;
    }
    let c = rewards.iter().filter(|&&r| r == 1).count() as u64;
    Ok(Curves {
        ks: (1..=k_max).collect(),
        repexp_pass_at_k: hits.iter().map(|&h| h as f64 / trials as f64).collect(),
        random_pass_at_k: (1..=k_max as u64)
            .map(|k| pass_at_k(n as u64, c, k))
            .collect::<Result<_>>()?,
        repexp_samples_to_correct: stc / trials as f64,
        random_samples_to_correct: samples_to_correct_random(n as u64, c)?.value,
    })
}

/// pass@k and samples-to-correct of greedy selection (averaged over seeded
/// trials) next to the uniform closed forms.
#[wasm_bindgen]
pub fn curves_demo(seed: u32, clusters: u32, per_cluster: u32, separation: f64, trials: u32, k_max: u32) -> String {
    respond(curves(
        seed as u64,
        clusters as usize,
        per_cluster as usize,
        separation,
        trials as usize,
        k_max as usize,
    ))
}

#[derive(Serialize)]
struct DiversityPoint {
    beta: f64,
    mean_pairwise_distance: f64,
    distinct_fraction: f64,
    /// Pooled representations projected on their first two coordinates.
    pooled: Vec<[f64; 2]>,
    tokens: Vec<Vec<usize>>,
}

fn diversity(seed: u64, betas: &[f64], generations: usize, max_len: usize) -> Result<Vec<DiversityPoint>> {
    let model = ToyModel::new(&ToyModelConfig::default())?;
    betas
        .iter()
        .map(|&beta| {
            let params = SamplingParams {
                beta,
                max_len,
                ..SamplingParams::default()
            };
            let gens = run_generations(
                &model,
                &[0],
                &params,
                repexp::guided::DEFAULT_LAMBDA,
                generations,
                seed,
                false,
            )?;
            Ok(DiversityPoint {
                beta,
                mean_pairwise_distance: mean_pairwise_distance(&gens),
                distinct_fraction: distinct_fraction(&gens),
                pooled: gens
                    .iter()
                    .map(|g| {
                        let p = g.pooled();
                        [p[0], p.get(1).copied().unwrap_or(0.0)]
                    })
                    .collect(),
                tokens: gens.into_iter().map(|g| g.tokens).collect(),
            })
        })
        .collect()
}

/// Diversity of bonus-guided generations from the toy model for each β in
/// `betas`, all under the same seed.
#[wasm_bindgen]
pub fn guided_demo(seed: u32, betas: Vec<f64>, generations: u32, max_len: u32) -> String {
    respond(diversity(seed as u64, &betas, generations as usize, max_len as usize))
}
