//! Token-level bonus-guided decoding.
//!
//! At every step the logits of the tokens that survive top-k and top-p
//! filtering are perturbed by `β · sqrt(h̃ᵀ Σ⁻¹ h̃)`, where `h̃` is the
//! mean-centered hidden state the model would reach by emitting that token and
//! `Σ⁻¹` is the mean-centered inverse covariance of every token representation
//! from earlier generations for the same prompt. The generation in progress is
//! not absorbed until it finishes.
//!
//! [`ToyModel`] is a small seeded recurrent network standing in for a
//! transformer: it exposes logits and the hidden state after each candidate
//! token, which is all the decoding loop needs.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{quadratic_form, InverseCovariance};

/// Default regularization for guided decoding.
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_TOP_P: f64 = 0.95;
pub const DEFAULT_TOP_K: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub vocab: usize,
    pub hidden: usize,
    /// Spectral scale of the recurrent map.
    pub recurrent_gain: f64,
    /// Scale of token embeddings fed into the recurrence.
    pub input_scale: f64,
    /// Scale of the unembedding map.
    pub logit_scale: f64,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            vocab: 48,
            hidden: 64,
            recurrent_gain: 0.9,
            input_scale: 1.0,
            logit_scale: 2.0,
            seed: 7,
        }
    }
}

/// `hₜ = tanh(W hₜ₋₁ + E[token])`, logits `z = U hₜ`.
#[derive(Debug, Clone)]
pub struct ToyModel {
    recurrent: Array2<f64>,
    embed: Array2<f64>,
    unembed: Array2<f64>,
}

impl ToyModel {
    pub fn new(cfg: &ToyModelConfig) -> Result<Self> {
        if cfg.vocab == 0 || cfg.hidden == 0 {
            return Err(Error::invalid(
                "toy model needs a non-empty vocabulary and hidden state",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut gauss = |rows: usize, cols: usize, scale: f64| {
            Array2::from_shape_fn((rows, cols), |_| {
                scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
        };
        let d = cfg.hidden as f64;
        Ok(Self {
            recurrent: gauss(cfg.hidden, cfg.hidden, cfg.recurrent_gain / d.sqrt()),
            embed: gauss(cfg.vocab, cfg.hidden, cfg.input_scale),
            unembed: gauss(cfg.vocab, cfg.hidden, cfg.logit_scale / d.sqrt()),
        })
    }

    pub fn vocab(&self) -> usize {
        self.embed.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.recurrent.nrows()
    }

    pub fn initial_state(&self) -> Array1<f64> {
        Array1::zeros(self.hidden())
    }

    /// Hidden state after appending `token` to a prefix whose state is `h`.
    pub fn step(&self, h: ArrayView1<'_, f64>, token: usize) -> Array1<f64> {
        let mut next = self.recurrent.dot(&h);
        next += &self.embed.row(token);
        next.mapv_inplace(f64::tanh);
        next
    }

    pub fn logits(&self, h: ArrayView1<'_, f64>) -> Array1<f64> {
        self.unembed.dot(&h)
    }

    /// State after reading a prompt.
    pub fn encode(&self, prompt: &[usize]) -> Result<Array1<f64>> {
        let mut h = self.initial_state();
        for &t in prompt {
            if t >= self.vocab() {
                return Err(Error::invalid(format!(
                    "token {t} outside vocabulary of {}",
                    self.vocab()
                )));
            }
            h = self.step(h.view(), t);
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub beta: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub temperature: f64,
    pub max_len: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            beta: 0.0,
            top_p: DEFAULT_TOP_P,
            top_k: DEFAULT_TOP_K,
            temperature: 1.0,
            max_len: 16,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.top_k == 0 {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.max_len == 0 {
            return Err(Error::invalid("max_len must be at least 1"));
        }
        Ok(())
    }
}

/// Covariance of all token representations of finished generations.
#[derive(Debug, Clone)]
pub struct GuidedState {
    cov: InverseCovariance,
    token_counts: Vec<usize>,
}

impl GuidedState {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        Ok(Self {
            cov: InverseCovariance::new(dim, lambda)?,
            token_counts: Vec::new(),
        })
    }

    pub fn generations(&self) -> usize {
        self.token_counts.len()
    }

    pub fn token_counts(&self) -> &[usize] {
        &self.token_counts
    }

    /// Total absorbed token representations.
    pub fn total_tokens(&self) -> u64 {
        self.cov.count()
    }

    /// Non-centered state.
    pub fn covariance(&self) -> &InverseCovariance {
        &self.cov
    }

    /// Running mean; zero before anything is absorbed.
    pub fn mean(&self) -> Array1<f64> {
        self.cov.mean().unwrap_or_else(|| Array1::zeros(self.cov.dim()))
    }

    /// Mean-centered inverse covariance; `λ⁻¹I` before anything is absorbed.
    pub fn centered_inverse(&self) -> Result<Array2<f64>> {
        if self.cov.count() == 0 {
            Ok(self.cov.inverse().to_owned())
        } else {
            self.cov.mean_centered_inverse()
        }
    }

    /// Folds a finished generation's token representations in, one
    /// Sherman-Morrison step per token.
    pub fn absorb_generation(&mut self, token_reps: &[Array1<f64>]) -> Result<()> {
        if token_reps.is_empty() {
            return Err(Error::invalid("generation has no tokens"));
        }
        for h in token_reps {
            check_dim(self.cov.dim(), h.len())?;
            if h.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("token representation"));
            }
        }
        for h in token_reps {
            self.cov.update(h.view())?;
        }
        self.token_counts.push(token_reps.len());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub tokens: Vec<usize>,
    /// Bonus of the chosen token at each step (zero for vanilla sampling).
    pub bonuses: Vec<f64>,
    /// Hidden state after each generated token.
    #[serde(skip)]
    pub reps: Vec<Array1<f64>>,
}

impl Generation {
    /// Mean of the token representations.
    pub fn pooled(&self) -> Array1<f64> {
        let mut acc = Array1::zeros(self.reps.first().map_or(0, |r| r.len()));
        for r in &self.reps {
            acc += r;
        }
        acc / self.reps.len().max(1) as f64
    }
}

/// Tokens surviving top-k then top-p, in descending logit order (ties by
/// lower index). At least one token always survives.
pub fn filter_candidates(logits: ArrayView1<'_, f64>, top_k: usize, top_p: f64, temperature: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(top_k.max(1));
    if top_p >= 1.0 {
        return order;
    }
    let scaled: Vec<f64> = order.iter().map(|&i| logits[i] / temperature).collect();
    let probs = softmax(&scaled);
    let mut cumulative = 0.0;
    let mut keep = 0;
    for p in probs {
        cumulative += p;
        keep += 1;
        if cumulative >= top_p {
            break;
        }
    }
    order.truncate(keep);
    order
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Draws a position from `softmax(scores / temperature)`.
fn sample_position(scores: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let probs = softmax(&scaled);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Plain top-k/top-p sampling.
pub fn vanilla_generate(model: &ToyModel, prompt: &[usize], params: &SamplingParams, seed: u64) -> Result<Generation> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = model.encode(prompt)?;
    let mut out = Generation {
        tokens: Vec::new(),
        bonuses: Vec::new(),
        reps: Vec::new(),
    };
    for _ in 0..params.max_len {
        let logits = model.logits(h.view());
        let cands = filter_candidates(logits.view(), params.top_k, params.top_p, params.temperature);
        let scores: Vec<f64> = cands.iter().map(|&j| logits[j]).collect();
        let tok = cands[sample_position(&scores, params.temperature, &mut rng)];
        h = model.step(h.view(), tok);
        out.tokens.push(tok);
        out.bonuses.push(0.0);
        out.reps.push(h.clone());
    }
    Ok(out)
}

/// Bonus-guided sampling against `state`, which is left unchanged.
pub fn guided_generate(
    model: &ToyModel,
    state: &GuidedState,
    prompt: &[usize],
    params: &SamplingParams,
    seed: u64,
) -> Result<Generation> {
    params.validate()?;
    check_dim(model.hidden(), state.cov.dim())?;
    let inverse = state.centered_inverse()?;
    let mean = state.mean();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = model.encode(prompt)?;
    let mut out = Generation {
        tokens: Vec::new(),
        bonuses: Vec::new(),
        reps: Vec::new(),
    };
    for _ in 0..params.max_len {
        let logits = model.logits(h.view());
        let cands = filter_candidates(logits.view(), params.top_k, params.top_p, params.temperature);
        let next: Vec<Array1<f64>> = cands.iter().map(|&j| model.step(h.view(), j)).collect();
        let bonus: Vec<f64> = next
            .iter()
            .map(|c| {
                let centered = c - &mean;
                quadratic_form(inverse.view(), centered.view()).max(0.0).sqrt()
            })
            .collect();
        let scores: Vec<f64> = cands
            .iter()
            .zip(&bonus)
            .map(|(&j, b)| logits[j] + params.beta * b)
            .collect();
        let pos = sample_position(&scores, params.temperature, &mut rng);
        out.tokens.push(cands[pos]);
        out.bonuses.push(bonus[pos]);
        h = next[pos].clone();
        out.reps.push(h.clone());
    }
    Ok(out)
}

/// Probability of each surviving token at the first step of a guided
/// generation. Returns `(tokens, probabilities)`.
pub fn first_step_distribution(
    model: &ToyModel,
    state: &GuidedState,
    prompt: &[usize],
    params: &SamplingParams,
) -> Result<(Vec<usize>, Vec<f64>)> {
    params.validate()?;
    let inverse = state.centered_inverse()?;
    let mean = state.mean();
    let h = model.encode(prompt)?;
    let logits = model.logits(h.view());
    let cands = filter_candidates(logits.view(), params.top_k, params.top_p, params.temperature);
    let scores: Vec<f64> = cands
        .iter()
        .map(|&j| {
            let centered = model.step(h.view(), j) - &mean;
            let b = quadratic_form(inverse.view(), centered.view()).max(0.0).sqrt();
            (logits[j] + params.beta * b) / params.temperature
        })
        .collect();
    Ok((cands, softmax(&scores)))
}

/// Runs `n` generations for one prompt, absorbing each after it finishes.
/// With `vanilla` set, tokens come from plain sampling but the state is still
/// maintained so bonuses can be compared.
pub fn run_generations(
    model: &ToyModel,
    prompt: &[usize],
    params: &SamplingParams,
    lambda: f64,
    n: usize,
    seed: u64,
    vanilla: bool,
) -> Result<Vec<Generation>> {
    let mut state = GuidedState::new(model.hidden(), lambda)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let s = derive_seed(seed, i as u64);
        let g = if vanilla {
            vanilla_generate(model, prompt, params, s)?
        } else {
            guided_generate(model, &state, prompt, params, s)?
        };
        state.absorb_generation(&g.reps)?;
        out.push(g);
    }
    Ok(out)
}

/// Mean Euclidean distance between the pooled representations of every pair
/// of generations.
pub fn mean_pairwise_distance(gens: &[Generation]) -> f64 {
    let pooled: Vec<Array1<f64>> = gens.iter().map(Generation::pooled).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            let d = &pooled[i] - &pooled[j];
            total += d.dot(&d).sqrt();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Fraction of distinct token sequences.
pub fn distinct_fraction(gens: &[Generation]) -> f64 {
    let mut seqs: Vec<&[usize]> = gens.iter().map(|g| g.tokens.as_slice()).collect();
    seqs.sort();
    seqs.dedup();
    seqs.len() as f64 / gens.len().max(1) as f64
}
