use rayon::prelude::*;
use repexp::derive_seed;
use repexp::guided::{
    distinct_fraction, mean_pairwise_distance, run_generations, Generation, SamplingParams, ToyModel, ToyModelConfig,
};
use serde::Serialize;
use serde_json::json;

use crate::output::{CliResult, Failure, OutDir};
use crate::SimulateArgs;

pub const GENERATIONS_FILE: &str = "generations.jsonl";
pub const DIVERSITY_FILE: &str = "diversity.json";

#[derive(Debug, Serialize)]
struct GenerationRecord<'a> {
    prompt_id: &'a str,
    gen_index: usize,
    tokens: &'a [usize],
    bonuses: &'a [f64],
    /// Diversity of generations `0..=gen_index`.
    mean_pairwise_distance: f64,
    distinct_fraction: f64,
}

#[derive(Debug, Serialize)]
struct PromptSummary {
    prompt_id: String,
    prompt: Vec<usize>,
    generations: usize,
    mean_pairwise_distance: f64,
    distinct_fraction: f64,
    mean_bonus: f64,
}

fn parse_prompts(raw: &[String], vocab: usize) -> CliResult<Vec<Vec<usize>>> {
    if raw.is_empty() {
        return Ok(vec![vec![0]]);
    }
    raw.iter()
        .map(|p| {
            let toks = p
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|e| Failure::invalid(format!("--prompt {p:?}: {e}")))
                })
                .collect::<CliResult<Vec<_>>>()?;
            if let Some(&bad) = toks.iter().find(|&&t| t >= vocab) {
                return Err(Failure::invalid(format!(
                    "--prompt token {bad} outside vocabulary of {vocab}"
                )));
            }
            Ok(toks)
        })
        .collect()
}

pub fn run(a: &SimulateArgs) -> CliResult<()> {
    let params = SamplingParams {
        beta: a.beta,
        top_p: a.top_p,
        top_k: a.top_k,
        temperature: a.temperature,
        max_len: a.max_len,
    };
    params.validate()?;
    if a.generations == 0 {
        return Err(Failure::invalid("--generations must be at least 1"));
    }
    if !(a.lambda.is_finite() && a.lambda > 0.0) {
        return Err(Failure::invalid(format!("--lambda must be positive, got {}", a.lambda)));
    }
    let model = ToyModel::new(&ToyModelConfig {
        vocab: a.vocab,
        hidden: a.hidden,
        seed: a.model_seed,
        ..ToyModelConfig::default()
    })?;
    let prompts = parse_prompts(&a.prompt, a.vocab)?;

    let runs: Vec<CliResult<Vec<Generation>>> = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let seed = derive_seed(a.seed, i as u64);
            Ok(run_generations(
                &model,
                p,
                &params,
                a.lambda,
                a.generations,
                seed,
                a.vanilla,
            )?)
        })
        .collect();
    let runs = runs.into_iter().collect::<CliResult<Vec<_>>>()?;

    let ids: Vec<String> = (0..prompts.len()).map(|i| format!("prompt-{i:04}")).collect();
    let mut lines = Vec::new();
    let mut summaries = Vec::new();
    for ((prompt_id, prompt), gens) in ids.iter().zip(&prompts).zip(&runs) {
        for (g, gen) in gens.iter().enumerate() {
            lines.push(GenerationRecord {
                prompt_id,
                gen_index: g,
                tokens: &gen.tokens,
                bonuses: &gen.bonuses,
                mean_pairwise_distance: mean_pairwise_distance(&gens[..=g]),
                distinct_fraction: distinct_fraction(&gens[..=g]),
            });
        }
        let steps: usize = gens.iter().map(|g| g.bonuses.len()).sum();
        let bonus_total: f64 = gens.iter().flat_map(|g| &g.bonuses).sum();
        summaries.push(PromptSummary {
            prompt_id: prompt_id.clone(),
            prompt: prompt.clone(),
            generations: gens.len(),
            mean_pairwise_distance: mean_pairwise_distance(gens),
            distinct_fraction: distinct_fraction(gens),
            mean_bonus: bonus_total / steps.max(1) as f64,
        });
    }

    let mut out = OutDir::create(&a.out)?;
    out.write_jsonl(GENERATIONS_FILE, &lines)?;
    out.write_json(DIVERSITY_FILE, &summaries)?;
    out.finish(
        "simulate",
        json!({
            "seed": a.seed,
            "beta": a.beta,
            "vanilla": a.vanilla,
            "generations": a.generations,
            "lambda": a.lambda,
            "top_p": a.top_p,
            "top_k": a.top_k,
            "temperature": a.temperature,
            "max_len": a.max_len,
            "vocab": a.vocab,
            "hidden": a.hidden,
            "model_seed": a.model_seed,
            "prompts": prompts,
        }),
    )
}
