use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use repexp::pool::{preprocess, read_manifest, read_pool, resolve_data_file};
use repexp::report::{build_report, write_report, Question, SelectionRecord};
use repexp::selection::Method;
use repexp::synth::trial_seed;
use repexp::{derive_seed, ManifestRecord, SparseProjection};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::output::{absolute, at, CliResult, Failure, OutDir};
use crate::SelectArgs;

pub const SELECTIONS_FILE: &str = "selections.jsonl";
pub const RUN_FILE: &str = "run.json";

/// Sub-stream of the run seed that drives the projection.
const PROJECTION_STREAM: u64 = u64::MAX;

/// What `report` needs to rebuild a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub manifest: String,
    pub method: Method,
    pub k: Option<usize>,
    pub lambda: f64,
    pub dim: usize,
    pub sparsity: Option<f64>,
    pub seed: u64,
    pub trials: usize,
}

fn validate(a: &SelectArgs) -> CliResult<()> {
    if a.k == Some(0) {
        return Err(Failure::invalid("--k must be at least 1"));
    }
    if !(a.lambda.is_finite() && a.lambda > 0.0) {
        return Err(Failure::invalid(format!("--lambda must be positive, got {}", a.lambda)));
    }
    if a.dim == 0 {
        return Err(Failure::invalid("--dim must be at least 1"));
    }
    if let Some(s) = a.sparsity {
        if !(s.is_finite() && s >= 1.0) {
            return Err(Failure::invalid(format!("--sparsity must be >= 1, got {s}")));
        }
    }
    if a.trials == 0 {
        return Err(Failure::invalid("--trials must be at least 1"));
    }
    Ok(())
}

/// Manifest records sorted by prompt id; duplicate ids are rejected.
pub fn sorted_records(manifest: &Path) -> CliResult<Vec<ManifestRecord>> {
    let mut records = read_manifest(manifest).map_err(at(manifest))?;
    if records.is_empty() {
        return Err(Failure::invalid(format!(
            "{}: manifest lists no pools",
            manifest.display()
        )));
    }
    records.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.prompt_id.as_str()) {
            return Err(Failure::invalid(format!(
                "duplicate prompt_id {:?} in manifest",
                r.prompt_id
            )));
        }
    }
    Ok(records)
}

fn projection(input_dim: usize, a: &SelectArgs) -> CliResult<SparseProjection> {
    if input_dim <= a.dim {
        return Ok(SparseProjection::identity(input_dim));
    }
    let s = a.sparsity.unwrap_or((input_dim as f64).sqrt());
    Ok(SparseProjection::with_sparsity(
        input_dim,
        a.dim,
        s,
        derive_seed(a.seed, PROJECTION_STREAM),
    )?)
}

struct PoolOutcome {
    records: Vec<SelectionRecord>,
    rewards: Option<Vec<u8>>,
}

fn run_pool(q: usize, rec: &ManifestRecord, manifest: &Path, a: &SelectArgs) -> CliResult<PoolOutcome> {
    let file = resolve_data_file(manifest, rec);
    let pool = read_pool(rec, &file).map_err(at(&file))?;
    let proj = projection(pool.dim(), a)?;
    let pre = preprocess(&pool, &proj)?;
    let k = a.k.unwrap_or(pre.n());
    if k > pre.n() {
        return Err(Failure::invalid(format!(
            "--k {k} exceeds pool size {} of {}",
            pre.n(),
            rec.prompt_id
        )));
    }
    let mut records = Vec::with_capacity(a.trials);
    for trial in 0..a.trials {
        let seed = trial_seed(a.seed, q, a.method, trial);
        let sel = a.method.select(&pre, k, a.lambda, seed)?;
        records.push(SelectionRecord {
            prompt_id: rec.prompt_id.clone(),
            method: a.method,
            trial,
            seed,
            indices: sel.indices,
            bonuses: sel.bonuses,
        });
    }
    Ok(PoolOutcome {
        records,
        rewards: pre.rewards,
    })
}

pub fn run(a: &SelectArgs) -> CliResult<()> {
    validate(a)?;
    let records = sorted_records(&a.manifest)?;
    let outcomes: Vec<CliResult<PoolOutcome>> = records
        .par_iter()
        .enumerate()
        .map(|(q, rec)| run_pool(q, rec, &a.manifest, a))
        .collect();
    let outcomes = outcomes.into_iter().collect::<CliResult<Vec<_>>>()?;

    let mut out = OutDir::create(&a.out)?;
    let selections: Vec<&SelectionRecord> = outcomes.iter().flat_map(|o| &o.records).collect();
    out.write_jsonl(SELECTIONS_FILE, &selections)?;
    let info = RunInfo {
        manifest: absolute(&a.manifest).display().to_string(),
        method: a.method,
        k: a.k,
        lambda: a.lambda,
        dim: a.dim,
        sparsity: a.sparsity,
        seed: a.seed,
        trials: a.trials,
    };
    out.write_json(RUN_FILE, &info)?;

    let labelled = outcomes.iter().all(|o| o.rewards.is_some());
    if labelled {
        let questions: Vec<Question> = records
            .iter()
            .zip(&outcomes)
            .map(|(r, o)| Question {
                id: r.prompt_id.clone(),
                rewards: o.rewards.clone().unwrap(),
            })
            .collect();
        let all: Vec<SelectionRecord> = outcomes.into_iter().flat_map(|o| o.records).collect();
        let report = build_report(&questions, &all, a.seed)?;
        for name in write_report(out.root(), &report).map_err(at(out.root()))? {
            out.note(name);
        }
    }
    let params = json!({ "run": info, "report": labelled });
    out.finish("select", params)
}
