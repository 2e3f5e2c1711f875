//! Report tables built from raw selection records.
//!
//! Files written by [`write_report`]:
//!
//! * `questions.csv`: one row per question and method.
//! * `pass_at_k.csv`: dataset pass@k curves, including the closed-form
//!   random baseline as method `random_closed_form`.
//! * `bins.csv`: samples-to-correct by hardness decile, hardness being the
//!   closed-form random samples-to-correct.
//! * `summary.json`: per-method means with and without censored questions.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::metrics::{
    bootstrap_ci, hardness_bins, hit_within, pass_at_k, relative_improvement, samples_to_correct_ordered,
    samples_to_correct_random, summarize,
};
use crate::selection::Method;

pub const QUESTIONS_FILE: &str = "questions.csv";
pub const CURVES_FILE: &str = "pass_at_k.csv";
pub const BINS_FILE: &str = "bins.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DEFAULT_BINS: usize = 10;
const BOOTSTRAP_RESAMPLES: usize = 1000;

/// One selection trial as written to `selections.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub prompt_id: String,
    pub method: Method,
    pub trial: usize,
    pub seed: u64,
    pub indices: Vec<usize>,
    pub bonuses: Vec<f64>,
}

/// A labelled question: the rewards of its pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub id: String,
    pub rewards: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRow {
    pub question_id: String,
    pub n: usize,
    pub c: usize,
    pub stc_random_closed_form: f64,
    pub closed_form_censored: bool,
    pub method: Method,
    pub trials: usize,
    pub stc_mean: f64,
    pub stc_std: f64,
    pub censored_trials: usize,
    pub relative_improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: String,
    pub k: u64,
    pub pass_at_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin: usize,
    pub questions: usize,
    pub hardness_min: f64,
    pub hardness_max: f64,
    pub method: Method,
    pub stc_random_mean: f64,
    pub stc_method_mean: f64,
    pub relative_improvement: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub questions: usize,
    pub censored_questions: usize,
    pub stc_mean_all: f64,
    pub stc_mean_uncensored: f64,
    pub random_closed_form_mean_all: f64,
    pub random_closed_form_mean_uncensored: f64,
    pub relative_improvement_uncensored: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub questions: Vec<QuestionRow>,
    pub curves: Vec<CurveRow>,
    pub bins: Vec<BinRow>,
    pub summary: Vec<MethodSummary>,
}

impl Report {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }
}

/// Budgets 1, 2, 4, … up to and including `k_max`.
pub fn curve_ks(k_max: usize) -> Vec<u64> {
    let mut ks: Vec<u64> = std::iter::successors(Some(1u64), |k| k.checked_mul(2))
        .take_while(|&k| k <= k_max as u64)
        .collect();
    if ks.last() != Some(&(k_max as u64)) && k_max > 0 {
        ks.push(k_max as u64);
    }
    ks
}

/// Aggregates selection records against question labels. `seed` drives the
/// bootstrap intervals.
pub fn build_report(questions: &[Question], records: &[SelectionRecord], seed: u64) -> Result<Report> {
    if questions.is_empty() {
        return Err(Error::invalid("no questions to report on"));
    }
    let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    methods.sort_by_key(|m| m.to_string());
    methods.dedup();

    // per_question[m][q] = samples-to-correct of every trial.
    let mut stc: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); questions.len()]; methods.len()];
    let mut censored: Vec<Vec<usize>> = vec![vec![0; questions.len()]; methods.len()];
    let mut orders: Vec<Vec<Vec<&[usize]>>> = vec![vec![Vec::new(); questions.len()]; methods.len()];
    for r in records {
        let q = questions
            .iter()
            .position(|q| q.id == r.prompt_id)
            .ok_or_else(|| Error::invalid(format!("record for unknown prompt {:?}", r.prompt_id)))?;
        let m = methods.iter().position(|&m| m == r.method).unwrap();
        let s = samples_to_correct_ordered(&r.indices, &questions[q].rewards)?;
        stc[m][q].push(s.value);
        censored[m][q] += usize::from(s.censored);
        orders[m][q].push(&r.indices);
    }

    let closed: Vec<(f64, bool, usize)> = questions
        .iter()
        .map(|q| {
            let c = q.rewards.iter().filter(|&&r| r == 1).count();
            let s = samples_to_correct_random(q.rewards.len() as u64, c as u64)?;
            Ok((s.value, s.censored, c))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (qi, q) in questions.iter().enumerate() {
        for (mi, &method) in methods.iter().enumerate() {
            let trials = &stc[mi][qi];
            if trials.is_empty() {
                continue;
            }
            let s = summarize(trials);
            rows.push(QuestionRow {
                question_id: q.id.clone(),
                n: q.rewards.len(),
                c: closed[qi].2,
                stc_random_closed_form: closed[qi].0,
                closed_form_censored: closed[qi].1,
                method,
                trials: trials.len(),
                stc_mean: s.mean,
                stc_std: s.std,
                censored_trials: censored[mi][qi],
                relative_improvement: relative_improvement(s.mean, closed[qi].0),
            });
        }
    }

    // Curves over the smallest budget any record used.
    let k_max = records
        .iter()
        .map(|r| r.indices.len())
        .min()
        .unwrap_or_else(|| questions.iter().map(|q| q.rewards.len()).min().unwrap_or(0));
    let ks = curve_ks(k_max);
    let mut curves = Vec::new();
    for &k in &ks {
        let total: f64 = questions
            .iter()
            .zip(&closed)
            .map(|(q, cl)| pass_at_k(q.rewards.len() as u64, cl.2 as u64, k))
            .sum::<Result<f64>>()?;
        curves.push(CurveRow {
            method: "random_closed_form".into(),
            k,
            pass_at_k: total / questions.len() as f64,
        });
    }
    for (mi, method) in methods.iter().enumerate() {
        for &k in &ks {
            let mut total = 0.0;
            let mut counted = 0usize;
            for (qi, q) in questions.iter().enumerate() {
                let os = &orders[mi][qi];
                if os.is_empty() {
                    continue;
                }
                let hits = os.iter().filter(|o| hit_within(o, &q.rewards, k as usize)).count();
                total += hits as f64 / os.len() as f64;
                counted += 1;
            }
            if counted > 0 {
                curves.push(CurveRow {
                    method: method.to_string(),
                    k,
                    pass_at_k: total / counted as f64,
                });
            }
        }
    }

    let per_question_mean = |mi: usize, qi: usize| -> Option<f64> {
        let t = &stc[mi][qi];
        (!t.is_empty()).then(|| t.iter().sum::<f64>() / t.len() as f64)
    };

    let hardness: Vec<f64> = closed.iter().map(|c| c.0).collect();
    let n_bins = DEFAULT_BINS.min(questions.len());
    let bin_members = hardness_bins(&hardness, n_bins)?;
    let mut bins = Vec::new();
    for (b, members) in bin_members.iter().enumerate() {
        let hmin = members.iter().map(|&i| hardness[i]).fold(f64::INFINITY, f64::min);
        let hmax = members.iter().map(|&i| hardness[i]).fold(f64::NEG_INFINITY, f64::max);
        for (mi, &method) in methods.iter().enumerate() {
            let pairs: Vec<(f64, f64)> = members
                .iter()
                .filter_map(|&q| per_question_mean(mi, q).map(|m| (hardness[q], m)))
                .collect();
            if pairs.is_empty() {
                continue;
            }
            let ratio = |idx: &[usize]| {
                let base: f64 = idx.iter().map(|&i| pairs[i].0).sum();
                let meth: f64 = idx.iter().map(|&i| pairs[i].1).sum();
                relative_improvement(meth, base)
            };
            let all: Vec<usize> = (0..pairs.len()).collect();
            let ci = bootstrap_ci(
                pairs.len(),
                ratio,
                BOOTSTRAP_RESAMPLES,
                0.95,
                derive_seed(seed, (b * methods.len() + mi) as u64),
            );
            let len = pairs.len() as f64;
            bins.push(BinRow {
                bin: b,
                questions: pairs.len(),
                hardness_min: hmin,
                hardness_max: hmax,
                method,
                stc_random_mean: pairs.iter().map(|p| p.0).sum::<f64>() / len,
                stc_method_mean: pairs.iter().map(|p| p.1).sum::<f64>() / len,
                relative_improvement: ratio(&all),
                ci_low: ci.map(|c| c.0),
                ci_high: ci.map(|c| c.1),
            });
        }
    }

    let mut summary = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        let mut all = Vec::new();
        let mut unc = Vec::new();
        let mut base_all = Vec::new();
        let mut base_unc = Vec::new();
        for (qi, &(base, censored, _)) in closed.iter().enumerate() {
            let Some(m) = per_question_mean(mi, qi) else { continue };
            all.push(m);
            base_all.push(base);
            if !censored {
                unc.push(m);
                base_unc.push(base);
            }
        }
        let mean = |v: &[f64]| summarize(v).mean;
        summary.push(MethodSummary {
            method,
            questions: all.len(),
            censored_questions: all.len() - unc.len(),
            stc_mean_all: mean(&all),
            stc_mean_uncensored: mean(&unc),
            random_closed_form_mean_all: mean(&base_all),
            random_closed_form_mean_uncensored: mean(&base_unc),
            relative_improvement_uncensored: relative_improvement(mean(&unc), mean(&base_unc)),
        });
    }

    Ok(Report {
        questions: rows,
        curves,
        bins,
        summary,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    atomic_write(path, &bytes)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub const QUESTION_COLUMNS: &[&str] = &[
    "question_id",
    "n",
    "c",
    "stc_random_closed_form",
    "closed_form_censored",
    "method",
    "trials",
    "stc_mean",
    "stc_std",
    "censored_trials",
    "relative_improvement",
];
pub const CURVE_COLUMNS: &[&str] = &["method", "k", "pass_at_k"];
pub const BIN_COLUMNS: &[&str] = &[
    "bin",
    "questions",
    "hardness_min",
    "hardness_max",
    "method",
    "stc_random_mean",
    "stc_method_mean",
    "relative_improvement",
    "ci_low",
    "ci_high",
];

/// Writes the report files into `dir`, returning their names.
pub fn write_report(dir: &Path, report: &Report) -> Result<Vec<String>> {
    write_csv(&dir.join(QUESTIONS_FILE), &report.questions, QUESTION_COLUMNS)?;
    write_csv(&dir.join(CURVES_FILE), &report.curves, CURVE_COLUMNS)?;
    write_csv(&dir.join(BINS_FILE), &report.bins, BIN_COLUMNS)?;
    let mut json = serde_json::to_vec_pretty(&report.summary)?;
    json.push(b'\n');
    atomic_write(&dir.join(SUMMARY_FILE), &json)?;
    Ok([QUESTIONS_FILE, CURVES_FILE, BINS_FILE, SUMMARY_FILE]
        .map(String::from)
        .to_vec())
}

pub fn write_records(path: &Path, records: &[SelectionRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_records(path: &Path) -> Result<Vec<SelectionRecord>> {
    read_jsonl(path)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Writes through a temporary sibling and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
