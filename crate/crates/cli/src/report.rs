use std::fs;
use std::path::PathBuf;

use repexp::pool::{read_pool, resolve_data_file};
use repexp::report::{build_report, read_records, write_report, Question};
use serde_json::json;

use crate::output::{at, CliResult, Failure, OutDir};
use crate::select::{sorted_records, RunInfo, RUN_FILE, SELECTIONS_FILE};
use crate::ReportArgs;

pub fn run(a: &ReportArgs) -> CliResult<()> {
    let run_file = a.run.join(RUN_FILE);
    let info: RunInfo =
        serde_json::from_slice(&fs::read(&run_file).map_err(|e| Failure::Io(format!("{}: {e}", run_file.display())))?)
            .map_err(|e| Failure::invalid(format!("{}: {e}", run_file.display())))?;
    let manifest = a.manifest.clone().unwrap_or_else(|| PathBuf::from(&info.manifest));
    let sel_file = a.run.join(SELECTIONS_FILE);
    let selections = read_records(&sel_file).map_err(at(&sel_file))?;

    let mut questions = Vec::new();
    for rec in sorted_records(&manifest)? {
        let file = resolve_data_file(&manifest, &rec);
        let pool = read_pool(&rec, &file).map_err(at(&file))?;
        let rewards = pool
            .rewards()
            .ok_or_else(|| Failure::invalid(format!("pool {} has no reward labels", rec.prompt_id)))?;
        questions.push(Question {
            id: rec.prompt_id,
            rewards: rewards.to_vec(),
        });
    }
    let report = build_report(&questions, &selections, info.seed)?;
    let mut out = OutDir::create(&a.out)?;
    for name in write_report(out.root(), &report).map_err(at(out.root()))? {
        out.note(name);
    }
    out.finish("report", json!({ "run": info, "questions": questions.len() }))
}
