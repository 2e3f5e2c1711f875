use std::fs;
use std::io::{BufWriter, Write};

use repexp::derive_seed;
use repexp::pool::{read_manifest, read_pool, resolve_data_file};
use repexp::reward::{augment_group, BonusConfig, RewardGroup};
use serde_json::json;

use crate::output::{at, CliResult, Failure, OutDir};
use crate::BonusArgs;

pub const AUGMENTED_FILE: &str = "augmented.jsonl";

fn config(a: &BonusArgs) -> CliResult<BonusConfig> {
    let mut cfg = if a.long_context {
        BonusConfig::long_context()
    } else {
        BonusConfig::default()
    };
    if let Some(b) = a.beta {
        cfg.beta = b;
    }
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(d) = a.dim {
        cfg.projection_dim = d;
    }
    cfg.sparsity = a.sparsity;
    cfg.validate()?;
    Ok(cfg)
}

/// Groups are processed one at a time in manifest order and streamed to a
/// temporary file that is renamed into place once every group succeeded.
pub fn run(a: &BonusArgs) -> CliResult<()> {
    let cfg = config(a)?;
    let records = read_manifest(&a.groups).map_err(at(&a.groups))?;
    if records.is_empty() {
        return Err(Failure::invalid(format!(
            "{}: manifest lists no groups",
            a.groups.display()
        )));
    }
    let mut out = OutDir::create(&a.out)?;
    let target = out.path(AUGMENTED_FILE);
    let tmp = out.path(&format!(".{AUGMENTED_FILE}.tmp"));
    let mut w = BufWriter::new(fs::File::create(&tmp)?);
    let result = (|| -> CliResult<()> {
        for (i, rec) in records.iter().enumerate() {
            let file = resolve_data_file(&a.groups, rec);
            let pool = read_pool(rec, &file).map_err(at(&file))?;
            let extrinsic = pool
                .rewards()
                .ok_or_else(|| Failure::invalid(format!("group {} has no reward labels", rec.prompt_id)))?
                .to_vec();
            let group = RewardGroup {
                prompt_id: rec.prompt_id.clone(),
                embeddings: pool.embeddings().mapv(f64::from),
                extrinsic,
                projection_seed: derive_seed(a.step_seed, i as u64),
            };
            let aug = augment_group(&group, &cfg)?;
            serde_json::to_writer(&mut w, &aug)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        w.get_ref().sync_all()?;
        Ok(())
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    drop(w);
    fs::rename(&tmp, &target)?;
    out.note(AUGMENTED_FILE);
    out.finish(
        "bonus",
        json!({
            "groups": records.len(),
            "step_seed": a.step_seed,
            "beta": cfg.beta,
            "lambda": cfg.lambda,
            "projection_dim": cfg.projection_dim,
            "sparsity": cfg.sparsity,
        }),
    )
}
