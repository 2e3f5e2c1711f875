use std::fs;

use repexp::pool::write_pool;
use repexp::synth::{generate_pools, SynthConfig};
use serde_json::json;

use crate::output::{at, CliResult, Failure, OutDir};
use crate::SynthArgs;

pub const POOL_MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONFIG_FILE: &str = "synth.conf";

pub fn run(a: &SynthArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.config).map_err(|e| Failure::Io(format!("{}: {e}", a.config.display())))?;
    let cfg = SynthConfig::parse(&text).map_err(at(&a.config))?;
    let pools = generate_pools(&cfg)?;

    let mut out = OutDir::create(&a.out)?;
    let mut records = Vec::with_capacity(pools.len());
    for pool in &pools {
        let name = format!("{}.bin", pool.prompt_id());
        let path = out.path(&name);
        write_pool(&path, pool).map_err(at(&path))?;
        out.note(name.clone());
        records.push(pool.manifest_record(name));
    }
    let mut manifest = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut manifest, r)?;
        manifest.push(b'\n');
    }
    out.write(POOL_MANIFEST_FILE, &manifest)?;
    out.write(CONFIG_FILE, cfg.to_text().as_bytes())?;
    out.finish("synth", json!({ "config": cfg, "pools": records.len() }))
}
