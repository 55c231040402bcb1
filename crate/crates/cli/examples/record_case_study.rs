//! Re-record the case-study replay fixtures from the scripted replies.
//!
//! Usage: record_case_study [CASE_DIR] [FIXTURES_DIR]
//! CASE_DIR defaults to fixtures/case_study, FIXTURES_DIR to CASE_DIR/llm.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;

use evchain_cli::config::PipelineConfig;
use evchain_cli::record::{load_script, record};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args_os().skip(1).map(PathBuf::from);
    let case_dir = args
        .next()
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/case_study"));
    let fixtures_dir = args.next().unwrap_or_else(|| case_dir.join("llm"));
    let config = PipelineConfig::load(&case_dir.join("config.toml"))?;
    let (replies, sessions) = load_script(&case_dir)?;
    if fixtures_dir.exists() {
        fs::remove_dir_all(&fixtures_dir).with_context(|| format!("clearing {}", fixtures_dir.display()))?;
    }
    let scratch = std::env::temp_dir().join(format!("evchain-record-{}", std::process::id()));
    let calls = record(&config, replies, &sessions, &fixtures_dir, &scratch)?;
    fs::remove_dir_all(&scratch).ok();
    let count = fs::read_dir(&fixtures_dir)?.count();
    println!("{calls} scripted calls, {count} fixtures in {}", fixtures_dir.display());
    Ok(())
}
