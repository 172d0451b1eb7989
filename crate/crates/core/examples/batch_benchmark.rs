//! Score the bundled question set against a slow backend at several batch
//! sizes.

use std::path::PathBuf;
use std::time::Duration;

use cuberag::corpus::Corpus;
use cuberag::eval::{load_dataset, run_benchmark, BenchmarkConfig};
use cuberag::index::{BuildOptions, IndexStore};
use cuberag::llm::{BackendConfig, ScriptedBackend};
use cuberag::reasoning::Engine;
use cuberag::schema::CubeRegistry;

pub fn run_example() -> anyhow::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/case_study");
    let backends = BackendConfig::load(dir.join("backend.json"))?.build()?;
    let (store, _) = IndexStore::build(
        Corpus::load(dir.join("corpus.jsonl"))?,
        CubeRegistry::load(dir.join("schema.json"))?,
        backends.chat.as_ref(),
        backends.embed.as_deref(),
        &BuildOptions::default(),
    )?;
    let slow = ScriptedBackend::load(dir.join("chat_rules.json"))?.with_delay(Duration::from_millis(2));
    let engine = Engine::new(&store, &slow, backends.embed.as_deref());
    let questions: Vec<_> = load_dataset(dir.join("dataset.jsonl"))?.into_iter().cycle().take(6).collect();

    for batch_size in [1, 2, 6] {
        let report = run_benchmark(&questions, &engine, &BenchmarkConfig { batch_size, ..Default::default() })?;
        println!("{}", report.summary_line());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
