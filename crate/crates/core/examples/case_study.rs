//! Two-director comparison question over the bundled six-document corpus,
//! printed hop by hop.

use std::path::PathBuf;

use cuberag::corpus::Corpus;
use cuberag::index::{BuildOptions, IndexStore};
use cuberag::llm::BackendConfig;
use cuberag::reasoning::{Engine, LoopConfig};
use cuberag::schema::CubeRegistry;

const QUESTION: &str = "Which film whose director was born first, El Tonto or The Heart Of Doreon?";

pub fn run_example() -> anyhow::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/case_study");
    let backends = BackendConfig::load(dir.join("backend.json"))?.build()?;
    let (store, report) = IndexStore::build(
        Corpus::load(dir.join("corpus.jsonl"))?,
        CubeRegistry::load(dir.join("schema.json"))?,
        backends.chat.as_ref(),
        backends.embed.as_deref(),
        &BuildOptions::default(),
    )?;
    println!("indexed {}/{} documents", report.tagged, report.documents);

    let engine = Engine::new(&store, backends.chat.as_ref(), backends.embed.as_deref());
    let trace = engine.run(QUESTION, &LoopConfig::default())?;
    for it in &trace.iterations {
        println!("[{}] {}", it.index, it.subquery);
        println!("    route: {}", serde_json::to_string(&it.route.route)?);
        for (dim, keys) in &it.search_keys {
            println!("    {dim} <- {}", keys.join(", "));
        }
        if let Some(top) = it.retrieved.first() {
            println!("    top: {} ({:.3})", top.doc_id, top.score);
        }
        println!("    => {}", it.sub_answer);
    }
    println!("answer: {} ({:?})", trace.final_answer, trace.stop_reason);
    anyhow::ensure!(trace.final_answer == "The Heart Of Doreon.");
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
