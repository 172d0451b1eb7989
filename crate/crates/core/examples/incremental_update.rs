//! Grow a saved index by one document, then reload it from disk.

use std::path::PathBuf;

use cuberag::corpus::{Corpus, Document};
use cuberag::index::{BuildOptions, IndexStore};
use cuberag::llm::{BackendConfig, ScriptRule, ScriptedBackend};
use cuberag::schema::CubeRegistry;

pub fn run_example() -> anyhow::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/case_study");
    let backends = BackendConfig::load(dir.join("backend.json"))?.build()?;
    let opts = BuildOptions::default();
    let (mut store, _) = IndexStore::build(
        Corpus::load(dir.join("corpus.jsonl"))?,
        CubeRegistry::load(dir.join("schema.json"))?,
        backends.chat.as_ref(),
        backends.embed.as_deref(),
        &opts,
    )?;

    let tagger = ScriptedBackend::new(vec![ScriptRule::contains(
        ["Riders of Destiny"],
        r#"{"CULTURAL_PRODUCT": {"cultural_product_name": "Riders of Destiny", "genre": "western",
            "relation_to_person": "Robert N. Bradbury"}}"#,
    )]);
    let doc = Document::new("doc_riders", "Riders of Destiny is a 1933 western directed by Robert N. Bradbury.");
    let report = store.append_documents(vec![doc], &tagger, backends.embed.as_deref(), &opts)?;
    println!("appended {} document, {} new vectors", report.tagged, report.embedded_values);

    let out = tempfile::tempdir()?;
    store.save(out.path())?;
    let reloaded = IndexStore::load(out.path())?;
    anyhow::ensure!(reloaded == store, "reloaded store differs");
    let westerns = reloaded.indexes["CULTURAL_PRODUCT"].cell("genre", "western");
    println!("genre=western: {:?}", westerns.map(|ids| ids.iter().collect::<Vec<_>>()));
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
