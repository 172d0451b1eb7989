//! Hand-built cube, one query, three match modes.

use cuberag::index::{CubeIndex, DimensionTags};
use cuberag::llm::FixtureEmbedder;
use cuberag::retriever::{retrieve, MatchMode, QueryDecomposition, RetrievalConfig};
use cuberag::schema::{CubeSpec, DimensionSpec};

pub fn run_example() -> anyhow::Result<()> {
    let spec = CubeSpec::from_dimensions(
        "FILM",
        vec![
            DimensionSpec::subject("title"),
            DimensionSpec::attribute("genre"),
            DimensionSpec::relation("directed_by"),
        ],
    )?;
    let mut index = CubeIndex::new(spec);
    for (id, title, genre, director) in [
        ("f1", "El Tonto", "comedy drama", "Charlie Day"),
        ("f2", "The Heart Of Doreon", "western", "Robert N. Bradbury"),
        ("f3", "Riders Of Destiny", "western", "Robert N. Bradbury"),
    ] {
        let tags = DimensionTags::from_pairs([("title", title), ("genre", genre), ("directed_by", director)]);
        index.insert_document(id, tags)?;
    }

    // Hand-placed vectors: "westerns" sits close to "western".
    let embed = FixtureEmbedder::hashed(16)
        .with_vector("westerns", unit(&[1.0, 0.2]))?
        .with_vector("western", unit(&[1.0, 0.1]))?
        .with_vector("comedy drama", unit(&[0.0, 1.0]))?;
    println!("embedded {} stored values", index.embed_missing_values(&embed)?);

    let query = QueryDecomposition::default()
        .with("directed_by", "robert n. bradbury")
        .with("genre", "westerns");
    for mode in [MatchMode::ExactOnly, MatchMode::SemanticOnly, MatchMode::Hybrid] {
        let cfg = RetrievalConfig { k: 3, tau: 0.8, mode };
        let outcome = retrieve(&index, &query, &cfg, Some(&embed))?;
        let ranked: Vec<String> = outcome.hits.iter().map(|h| format!("{}={:.2}", h.doc_id, h.score)).collect();
        println!("{mode}: {}", ranked.join(" "));
    }
    Ok(())
}

fn unit(head: &[f32]) -> Vec<f32> {
    let mut v = vec![0.0; 16];
    v[..head.len()].copy_from_slice(head);
    v
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
