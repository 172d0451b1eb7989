//! Ask a model for an ontology over sample documents and turn it into a
//! first-draft cube schema.

use cuberag::corpus::Document;
use cuberag::llm::{ScriptRule, ScriptedBackend};
use cuberag::schema::draft_ontology;

const REPLY: &str = "\
1. Level 1: Culture Product (film, song)
   - Level 2: genre, release date
   - Level 2: Relations: directed by, produced by
2. Level 1: Person (director, actor)
   - Level 2: occupation, birth date, nationality
   - Level 2: Relations: directed, born in
";

pub fn run_example() -> anyhow::Result<()> {
    let sample = [
        Document::new("a", "El Tonto is a 2023 comedy drama film written and directed by Charlie Day."),
        Document::new("b", "Robert N. Bradbury was an American film director born in Walla Walla."),
    ];
    let chat = ScriptedBackend::new(vec![ScriptRule::contains(["two-level tree"], REPLY)]);
    let ontology = draft_ontology(&sample, &chat)?;
    for class in &ontology.classes {
        println!("{}: attributes {:?}, relations {:?}", class.name, class.attribute_types, class.relation_types);
    }
    let registry = ontology.draft_cube_specs()?;
    println!("{}", registry.to_json());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
