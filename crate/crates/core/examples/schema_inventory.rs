//! Cube layouts shipped for the three multi-hop benchmarks.

use std::path::PathBuf;

use cuberag::schema::CubeRegistry;

pub fn run_example() -> anyhow::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("schemas");
    for name in ["hotpotqa", "2wikiqa", "musique"] {
        let registry = CubeRegistry::load(dir.join(format!("{name}.json")))?;
        println!("{name}:");
        for cube in registry.iter() {
            let axes: Vec<&str> = cube.axes().map(|d| d.name.as_str()).collect();
            println!("  {} ({} axes): {}", cube.name, cube.dimensionality(), axes.join(", "));
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
