//! Random cubes, corpora and decompositions, plus a brute-force scorer that
//! works from the generator's own records rather than the index.

use std::collections::BTreeSet;

use cuberag::index::{CubeIndex, DimensionTags};
use cuberag::retriever::QueryDecomposition;
use cuberag::schema::{CubeSpec, DimensionSpec};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Zipf};

pub struct SynthDoc {
    pub id: String,
    pub cells: Vec<(String, String)>,
}

pub fn spec(dims: usize) -> CubeSpec {
    let mut list = vec![DimensionSpec::subject("d0")];
    for i in 1..dims {
        if i % 2 == 1 {
            list.push(DimensionSpec::attribute(format!("d{i}")));
        } else {
            list.push(DimensionSpec::relation(format!("d{i}")));
        }
    }
    CubeSpec::from_dimensions("SYNTH", list).unwrap()
}

/// `n` documents over `dims` axes with at most `max_values` values per axis
/// drawn from `vocab` strings each. Some documents leave axes empty.
pub fn corpus(rng: &mut StdRng, n: usize, dims: usize, max_values: usize, vocab: usize) -> Vec<SynthDoc> {
    (0..n)
        .map(|i| {
            let mut cells = BTreeSet::new();
            for d in 0..dims {
                if rng.random_bool(0.35) {
                    continue;
                }
                for _ in 0..rng.random_range(1..=max_values) {
                    cells.insert((format!("d{d}"), format!("v{}", rng.random_range(0..vocab))));
                }
            }
            SynthDoc {
                id: format!("doc{i:05}"),
                cells: cells.into_iter().collect(),
            }
        })
        .collect()
}

/// Zipf-distributed values, as in real entity frequency.
pub fn zipf_corpus(rng: &mut StdRng, n: usize, dims: usize, vocab: usize) -> Vec<SynthDoc> {
    let zipf = Zipf::new(vocab as f64, 1.1).unwrap();
    (0..n)
        .map(|i| {
            let mut cells = BTreeSet::new();
            for d in 0..dims {
                for _ in 0..rng.random_range(0..=2) {
                    let v = zipf.sample(rng) as usize;
                    cells.insert((format!("d{d}"), format!("v{v}")));
                }
            }
            SynthDoc {
                id: format!("doc{i:05}"),
                cells: cells.into_iter().collect(),
            }
        })
        .collect()
}

pub fn tags(doc: &SynthDoc) -> DimensionTags {
    DimensionTags::from_pairs(doc.cells.iter().map(|(d, v)| (d.as_str(), v.as_str())))
}

pub fn index(dims: usize, docs: &[SynthDoc]) -> CubeIndex {
    let mut idx = CubeIndex::new(spec(dims));
    for d in docs {
        idx.insert_document(&d.id, tags(d)).unwrap();
    }
    idx
}

pub fn decomposition(rng: &mut StdRng, dims: usize, vocab: usize) -> QueryDecomposition {
    let mut q = QueryDecomposition::new();
    for _ in 0..rng.random_range(0..=5) {
        let v = format!("v{}", rng.random_range(0..vocab));
        if rng.random_bool(0.25) {
            q.unassign(&v);
        } else {
            q.assign(&format!("d{}", rng.random_range(0..dims)), &v);
        }
    }
    q
}

pub fn seeded(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Counts query entities present in the document: on their own axis, or on
/// any axis when unassigned.
pub fn brute_score(doc: &SynthDoc, q: &QueryDecomposition) -> usize {
    let mut score = 0;
    for (dim, values) in &q.entities {
        for e in values {
            if doc.cells.iter().any(|(d, v)| d == dim && v == e) {
                score += 1;
            }
        }
    }
    for e in &q.unassigned {
        if doc.cells.iter().any(|(_, v)| v == e) {
            score += 1;
        }
    }
    score
}

/// Top-`k` (doc id, score) by score descending then id ascending.
pub fn brute_top_k(docs: &[SynthDoc], q: &QueryDecomposition, k: usize) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, usize)> = docs
        .iter()
        .map(|d| (d.id.clone(), brute_score(d, q)))
        .filter(|(_, s)| *s > 0)
        .collect();
    scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored.into_iter().map(|(id, s)| (id, s as f64)).collect()
}

/// Corpus documents whose text is their id, and a scripted tagger that
/// replies with each document's cells for the cube `SYNTH`.
pub fn tagged_corpus(docs: &[SynthDoc]) -> (Vec<cuberag::corpus::Document>, cuberag::llm::ScriptedBackend) {
    use cuberag::llm::{ScriptRule, ScriptedBackend};
    let mut rules = Vec::new();
    let mut out = Vec::new();
    for d in docs {
        let mut dims: std::collections::BTreeMap<&str, Vec<&str>> = Default::default();
        for (dim, v) in &d.cells {
            dims.entry(dim).or_default().push(v);
        }
        let reply = serde_json::json!({ "SYNTH": dims }).to_string();
        let marker = format!("<<{}>>", d.id);
        rules.push(ScriptRule::contains([marker.clone()], reply));
        out.push(cuberag::corpus::Document::new(d.id.clone(), format!("text {marker}")));
    }
    (out, ScriptedBackend::new(rules))
}

pub fn registry(dims: usize) -> cuberag::schema::CubeRegistry {
    cuberag::schema::CubeRegistry::new(vec![spec(dims)]).unwrap()
}

/// Every file under `dir`, relative path to bytes.
pub fn dir_bytes(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
