//! Multi-cube document index and an iterative question-answering loop on
//! top of it.
//!
//! Documents are tagged once against a set of subject cubes ([`schema`]),
//! stored as sparse cells ([`index`]) and searched by exact or embedding
//! match ([`retriever`]). [`reasoning::Engine`] chains one-hop subqueries
//! over those cubes; [`eval`] scores it on question sets. Model calls go
//! through the traits in [`llm`], with scripted and HTTP implementations.
//!
//! ```
//! use cuberag::index::{CubeIndex, DimensionTags};
//! use cuberag::retriever::{retrieve, MatchMode, QueryDecomposition, RetrievalConfig};
//! use cuberag::schema::{CubeSpec, DimensionSpec};
//!
//! let spec = CubeSpec::from_dimensions(
//!     "FILM",
//!     vec![DimensionSpec::subject("title"), DimensionSpec::relation("directed_by")],
//! )
//! .unwrap();
//! let mut index = CubeIndex::new(spec);
//! index
//!     .insert_document("f1", DimensionTags::from_pairs([("title", "El Tonto"), ("directed_by", "Charlie Day")]))
//!     .unwrap();
//! let query = QueryDecomposition::new().with("directed_by", "charlie day");
//! let cfg = RetrievalConfig { mode: MatchMode::ExactOnly, ..Default::default() };
//! let hits = retrieve(&index, &query, &cfg, None).unwrap().hits;
//! assert_eq!(hits[0].doc_id, "f1");
//! ```

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod index;
pub mod llm;
pub mod normalize;
pub mod prompts;
pub mod reasoning;
pub mod retriever;
pub mod schema;
