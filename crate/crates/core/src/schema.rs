//! Ontology and cube schemas.
//!
//! A cube is one subject axis plus the salient attribute and relation axes of
//! its class. Schemas are authored as JSON:
//!
//! ```json
//! {"cubes": [{"name": "PERSON", "dimensions": [
//!     {"name": "person_name", "kind": "subject", "description": "...", "examples": ["..."]},
//!     {"name": "nationality", "kind": "attribute", "salient": false}
//! ]}]}
//! ```
//!
//! `salient` defaults to true. Non-salient dimensions are kept in the schema
//! but are not cube axes: they are never tagged, indexed or matched.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::llm::{self, ChatBackend, ChatRequest, LlmError};
use crate::prompts;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot read schema {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema is not valid JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("cube {cube}: {reason}")]
    InvalidCube { cube: String, reason: String },
    #[error("duplicate cube name {0:?}")]
    DuplicateCube(String),
    #[error("registry must declare at least one cube")]
    EmptyRegistry,
    #[error("unknown cube {0:?}")]
    UnknownCube(String),
    #[error("cannot disable every cube")]
    AllCubesDisabled,
    #[error("backend failed: {0}")]
    Backend(#[from] LlmError),
    #[error("cannot parse ontology reply at line {line}: {reason}\n--- reply ---\n{raw}")]
    OntologyParse {
        line: usize,
        reason: String,
        raw: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimensionKind {
    Subject,
    Attribute,
    Relation,
}

impl fmt::Display for DimensionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DimensionKind::Subject => "subject",
            DimensionKind::Attribute => "attribute",
            DimensionKind::Relation => "relation",
        })
    }
}

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionSpec {
    pub name: String,
    pub kind: DimensionKind,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<String>,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub salient: bool,
}

impl DimensionSpec {
    pub fn new(name: impl Into<String>, kind: DimensionKind) -> Self {
        Self {
            name: name.into(),
            kind,
            description: String::new(),
            examples: Vec::new(),
            salient: true,
        }
    }

    pub fn subject(name: impl Into<String>) -> Self {
        Self::new(name, DimensionKind::Subject)
    }

    pub fn attribute(name: impl Into<String>) -> Self {
        Self::new(name, DimensionKind::Attribute)
    }

    pub fn relation(name: impl Into<String>) -> Self {
        Self::new(name, DimensionKind::Relation)
    }

    pub fn describe(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn examples<I, S>(mut self, examples: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.examples = examples.into_iter().map(Into::into).collect();
        self
    }

    pub fn non_salient(mut self) -> Self {
        self.salient = false;
        self
    }
}

/// Schema of one subject-class cube.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CubeFile", into = "CubeFile")]
pub struct CubeSpec {
    pub name: String,
    pub subject: DimensionSpec,
    pub attributes: Vec<DimensionSpec>,
    pub relations: Vec<DimensionSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CubeFile {
    name: String,
    dimensions: Vec<DimensionSpec>,
}

impl TryFrom<CubeFile> for CubeSpec {
    type Error = SchemaError;

    fn try_from(file: CubeFile) -> Result<Self, Self::Error> {
        CubeSpec::from_dimensions(file.name, file.dimensions)
    }
}

impl From<CubeSpec> for CubeFile {
    fn from(spec: CubeSpec) -> Self {
        let mut dimensions = vec![spec.subject];
        dimensions.extend(spec.attributes);
        dimensions.extend(spec.relations);
        CubeFile {
            name: spec.name,
            dimensions,
        }
    }
}

impl CubeSpec {
    /// Splits a flat dimension list by kind and validates it.
    pub fn from_dimensions(
        name: impl Into<String>,
        dimensions: Vec<DimensionSpec>,
    ) -> Result<Self, SchemaError> {
        let name = name.into();
        let invalid = |reason: String| SchemaError::InvalidCube {
            cube: name.clone(),
            reason,
        };
        if name.trim().is_empty() {
            return Err(invalid("cube name is empty".into()));
        }
        let mut subject = None;
        let mut attributes = Vec::new();
        let mut relations = Vec::new();
        for dim in dimensions {
            match dim.kind {
                DimensionKind::Subject if subject.is_some() => {
                    return Err(invalid("declares more than one subject dimension".into()))
                }
                DimensionKind::Subject => subject = Some(dim),
                DimensionKind::Attribute => attributes.push(dim),
                DimensionKind::Relation => relations.push(dim),
            }
        }
        let subject = subject.ok_or_else(|| invalid("has no subject dimension".into()))?;
        let spec = CubeSpec {
            name: name.clone(),
            subject,
            attributes,
            relations,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let invalid = |reason: String| SchemaError::InvalidCube {
            cube: self.name.clone(),
            reason,
        };
        if self.subject.kind != DimensionKind::Subject {
            return Err(invalid("subject dimension has the wrong kind".into()));
        }
        if !self.subject.salient {
            return Err(invalid("the subject dimension is always an axis".into()));
        }
        if let Some(d) = self.attributes.iter().find(|d| d.kind != DimensionKind::Attribute) {
            return Err(invalid(format!("{:?} is listed as an attribute", d.name)));
        }
        if let Some(d) = self.relations.iter().find(|d| d.kind != DimensionKind::Relation) {
            return Err(invalid(format!("{:?} is listed as a relation", d.name)));
        }
        let mut seen = HashSet::new();
        for dim in self.dimensions() {
            if dim.name.trim().is_empty() {
                return Err(invalid("dimension with empty name".into()));
            }
            if !seen.insert(dim.name.as_str()) {
                return Err(invalid(format!("duplicate dimension {:?}", dim.name)));
            }
        }
        Ok(())
    }

    /// Every declared dimension, salient or not.
    pub fn dimensions(&self) -> impl Iterator<Item = &DimensionSpec> {
        std::iter::once(&self.subject)
            .chain(&self.attributes)
            .chain(&self.relations)
    }

    /// The cube's axes: the subject plus salient attributes and relations.
    pub fn axes(&self) -> impl Iterator<Item = &DimensionSpec> {
        std::iter::once(&self.subject).chain(
            self.attributes
                .iter()
                .chain(&self.relations)
                .filter(|d| d.salient),
        )
    }

    pub fn axis(&self, name: &str) -> Option<&DimensionSpec> {
        self.axes().find(|d| d.name == name)
    }

    /// Axis named `key`, falling back to a match on normalized names so
    /// model replies like "Genre" or " genre " still resolve.
    pub fn resolve_axis(&self, key: &str) -> Option<&DimensionSpec> {
        self.axis(key).or_else(|| {
            let wanted = crate::normalize::normalize_value(key);
            self.axes()
                .find(|d| crate::normalize::normalize_value(&d.name) == wanted)
        })
    }

    pub fn has_axis(&self, name: &str) -> bool {
        self.axis(name).is_some()
    }

    /// `1 + G + L`.
    pub fn dimensionality(&self) -> usize {
        self.axes().count()
    }
}

/// Declared cubes in file order. The names are the router's vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RegistryFile", into = "RegistryFile")]
pub struct CubeRegistry {
    cubes: Vec<CubeSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    cubes: Vec<CubeSpec>,
}

impl TryFrom<RegistryFile> for CubeRegistry {
    type Error = SchemaError;

    fn try_from(file: RegistryFile) -> Result<Self, Self::Error> {
        CubeRegistry::new(file.cubes)
    }
}

impl From<CubeRegistry> for RegistryFile {
    fn from(reg: CubeRegistry) -> Self {
        RegistryFile { cubes: reg.cubes }
    }
}

impl CubeRegistry {
    pub fn new(cubes: Vec<CubeSpec>) -> Result<Self, SchemaError> {
        if cubes.is_empty() {
            return Err(SchemaError::EmptyRegistry);
        }
        let mut seen = HashSet::new();
        for cube in &cubes {
            cube.validate()?;
            if !seen.insert(cube.name.as_str()) {
                return Err(SchemaError::DuplicateCube(cube.name.clone()));
            }
        }
        Ok(Self { cubes })
    }

    pub fn from_json(raw: &str) -> Result<Self, SchemaError> {
        if raw.trim().is_empty() {
            return Err(SchemaError::EmptyRegistry);
        }
        // Go through serde_json::Value so validation errors keep their type
        // instead of being flattened into a syntax error.
        let file: serde_json::Value = serde_json::from_str(raw)?;
        let cubes = file
            .get("cubes")
            .cloned()
            .ok_or(SchemaError::EmptyRegistry)?;
        let cubes: Vec<CubeFile> = serde_json::from_value(cubes)?;
        let cubes = cubes
            .into_iter()
            .map(CubeSpec::try_from)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(cubes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|source| SchemaError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&raw)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SchemaError> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|source| SchemaError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn get(&self, name: &str) -> Option<&CubeSpec> {
        self.cubes.iter().find(|c| c.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.cubes.iter().map(|c| c.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &CubeSpec> {
        self.cubes.iter()
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// Registry with the named cubes removed, for ablation runs.
    pub fn without<'a>(
        &self,
        disabled: impl IntoIterator<Item = &'a str>,
    ) -> Result<CubeRegistry, SchemaError> {
        let disabled: HashSet<&str> = disabled.into_iter().collect();
        if let Some(unknown) = disabled.iter().find(|n| !self.contains(n)) {
            return Err(SchemaError::UnknownCube(unknown.to_string()));
        }
        let cubes: Vec<CubeSpec> = self
            .cubes
            .iter()
            .filter(|c| !disabled.contains(c.name.as_str()))
            .cloned()
            .collect();
        if cubes.is_empty() {
            return Err(SchemaError::AllCubesDisabled);
        }
        Ok(Self { cubes })
    }
}

/// One semantic class with its full (pre-salience) schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyClass {
    pub name: String,
    /// Example subject instances named alongside the class, if any.
    pub subjects: Vec<String>,
    pub attribute_types: Vec<String>,
    pub relation_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ontology {
    pub classes: Vec<OntologyClass>,
}

impl Ontology {
    /// Parses a two-level tree reply:
    ///
    /// ```text
    /// Level 1: Culture Product (film, song)
    /// Level 2: genre, release date
    /// Level 2: Relations: directed by, produced by
    /// ```
    ///
    /// Numbering, bullets, bold markers and indentation are tolerated. A
    /// Level 2 line labelled "attribute"/"relation" goes to that list;
    /// unlabelled lines go to attributes first and relations afterwards.
    /// Only names present in the reply are produced.
    pub fn parse_reply(raw: &str) -> Result<Ontology, SchemaError> {
        let fail = |line: usize, reason: &str| SchemaError::OntologyParse {
            line,
            reason: reason.to_string(),
            raw: raw.to_string(),
        };
        let mut classes: Vec<OntologyClass> = Vec::new();
        let mut unlabelled_seen = 0usize;
        for (i, line) in raw.lines().enumerate() {
            let lineno = i + 1;
            let Some((level, body)) = split_level(line) else {
                continue;
            };
            let body = body.as_str();
            match level {
                1 => {
                    let (name, subjects) = split_subjects(body);
                    if name.is_empty() {
                        return Err(fail(lineno, "Level 1 line without a class name"));
                    }
                    if classes.iter().any(|c| c.name == name) {
                        return Err(fail(lineno, "class declared twice"));
                    }
                    classes.push(OntologyClass {
                        name,
                        subjects,
                        attribute_types: Vec::new(),
                        relation_types: Vec::new(),
                    });
                    unlabelled_seen = 0;
                }
                _ => {
                    let Some(class) = classes.last_mut() else {
                        return Err(fail(lineno, "Level 2 line before any Level 1 line"));
                    };
                    let (label, items) = split_label(body);
                    let items = split_items(items);
                    let to_relations = match label {
                        Some(Label::Attributes) => false,
                        Some(Label::Relations) => true,
                        None => {
                            unlabelled_seen += 1;
                            unlabelled_seen > 1
                        }
                    };
                    let target = if to_relations {
                        &mut class.relation_types
                    } else {
                        &mut class.attribute_types
                    };
                    for item in items {
                        if !target.contains(&item) {
                            target.push(item);
                        }
                    }
                }
            }
        }
        if classes.is_empty() {
            return Err(fail(1, "no Level 1 line found"));
        }
        Ok(Ontology { classes })
    }

    /// First-draft cube specs: one cube per class, every type salient. Meant
    /// to be reviewed and committed as a schema file.
    pub fn draft_cube_specs(&self) -> Result<CubeRegistry, SchemaError> {
        let cubes = self
            .classes
            .iter()
            .map(|class| {
                let cube_name = identifier(&class.name).to_uppercase();
                let mut dims = vec![DimensionSpec::subject(format!("{}_name", identifier(&class.name)))
                    .describe(format!("names of {}", class.name.to_lowercase()))
                    .examples(class.subjects.clone())];
                let mut seen: HashSet<String> = dims.iter().map(|d| d.name.clone()).collect();
                for (kind, types) in [
                    (DimensionKind::Attribute, &class.attribute_types),
                    (DimensionKind::Relation, &class.relation_types),
                ] {
                    for t in types {
                        let name = identifier(t);
                        if name.is_empty() || !seen.insert(name.clone()) {
                            continue;
                        }
                        dims.push(DimensionSpec::new(name, kind).describe(t.clone()));
                    }
                }
                CubeSpec::from_dimensions(cube_name, dims)
            })
            .collect::<Result<Vec<_>, _>>()?;
        CubeRegistry::new(cubes)
    }
}

/// Asks the backend for an ontology over `sample` and parses the reply.
pub fn draft_ontology(sample: &[Document], chat: &dyn ChatBackend) -> Result<Ontology, SchemaError> {
    if sample.is_empty() {
        return Err(SchemaError::OntologyParse {
            line: 0,
            reason: "empty document sample".into(),
            raw: String::new(),
        });
    }
    let req = ChatRequest::new(prompts::ontology_prompt(sample)).with_max_tokens(1024);
    let reply = llm::complete(chat, &req)?;
    Ontology::parse_reply(&reply.text)
}

enum Label {
    Attributes,
    Relations,
}

fn strip_decoration(line: &str) -> &str {
    let mut s = line.trim();
    loop {
        let before = s;
        s = s.trim_start_matches(['-', '*', '#', '>', '•']).trim_start();
        let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits > 0 && s[digits..].starts_with(['.', ')']) {
            s = s[digits + 1..].trim_start();
        }
        s = s.trim_end_matches('*').trim_end();
        if s == before {
            return s;
        }
    }
}

fn split_level(line: &str) -> Option<(u8, String)> {
    let cleaned = line.replace("**", "");
    let s = strip_decoration(&cleaned);
    let lower = s.to_ascii_lowercase();
    let rest = lower.strip_prefix("level")?.trim_start();
    let level = match rest.chars().next()? {
        '1' => 1,
        '2' => 2,
        _ => return None,
    };
    // to_ascii_lowercase keeps byte offsets aligned with `s`
    let offset = s.len() - rest.len() + 1;
    let body = s[offset..].trim_start().trim_start_matches([':', '-', '.']).trim();
    Some((level, body.to_string()))
}

fn split_subjects(body: &str) -> (String, Vec<String>) {
    match (body.find('('), body.rfind(')')) {
        (Some(open), Some(close)) if open < close => (
            body[..open].trim().to_string(),
            split_items(&body[open + 1..close]),
        ),
        _ => (body.trim().to_string(), Vec::new()),
    }
}

fn split_label(body: &str) -> (Option<Label>, &str) {
    if let Some((head, tail)) = body.split_once(':') {
        let head = head.trim().to_ascii_lowercase();
        if head.starts_with("attribute") {
            return (Some(Label::Attributes), tail);
        }
        if head.starts_with("relation") {
            return (Some(Label::Relations), tail);
        }
    }
    (None, body)
}

fn split_items(s: &str) -> Vec<String> {
    s.split([',', ';'])
        .map(|t| t.trim().trim_matches(['.', '*']).trim())
        .filter(|t| !t.is_empty() && *t != "..." && *t != "\u{2026}")
        .map(str::to_string)
        .collect()
}

fn identifier(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.is_empty() && !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;
    use proptest::prelude::*;

    pub(crate) fn two_cube_registry() -> CubeRegistry {
        CubeRegistry::new(vec![
            CubeSpec::from_dimensions(
                "CULTURAL_PRODUCT",
                vec![
                    DimensionSpec::subject("cultural_product_name").describe("films, songs, books"),
                    DimensionSpec::attribute("genre"),
                    DimensionSpec::relation("relation (to person)"),
                ],
            )
            .unwrap(),
            CubeSpec::from_dimensions(
                "PERSON",
                vec![
                    DimensionSpec::subject("person_name").describe("people"),
                    DimensionSpec::attribute("birth_date"),
                ],
            )
            .unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn dimensionality_examples() {
        let bare = CubeSpec::from_dimensions("X", vec![DimensionSpec::subject("name")]).unwrap();
        assert_eq!(bare.dimensionality(), 1);

        let film = CubeSpec::from_dimensions(
            "FILM",
            vec![
                DimensionSpec::subject("name"),
                DimensionSpec::attribute("genre"),
                DimensionSpec::attribute("date"),
                DimensionSpec::relation("to-person"),
            ],
        )
        .unwrap();
        assert_eq!(film.dimensionality(), 4);

        // Person cube as inventoried: name + occupation, behavior,
        // nationality + relation to location, relation to product.
        let person = CubeSpec::from_dimensions(
            "PERSON",
            vec![
                DimensionSpec::subject("person_name"),
                DimensionSpec::attribute("role_and_occupation"),
                DimensionSpec::attribute("behavior"),
                DimensionSpec::attribute("nationality"),
                DimensionSpec::relation("relation (to location)"),
                DimensionSpec::relation("relation (to product)"),
            ],
        )
        .unwrap();
        assert_eq!(person.dimensionality(), 6);
    }

    #[test]
    fn non_salient_types_are_not_axes() {
        let spec = CubeSpec::from_dimensions(
            "LOCATION",
            vec![
                DimensionSpec::subject("location_name"),
                DimensionSpec::attribute("time_zone").non_salient(),
                DimensionSpec::attribute("location_type"),
                DimensionSpec::relation("capital_of").non_salient(),
            ],
        )
        .unwrap();
        assert_eq!(spec.dimensionality(), 2);
        assert!(!spec.has_axis("time_zone"));
        assert_eq!(spec.dimensions().count(), 4);
    }

    #[test]
    fn rejects_bad_cubes() {
        let two_subjects = r#"{"cubes":[{"name":"BAD","dimensions":[
            {"name":"a","kind":"subject"},{"name":"b","kind":"subject"}]}]}"#;
        match CubeRegistry::from_json(two_subjects) {
            Err(SchemaError::InvalidCube { cube, .. }) => assert_eq!(cube, "BAD"),
            other => panic!("{other:?}"),
        }
        let no_subject = r#"{"cubes":[{"name":"NOSUBJ","dimensions":[{"name":"a","kind":"attribute"}]}]}"#;
        assert!(matches!(
            CubeRegistry::from_json(no_subject),
            Err(SchemaError::InvalidCube { ref cube, .. }) if cube == "NOSUBJ"
        ));
        let dup_dim = r#"{"cubes":[{"name":"D","dimensions":[
            {"name":"a","kind":"subject"},{"name":"a","kind":"attribute"}]}]}"#;
        assert!(matches!(CubeRegistry::from_json(dup_dim), Err(SchemaError::InvalidCube { .. })));
        let dup_cube = r#"{"cubes":[
            {"name":"D","dimensions":[{"name":"a","kind":"subject"}]},
            {"name":"D","dimensions":[{"name":"b","kind":"subject"}]}]}"#;
        assert!(matches!(CubeRegistry::from_json(dup_cube), Err(SchemaError::DuplicateCube(_))));
        assert!(matches!(CubeRegistry::from_json(""), Err(SchemaError::EmptyRegistry)));
        assert!(matches!(CubeRegistry::from_json(r#"{"cubes":[]}"#), Err(SchemaError::EmptyRegistry)));
    }

    #[test]
    fn shipped_wiki_schema_has_three_cubes() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/schemas/2wikiqa.json");
        let reg = CubeRegistry::load(path).unwrap();
        let names: Vec<_> = reg.names().collect();
        assert_eq!(names, ["CULTURAL_PRODUCT", "PERSON", "LOCATION"]);
        assert_eq!(reg.get("PERSON").unwrap().dimensionality(), 6);
        assert_eq!(CubeRegistry::load(path).unwrap(), reg);
    }

    #[test]
    fn shipped_schemas_load() {
        for (file, count) in [("2wikiqa.json", 3), ("musique.json", 4), ("hotpotqa.json", 10)] {
            let path = format!("{}/schemas/{file}", env!("CARGO_MANIFEST_DIR"));
            let reg = CubeRegistry::load(&path).unwrap_or_else(|e| panic!("{file}: {e}"));
            assert_eq!(reg.len(), count, "{file}");
        }
    }

    #[test]
    fn ablation_filter() {
        let reg = two_cube_registry();
        let only_person = reg.without(["CULTURAL_PRODUCT"]).unwrap();
        assert_eq!(only_person.names().collect::<Vec<_>>(), ["PERSON"]);
        assert!(matches!(
            reg.without(["CULTURAL_PRODUCT", "PERSON"]),
            Err(SchemaError::AllCubesDisabled)
        ));
        assert!(matches!(reg.without(["NOPE"]), Err(SchemaError::UnknownCube(_))));
    }

    const TWO_CLASS_REPLY: &str = "\
Here is the ontology:

1. **Level 1: Culture Product** (film, song)
   - Level 2: Attributes: genre, release date, rating
   - Level 2: Relations: directed by, produced by, performed by
2. Level 1: Person
   Level 2: occupation, nationality
   Level 2: born in, directed
";

    #[test]
    fn parses_two_class_tree() {
        let ont = Ontology::parse_reply(TWO_CLASS_REPLY).unwrap();
        assert_eq!(ont.classes.len(), 2);
        let cp = &ont.classes[0];
        assert_eq!(cp.name, "Culture Product");
        assert_eq!(cp.subjects, ["film", "song"]);
        assert_eq!(cp.attribute_types, ["genre", "release date", "rating"]);
        assert_eq!(cp.relation_types, ["directed by", "produced by", "performed by"]);
        let person = &ont.classes[1];
        assert_eq!(person.name, "Person");
        assert!(person.subjects.is_empty());
        assert_eq!(person.attribute_types, ["occupation", "nationality"]);
        assert_eq!(person.relation_types, ["born in", "directed"]);
    }

    #[test]
    fn draft_ontology_via_scripted_backend() {
        let chat = ScriptedBackend::new(vec![]).with_default(TWO_CLASS_REPLY);
        let docs = [Document::new("d", "some text")];
        let ont = draft_ontology(&docs, &chat).unwrap();
        assert_eq!(ont, Ontology::parse_reply(TWO_CLASS_REPLY).unwrap());

        let reg = ont.draft_cube_specs().unwrap();
        assert_eq!(reg.names().collect::<Vec<_>>(), ["CULTURE_PRODUCT", "PERSON"]);
        let cp = reg.get("CULTURE_PRODUCT").unwrap();
        assert_eq!(cp.subject.name, "culture_product_name");
        assert_eq!(cp.dimensionality(), 7);
        assert!(cp.has_axis("directed_by"));
    }

    #[test]
    fn malformed_ontology_replies() {
        let empty = ScriptedBackend::new(vec![]).with_default("");
        let docs = [Document::new("d", "x")];
        assert!(matches!(
            draft_ontology(&docs, &empty),
            Err(SchemaError::OntologyParse { .. })
        ));
        match Ontology::parse_reply("Level 2: genre\nLevel 1: Film") {
            Err(SchemaError::OntologyParse { line, raw, .. }) => {
                assert_eq!(line, 1);
                assert!(raw.contains("Level 2: genre"));
            }
            other => panic!("{other:?}"),
        }
        assert!(draft_ontology(&[], &empty).is_err());
    }

    fn arb_dim(kind: DimensionKind) -> impl Strategy<Value = DimensionSpec> {
        ("[a-z]{1,8}", any::<bool>(), proptest::collection::vec("[a-z ]{0,6}", 0..3)).prop_map(
            move |(name, salient, examples)| {
                let mut d = DimensionSpec::new(name, kind).examples(examples);
                d.salient = salient;
                d
            },
        )
    }

    fn arb_spec() -> impl Strategy<Value = CubeSpec> {
        (
            proptest::collection::vec(arb_dim(DimensionKind::Attribute), 0..6),
            proptest::collection::vec(arb_dim(DimensionKind::Relation), 0..6),
        )
            .prop_map(|(attrs, rels)| {
                let mut dims = vec![DimensionSpec::subject("subject")];
                let mut seen = HashSet::from(["subject".to_string()]);
                for (i, mut d) in attrs.into_iter().chain(rels).enumerate() {
                    d.name = format!("{}_{i}", d.name);
                    if seen.insert(d.name.clone()) {
                        dims.push(d);
                    }
                }
                CubeSpec::from_dimensions("CUBE", dims).unwrap()
            })
    }

    proptest! {
        #[test]
        fn dimensionality_counts_salient_axes(spec in arb_spec()) {
            let salient_attrs = spec.attributes.iter().filter(|d| d.salient).count();
            let salient_rels = spec.relations.iter().filter(|d| d.salient).count();
            prop_assert_eq!(spec.dimensionality(), 1 + salient_attrs + salient_rels);
        }

        #[test]
        fn registry_json_round_trips(spec in arb_spec()) {
            let reg = CubeRegistry::new(vec![spec]).unwrap();
            let again = CubeRegistry::from_json(&reg.to_json()).unwrap();
            prop_assert_eq!(again, reg);
        }

        #[test]
        fn ontology_parser_only_extracts(names in proptest::collection::btree_set("[A-Z][a-z]{2,8}", 1..5)) {
            let reply: String = names
                .iter()
                .map(|n| format!("Level 1: {n}\nLevel 2: a{n}\nLevel 2: r{n}\n"))
                .collect();
            let ont = Ontology::parse_reply(&reply).unwrap();
            prop_assert_eq!(ont.classes.len(), names.len());
            for class in &ont.classes {
                prop_assert!(names.contains(&class.name));
                prop_assert_eq!(&class.attribute_types, &vec![format!("a{}", class.name)]);
                prop_assert_eq!(&class.relation_types, &vec![format!("r{}", class.name)]);
            }
        }
    }
}
