//! On-disk form of one cube index.
//!
//! ```text
//! <dir>/manifest          sha256 of the body, newline, JSON body
//! <dir>/postings-NNN.json one per axis, in schema order
//! <dir>/doc_tags.json
//! <dir>/embeddings.bin    optional
//! ```
//!
//! All JSON is written with sorted keys and sorted id sets, so the same index
//! always produces the same bytes. Every file's digest is recorded in the
//! manifest and checked on load.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CubeIndex, DimensionTags, IndexError, ValueEmbeddings};
use crate::schema::CubeSpec;

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest";
const DOC_TAGS: &str = "doc_tags.json";
const EMBEDDINGS: &str = "embeddings.bin";
const EMBED_MAGIC: &[u8; 4] = b"CRVE";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    cube: String,
    spec: CubeSpec,
    dimensions: Vec<DimensionFile>,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DimensionFile {
    name: String,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct PostingsFile {
    dimension: String,
    values: BTreeMap<String, BTreeSet<String>>,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(file: &str, reason: impl Into<String>) -> IndexError {
    IndexError::Corrupt {
        file: file.to_string(),
        reason: reason.into(),
    }
}

fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec(value).expect("index types serialize");
    bytes.push(b'\n');
    bytes
}

/// Writes `body` preceded by its own digest.
pub(crate) fn checksummed(body: &[u8]) -> Vec<u8> {
    let mut out = sha256_hex(body).into_bytes();
    out.push(b'\n');
    out.extend_from_slice(body);
    out
}

/// Splits and verifies a [`checksummed`] file.
pub(crate) fn verify_checksummed<'a>(file: &str, raw: &'a [u8]) -> Result<&'a [u8], IndexError> {
    let nl = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt(file, "missing checksum line"))?;
    let (head, body) = (&raw[..nl], &raw[nl + 1..]);
    if head != sha256_hex(body).as_bytes() {
        return Err(corrupt(file, "checksum mismatch"));
    }
    Ok(body)
}

fn encode_embeddings(emb: &ValueEmbeddings) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + emb.len() * (emb.dim() * 4 + 24));
    out.extend_from_slice(EMBED_MAGIC);
    out.extend_from_slice(&(emb.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(emb.len() as u32).to_le_bytes());
    for (value, v) in emb.iter() {
        out.extend_from_slice(&(value.len() as u32).to_le_bytes());
        out.extend_from_slice(value.as_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(EMBEDDINGS, "unexpected end of data"))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn decode_embeddings(bytes: &[u8]) -> Result<ValueEmbeddings, IndexError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != EMBED_MAGIC {
        return Err(corrupt(EMBEDDINGS, "bad magic"));
    }
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut emb = ValueEmbeddings::new(dim);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let value = std::str::from_utf8(r.take(len)?)
            .map_err(|_| corrupt(EMBEDDINGS, "value is not UTF-8"))?
            .to_string();
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
        }
        // Stored vectors are already unit norm; keep the exact bits.
        emb.vectors.insert(value, v);
    }
    if r.pos != bytes.len() {
        return Err(corrupt(EMBEDDINGS, "trailing bytes"));
    }
    Ok(emb)
}

fn postings_file_name(i: usize) -> String {
    format!("postings-{i:03}.json")
}

impl CubeIndex {
    /// Writes the index into `dir`, replacing any index already there.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), IndexError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if name == MANIFEST || name == DOC_TAGS || name == EMBEDDINGS || name.starts_with("postings-") {
                fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }

        let mut files = BTreeMap::new();
        let mut write = |name: &str, bytes: Vec<u8>| -> Result<(), IndexError> {
            let path = dir.join(name);
            fs::write(&path, &bytes).map_err(io_err(&path))?;
            files.insert(name.to_string(), sha256_hex(&bytes));
            Ok(())
        };

        let mut dimensions = Vec::new();
        for (i, axis) in self.spec.axes().enumerate() {
            let file = postings_file_name(i);
            let postings = PostingsFile {
                dimension: axis.name.clone(),
                values: self.postings.get(&axis.name).cloned().unwrap_or_default(),
            };
            write(&file, canonical_json(&postings))?;
            dimensions.push(DimensionFile {
                name: axis.name.clone(),
                file,
            });
        }
        write(DOC_TAGS, canonical_json(&self.doc_tags))?;
        if let Some(emb) = &self.embeddings {
            write(EMBEDDINGS, encode_embeddings(emb))?;
        }

        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            cube: self.spec.name.clone(),
            spec: self.spec.clone(),
            dimensions,
            files,
        };
        let path = dir.join(MANIFEST);
        fs::write(&path, checksummed(&canonical_json(&manifest))).map_err(io_err(&path))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, IndexError> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<Vec<u8>, IndexError> {
            let path = dir.join(name);
            fs::read(&path).map_err(io_err(&path))
        };
        let raw = read(MANIFEST)?;
        let body = verify_checksummed(MANIFEST, &raw)?;
        let head: serde_json::Value =
            serde_json::from_slice(body).map_err(|e| corrupt(MANIFEST, e.to_string()))?;
        let found = head
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| corrupt(MANIFEST, "missing format_version"))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(IndexError::VersionMismatch {
                found: found as u32,
                expected: FORMAT_VERSION,
            });
        }
        let manifest: Manifest =
            serde_json::from_value(head).map_err(|e| corrupt(MANIFEST, e.to_string()))?;

        let read_checked = |name: &str| -> Result<Vec<u8>, IndexError> {
            let expected = manifest
                .files
                .get(name)
                .ok_or_else(|| corrupt(MANIFEST, format!("{name} not listed")))?;
            let bytes = read(name)?;
            if sha256_hex(&bytes) != *expected {
                return Err(corrupt(name, "checksum mismatch"));
            }
            Ok(bytes)
        };

        let mut index = CubeIndex::new(manifest.spec.clone());
        let axes: Vec<&str> = manifest.spec.axes().map(|d| d.name.as_str()).collect();
        let listed: Vec<&str> = manifest.dimensions.iter().map(|d| d.name.as_str()).collect();
        if axes != listed {
            return Err(corrupt(MANIFEST, "dimension list disagrees with spec"));
        }
        for dim in &manifest.dimensions {
            let bytes = read_checked(&dim.file)?;
            let file: PostingsFile =
                serde_json::from_slice(&bytes).map_err(|e| corrupt(&dim.file, e.to_string()))?;
            if file.dimension != dim.name {
                return Err(corrupt(&dim.file, "dimension name mismatch"));
            }
            if !file.values.is_empty() {
                index.postings.insert(dim.name.clone(), file.values);
            }
        }
        let bytes = read_checked(DOC_TAGS)?;
        index.doc_tags = serde_json::from_slice::<BTreeMap<String, DimensionTags>>(&bytes)
            .map_err(|e| corrupt(DOC_TAGS, e.to_string()))?;
        if manifest.files.contains_key(EMBEDDINGS) {
            index.embeddings = Some(decode_embeddings(&read_checked(EMBEDDINGS)?)?);
        }
        index
            .check_consistency()
            .map_err(|reason| corrupt(DOC_TAGS, reason))?;
        Ok(index)
    }
}
