//! Documents: tree-structured records with an owner, a visibility tag and a
//! freshness timestamp. The unit of all storage and exchange.
//!
//! The canonical serialization is UTF-8 JSON with object keys sorted
//! lexicographically at every level; subtrees are kept in `BTreeMap`s so the
//! sort order falls out of the representation and digests are bit-stable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::Tick;

/// A field tree: string keys mapped to scalars, lists or subtrees.
pub type FieldTree = BTreeMap<String, FieldValue>;

/// A single field value. Scalars are strings, 64-bit integers and booleans;
/// fractional quantities (traffic factors, scores) are carried as scaled
/// integers so canonical text and digests stay bit-identical across
/// platforms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Bool(bool),
    Int(i64),
    Str(String),
    List(Vec<FieldValue>),
    Tree(FieldTree),
}

impl FieldValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            FieldValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            FieldValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_tree(&self) -> Option<&FieldTree> {
        match self {
            FieldValue::Tree(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[FieldValue]> {
        match self {
            FieldValue::List(l) => Some(l),
            _ => None,
        }
    }
}

impl From<&str> for FieldValue {
    fn from(s: &str) -> Self {
        FieldValue::Str(s.to_string())
    }
}

impl From<String> for FieldValue {
    fn from(s: String) -> Self {
        FieldValue::Str(s)
    }
}

impl From<i64> for FieldValue {
    fn from(v: i64) -> Self {
        FieldValue::Int(v)
    }
}

impl From<u64> for FieldValue {
    fn from(v: u64) -> Self {
        FieldValue::Int(v as i64)
    }
}

impl From<bool> for FieldValue {
    fn from(v: bool) -> Self {
        FieldValue::Bool(v)
    }
}

/// Walk a dotted path ("a.b.c") into a field tree.
pub fn get_path<'a>(tree: &'a FieldTree, path: &str) -> Option<&'a FieldValue> {
    let mut parts = path.split('.');
    let first = parts.next()?;
    let mut cur = tree.get(first)?;
    for part in parts {
        cur = cur.as_tree()?.get(part)?;
    }
    Some(cur)
}

/// Insert a value at a dotted path, creating intermediate subtrees.
pub fn set_path(tree: &mut FieldTree, path: &str, value: FieldValue) {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("path is non-empty");
    let mut cur = tree;
    for part in parts {
        cur = match cur
            .entry(part.to_string())
            .or_insert_with(|| FieldValue::Tree(FieldTree::new()))
        {
            FieldValue::Tree(t) => t,
            other => {
                *other = FieldValue::Tree(FieldTree::new());
                match other {
                    FieldValue::Tree(t) => t,
                    _ => unreachable!(),
                }
            }
        };
    }
    cur.insert(last.to_string(), value);
}

/// Keep exactly the listed dotted paths of a tree, dropping everything else.
/// A path that names a subtree keeps the whole subtree.
pub fn project_paths(tree: &FieldTree, paths: &[String]) -> FieldTree {
    let mut out = FieldTree::new();
    for path in paths {
        if let Some(v) = get_path(tree, path) {
            set_path(&mut out, path, v.clone());
        }
    }
    out
}

/// Enumerate every leaf path of a tree in sorted order, dotted notation.
/// List elements are leaves of the list's own path.
pub fn leaf_paths(tree: &FieldTree) -> Vec<String> {
    fn walk(prefix: &str, v: &FieldValue, out: &mut Vec<String>) {
        match v {
            FieldValue::Tree(t) => {
                for (k, v) in t {
                    let p = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&p, v, out);
                }
            }
            _ => out.push(prefix.to_string()),
        }
    }
    let mut out = Vec::new();
    for (k, v) in tree {
        walk(k, v, &mut out);
    }
    out
}

/// True when `path` equals one of `shared` or descends from one
/// (sharing "a" shares "a.b" too).
pub fn path_is_covered(path: &str, shared: &[String]) -> bool {
    shared.iter().any(|s| {
        path == s || (path.len() > s.len() && path.starts_with(s.as_str()) && path.as_bytes()[s.len()] == b'.')
    })
}

/// Visibility of a document. Immutable after creation; confidential
/// documents of other actors never leave the frontend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Shared,
    Confidential,
}

/// A tree-structured record. `id` is unique within its collection on any
/// single node; `updated_at` never decreases across versions of the same id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub fields: FieldTree,
    pub owner: String,
    pub visibility: Visibility,
    pub updated_at: Tick,
}

impl Document {
    pub fn new(id: impl Into<String>, owner: impl Into<String>, updated_at: Tick) -> Self {
        Document {
            id: id.into(),
            fields: FieldTree::new(),
            owner: owner.into(),
            visibility: Visibility::Shared,
            updated_at,
        }
    }

    pub fn confidential(mut self) -> Self {
        self.visibility = Visibility::Confidential;
        self
    }

    pub fn with(mut self, path: &str, value: impl Into<FieldValue>) -> Self {
        set_path(&mut self.fields, path, value.into());
        self
    }

    /// The document as one sorted field tree, the basis of the canonical
    /// serialization.
    pub fn canonical_value(&self) -> FieldValue {
        let mut t = FieldTree::new();
        t.insert("fields".into(), FieldValue::Tree(self.fields.clone()));
        t.insert("id".into(), FieldValue::Str(self.id.clone()));
        t.insert("owner".into(), FieldValue::Str(self.owner.clone()));
        t.insert(
            "updated_at".into(),
            FieldValue::Int(self.updated_at as i64),
        );
        t.insert(
            "visibility".into(),
            FieldValue::Str(
                match self.visibility {
                    Visibility::Shared => "shared",
                    Visibility::Confidential => "confidential",
                }
                .into(),
            ),
        );
        FieldValue::Tree(t)
    }

    /// Canonical text form: compact JSON, keys sorted at every level.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.canonical_value()).expect("field trees always serialize")
    }
}

/// A 256-bit state digest, printable as hex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl std::fmt::Display for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Digest a sequence of (collection, id, canonical doc text) triples. The
/// caller feeds them in sorted order, so equal logical states digest equally
/// regardless of insertion history.
pub struct StateHasher(Sha256);

impl StateHasher {
    pub fn new() -> Self {
        StateHasher(Sha256::new())
    }

    pub fn record(&mut self, collection: &str, id: &str, canonical_doc: &str) {
        self.0.update(collection.as_bytes());
        self.0.update([0u8]);
        self.0.update(id.as_bytes());
        self.0.update([0u8]);
        self.0.update(canonical_doc.as_bytes());
        self.0.update([0u8]);
    }

    pub fn finish(self) -> Digest {
        Digest(self.0.finalize().into())
    }
}

impl Default for StateHasher {
    fn default() -> Self {
        Self::new()
    }
}
