//! Flattening of JSON trees into path → value records.
//!
//! Every leaf of a JSON document becomes one entry keyed by the canonical
//! text of its root-to-leaf path. Object keys are joined with `.`, array
//! positions are written as zero-based `[i]` suffixes, and key characters
//! that would collide with that syntax (`.`, `[`, `]`, `\`) are escaped with
//! a backslash:
//!
//! ```text
//! {"Indicators": [{"Item Name": "WBC"}], "a.b": 1}
//!   -> {"Indicators[0].Item Name": "WBC", "a\\.b": "1"}
//! ```
//!
//! A scalar at the document root is stored under the empty path and reads
//! back as the empty key, since parsed paths always begin with a key.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlattenError {
    #[error("path conflict at `{0}`: a path is both a leaf and a container")]
    PathConflict(String),
    #[error("malformed flat path `{path}`: {reason}")]
    InvalidPath { path: String, reason: &'static str },
}

/// One step of a root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Segment {
    Key(String),
    Index(usize),
}

/// A root-to-leaf path through a JSON tree.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlatPath(pub Vec<Segment>);

impl FlatPath {
    pub fn segments(&self) -> &[Segment] {
        &self.0
    }

    /// The first object key on the path, if the path starts with one.
    pub fn head_key(&self) -> Option<&str> {
        match self.0.first() {
            Some(Segment::Key(k)) => Some(k),
            _ => None,
        }
    }

    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (i, seg) in self.0.iter().enumerate() {
            match seg {
                Segment::Key(k) => {
                    if i > 0 {
                        out.push('.');
                    }
                    for c in k.chars() {
                        if matches!(c, '.' | '[' | ']' | '\\') {
                            out.push('\\');
                        }
                        out.push(c);
                    }
                }
                Segment::Index(idx) => {
                    out.push('[');
                    out.push_str(&idx.to_string());
                    out.push(']');
                }
            }
        }
        out
    }

    /// Parses the canonical text form produced by [`FlatPath::canonical`].
    /// Every path starts with an object key, possibly empty: a root scalar
    /// or root array comes back wrapped as `{"": ...}`.
    pub fn parse(text: &str) -> Result<Self, FlattenError> {
        let bad = |reason| FlattenError::InvalidPath {
            path: text.to_owned(),
            reason,
        };
        let mut segs = Vec::new();
        let mut chars = text.chars().peekable();
        let mut expect_key = true;
        loop {
            if expect_key {
                let mut key = String::new();
                while let Some(&c) = chars.peek() {
                    match c {
                        '\\' => {
                            chars.next();
                            match chars.next() {
                                Some(e) => key.push(e),
                                None => return Err(bad("dangling escape")),
                            }
                        }
                        '.' | '[' => break,
                        ']' => return Err(bad("unbalanced `]`")),
                        _ => {
                            key.push(c);
                            chars.next();
                        }
                    }
                }
                segs.push(Segment::Key(key));
                expect_key = false;
            }
            match chars.next() {
                None => break,
                Some('.') => expect_key = true,
                Some('[') => {
                    let mut digits = String::new();
                    loop {
                        match chars.next() {
                            Some(']') => break,
                            Some(d) if d.is_ascii_digit() => digits.push(d),
                            _ => return Err(bad("array index must be `[digits]`")),
                        }
                    }
                    let idx = digits.parse().map_err(|_| bad("empty array index"))?;
                    segs.push(Segment::Index(idx));
                }
                Some(_) => return Err(bad("unexpected character after segment")),
            }
        }
        Ok(FlatPath(segs))
    }
}

impl fmt::Display for FlatPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlattenPolicy {
    /// Drop leaves whose normalized value is the empty string.
    pub drop_empty: bool,
}

impl Default for FlattenPolicy {
    fn default() -> Self {
        FlattenPolicy { drop_empty: true }
    }
}

/// Flat, non-nested view of a JSON tree: canonical path → normalized value.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlatRecord {
    entries: BTreeMap<String, String>,
}

impl FlatRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, path: &str) -> Option<&str> {
        self.entries.get(path).map(String::as_str)
    }

    pub fn contains(&self, path: &str, value: &str) -> bool {
        self.get(path) == Some(value)
    }

    /// Inserts an entry, returning the previous value at that path.
    pub fn insert(&mut self, path: impl Into<String>, value: impl Into<String>) -> Option<String> {
        self.entries.insert(path.into(), value.into())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_json(&self) -> Value {
        Value::Object(
            self.entries
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect(),
        )
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for FlatRecord {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        FlatRecord {
            entries: iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}

/// Counts from comparing a prediction record against a gold record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub n_matched: usize,
    pub pred_size: usize,
    pub gold_size: usize,
}

/// Canonical string form of a JSON scalar: NFC-normalized and trimmed strings,
/// shortest round-trip numbers, and `""` for null.
pub fn normalize_value(raw: &Value) -> String {
    match raw {
        Value::Null => String::new(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.to_string()
            } else if let Some(u) = n.as_u64() {
                u.to_string()
            } else {
                // f64 Display is the shortest string that round-trips
                n.as_f64().map(|f| f.to_string()).unwrap_or_else(|| n.to_string())
            }
        }
        Value::String(s) => s.nfc().collect::<String>().trim().to_owned(),
        other => other.to_string(),
    }
}

pub fn flatten(tree: &Value, policy: FlattenPolicy) -> FlatRecord {
    let mut record = FlatRecord::new();
    let mut path = Vec::new();
    walk(tree, &mut path, policy, &mut record);
    record
}

fn walk(node: &Value, path: &mut Vec<Segment>, policy: FlattenPolicy, out: &mut FlatRecord) {
    match node {
        Value::Object(map) => {
            for (k, v) in map {
                path.push(Segment::Key(k.clone()));
                walk(v, path, policy, out);
                path.pop();
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                path.push(Segment::Index(i));
                walk(v, path, policy, out);
                path.pop();
            }
        }
        scalar => {
            let value = normalize_value(scalar);
            if policy.drop_empty && value.is_empty() {
                return;
            }
            let key = FlatPath(path.clone()).canonical();
            out.insert(key, value);
        }
    }
}

pub fn match_records(pred: &FlatRecord, gold: &FlatRecord) -> MatchResult {
    // iterate the smaller side
    let (small, large) = if pred.len() <= gold.len() { (pred, gold) } else { (gold, pred) };
    let n_matched = small.iter().filter(|(k, v)| large.contains(k, v)).count();
    MatchResult {
        n_matched,
        pred_size: pred.len(),
        gold_size: gold.len(),
    }
}

enum Node {
    Vacant,
    Leaf(String),
    Object(Vec<(String, Node)>),
    Array(BTreeMap<usize, Node>),
}

impl Node {
    fn into_value(self) -> Value {
        match self {
            Node::Vacant => Value::Null,
            Node::Leaf(s) => Value::String(s),
            Node::Object(members) => {
                let mut map = Map::new();
                for (k, v) in members {
                    map.insert(k, v.into_value());
                }
                Value::Object(map)
            }
            Node::Array(items) => {
                let len = items.keys().next_back().map_or(0, |&last| last + 1);
                let mut out = vec![Value::Null; len];
                for (i, v) in items {
                    out[i] = v.into_value();
                }
                Value::Array(out)
            }
        }
    }
}

/// Rebuilds a JSON tree from a flat record. Leaves come back as strings;
/// array positions missing from the record are filled with `null`. An empty
/// record yields `{}`.
pub fn unflatten(record: &FlatRecord) -> Result<Value, FlattenError> {
    let mut root = Node::Vacant;
    for (text, value) in record.iter() {
        let path = FlatPath::parse(text)?;
        let conflict = || FlattenError::PathConflict(text.to_owned());
        let mut node = &mut root;
        for seg in path.segments() {
            if let Node::Vacant = node {
                *node = match seg {
                    Segment::Key(_) => Node::Object(Vec::new()),
                    Segment::Index(_) => Node::Array(BTreeMap::new()),
                };
            }
            node = match (node, seg) {
                (Node::Object(members), Segment::Key(k)) => {
                    let pos = match members.iter().position(|(name, _)| name == k) {
                        Some(p) => p,
                        None => {
                            members.push((k.clone(), Node::Vacant));
                            members.len() - 1
                        }
                    };
                    &mut members[pos].1
                }
                (Node::Array(items), Segment::Index(i)) => items.entry(*i).or_insert(Node::Vacant),
                _ => return Err(conflict()),
            };
        }
        match node {
            Node::Vacant => *node = Node::Leaf(value.to_owned()),
            _ => return Err(conflict()),
        }
    }
    Ok(match root {
        Node::Vacant => Value::Object(Map::new()),
        other => other.into_value(),
    })
}
