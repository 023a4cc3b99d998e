//! Extraction schemas and query construction.
//!
//! A schema file is JSON with `//` line comments. Each key's description is
//! the comment on the line where the key appears:
//!
//! ```text
//! {
//!     "Name": "",  // Patient's name, output as empty if not available
//!     "Indicators": [  // Indicators of the examination items
//!         { "Item Name": "", "Result": "" }
//!     ]
//! }
//! ```
//!
//! Top-level keys must carry a comment. Nested keys (e.g. the columns of an
//! indicator table) may omit it and are then described by their own name.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::flatjson::{flatten, FlattenPolicy};

/// Schema listing for medical report extraction, 13 top-level fields.
pub const MEDICAL_SCHEMA: &str = include_str!("../schemas/medical.jsonc");
/// Five scalar fields; the default world of the toy environment.
pub const TOY_SCHEMA: &str = include_str!("../schemas/toy5.jsonc");

pub const FIELDS_PLACEHOLDER: &str = "{fields}";

pub const DEFAULT_TEMPLATE: &str = "\
Extract the following fields from the document image and answer in JSON.
Reason step by step inside <think></think>, then give the JSON object inside <answer></answer>.
Output a field as empty if it is not available.

{fields}
";

/// Resample attempts before giving up on a key subset with no gold values.
pub const MAX_RESAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("schema parse error: {0}")]
    SchemaParse(String),
    #[error("schema key `{0}` has no description comment")]
    MissingDescription(String),
    #[error("duplicate schema key `{0}`")]
    DuplicateKey(String),
    #[error("gold document must be a JSON object")]
    GoldNotObject,
    #[error("no non-empty gold values among the selected keys after {0} attempts")]
    EmptyGoldAfterRestriction(usize),
    #[error("prompt template lacks the `{FIELDS_PLACEHOLDER}` placeholder")]
    TemplateError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "children", rename_all = "snake_case")]
pub enum FieldKind {
    Scalar,
    Object(Vec<SchemaKey>),
    /// A table; the children describe the columns of each row. Empty for a
    /// list of scalars.
    List(Vec<SchemaKey>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaKey {
    pub name: String,
    pub description: String,
    pub kind: FieldKind,
}

impl SchemaKey {
    pub fn children(&self) -> &[SchemaKey] {
        match &self.kind {
            FieldKind::Scalar => &[],
            FieldKind::Object(c) | FieldKind::List(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub keys: Vec<SchemaKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// A random non-empty subset of top-level keys per query.
    #[default]
    Sampled,
    /// Every schema key; all queries share the same prompt.
    All,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sampled" => Ok(Strategy::Sampled),
            "all" => Ok(Strategy::All),
            other => Err(format!("unknown strategy `{other}` (expected `sampled` or `all`)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub selected_keys: Vec<SchemaKey>,
    pub prompt_text: String,
    pub gold_subset: Value,
}

impl Query {
    pub fn key_names(&self) -> impl Iterator<Item = &str> {
        self.selected_keys.iter().map(|k| k.name.as_str())
    }
}

// Key path from the root; array elements are transparent.
type KeyPath = Vec<String>;

enum Frame {
    Object {
        current: Option<String>,
        expecting_key: bool,
        seen: HashSet<String>,
    },
    Array,
}

struct Scanned {
    stripped: String,
    comments: HashMap<usize, String>,
    key_lines: HashMap<KeyPath, usize>,
}

/// Removes `//` comments and records, per line, the comment text and the
/// object keys that start on it.
fn scan(text: &str) -> Result<Scanned, SchemaError> {
    let mut stripped = String::with_capacity(text.len());
    let mut comments = HashMap::new();
    let mut key_lines = HashMap::new();
    let mut stack: Vec<Frame> = Vec::new();

    for (line_no, line) in text.lines().enumerate() {
        let mut chars = line.char_indices().peekable();
        while let Some((pos, c)) = chars.next() {
            match c {
                '"' => {
                    let mut s = String::new();
                    let mut closed = false;
                    while let Some((_, c)) = chars.next() {
                        match c {
                            '\\' => {
                                s.push(c);
                                if let Some((_, e)) = chars.next() {
                                    s.push(e);
                                }
                            }
                            '"' => {
                                closed = true;
                                break;
                            }
                            _ => s.push(c),
                        }
                    }
                    if !closed {
                        return Err(SchemaError::SchemaParse(format!("unterminated string on line {}", line_no + 1)));
                    }
                    stripped.push('"');
                    stripped.push_str(&s);
                    stripped.push('"');
                    if let Some(Frame::Object {
                        current,
                        expecting_key: expecting @ true,
                        seen,
                    }) = stack.last_mut()
                    {
                        let key: String = serde_json::from_str(&format!("\"{s}\""))
                            .map_err(|e| SchemaError::SchemaParse(e.to_string()))?;
                        if !seen.insert(key.clone()) {
                            return Err(SchemaError::DuplicateKey(key));
                        }
                        *current = Some(key);
                        *expecting = false;
                        let path: KeyPath = stack
                            .iter()
                            .filter_map(|f| match f {
                                Frame::Object { current, .. } => current.clone(),
                                Frame::Array => None,
                            })
                            .collect();
                        key_lines.entry(path).or_insert(line_no);
                    }
                }
                '/' if matches!(chars.peek(), Some((_, '/'))) => {
                    let comment = line[pos + 2..].trim();
                    if !comment.is_empty() {
                        comments.insert(line_no, comment.to_owned());
                    }
                    break;
                }
                _ => {
                    match c {
                        '{' => stack.push(Frame::Object {
                            current: None,
                            expecting_key: true,
                            seen: HashSet::new(),
                        }),
                        '[' => stack.push(Frame::Array),
                        '}' | ']' => {
                            stack.pop();
                        }
                        ',' => {
                            if let Some(Frame::Object { expecting_key, .. }) = stack.last_mut() {
                                *expecting_key = true;
                            }
                        }
                        _ => {}
                    }
                    stripped.push(c);
                }
            }
        }
        stripped.push('\n');
    }
    Ok(Scanned {
        stripped,
        comments,
        key_lines,
    })
}

pub fn parse_schema(text: &str) -> Result<Schema, SchemaError> {
    let scanned = scan(text)?;
    let value: Value =
        serde_json::from_str(&scanned.stripped).map_err(|e| SchemaError::SchemaParse(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(SchemaError::SchemaParse("schema root must be an object".into()));
    };
    let keys = build_keys(&map, &mut Vec::new(), &scanned)?;
    if keys.is_empty() {
        return Err(SchemaError::SchemaParse("schema has no keys".into()));
    }
    Ok(Schema { keys })
}

fn build_keys(map: &Map<String, Value>, path: &mut KeyPath, scanned: &Scanned) -> Result<Vec<SchemaKey>, SchemaError> {
    let mut keys = Vec::with_capacity(map.len());
    for (name, value) in map {
        path.push(name.clone());
        let comment = scanned.key_lines.get(path.as_slice()).and_then(|line| scanned.comments.get(line));
        let description = match comment {
            Some(c) => c.clone(),
            None if path.len() > 1 => name.clone(),
            None => return Err(SchemaError::MissingDescription(name.clone())),
        };
        let kind = match value {
            Value::Object(inner) => FieldKind::Object(build_keys(inner, path, scanned)?),
            Value::Array(items) => match items.first() {
                Some(Value::Object(inner)) => FieldKind::List(build_keys(inner, path, scanned)?),
                _ => FieldKind::List(Vec::new()),
            },
            _ => FieldKind::Scalar,
        };
        path.pop();
        keys.push(SchemaKey {
            name: name.clone(),
            description,
            kind,
        });
    }
    Ok(keys)
}

impl Schema {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, name: &str) -> Option<&SchemaKey> {
        self.keys.iter().find(|k| k.name == name)
    }

    /// Writes the schema back in commented-JSON form.
    pub fn to_commented_json(&self) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        write_keys(&mut out, &self.keys, 1);
        out.push_str("}\n");
        out
    }
}

fn write_keys(out: &mut String, keys: &[SchemaKey], depth: usize) {
    let pad = "    ".repeat(depth);
    for (i, key) in keys.iter().enumerate() {
        let comma = if i + 1 < keys.len() { "," } else { "" };
        let name = Value::String(key.name.clone());
        let desc = key.description.replace(['\n', '\r'], " ");
        match &key.kind {
            FieldKind::Scalar => {
                let _ = writeln!(out, "{pad}{name}: \"\"{comma}  // {desc}");
            }
            FieldKind::Object(children) => {
                let _ = writeln!(out, "{pad}{name}: {{  // {desc}");
                write_keys(out, children, depth + 1);
                let _ = writeln!(out, "{pad}}}{comma}");
            }
            FieldKind::List(children) if children.is_empty() => {
                let _ = writeln!(out, "{pad}{name}: []{comma}  // {desc}");
            }
            FieldKind::List(children) => {
                let _ = writeln!(out, "{pad}{name}: [  // {desc}");
                let _ = writeln!(out, "{pad}    {{");
                write_keys(out, children, depth + 2);
                let _ = writeln!(out, "{pad}    }}");
                let _ = writeln!(out, "{pad}]{comma}");
            }
        }
    }
}

/// Restricts `gold` to the named top-level keys.
pub fn restrict(gold: &Map<String, Value>, keys: &[&str]) -> Value {
    Value::Object(
        gold.iter()
            .filter(|(k, _)| keys.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    )
}

/// Builds a training query over `gold`.
///
/// With [`Strategy::Sampled`] a subset size is drawn uniformly from
/// `1..=K`, then a uniform subset of that size; subsets whose gold values
/// are all empty are redrawn up to [`MAX_RESAMPLES`] times.
pub fn sample_keys(schema: &Schema, gold: &Value, seed: u64, strategy: Strategy) -> Result<Query, SchemaError> {
    let Value::Object(gold_map) = gold else {
        return Err(SchemaError::GoldNotObject);
    };
    let build = |indices: &[usize]| {
        let selected: Vec<SchemaKey> = indices.iter().map(|&i| schema.keys[i].clone()).collect();
        let names: Vec<&str> = selected.iter().map(|k| k.name.as_str()).collect();
        let gold_subset = restrict(gold_map, &names);
        (selected, gold_subset)
    };
    let has_values = |v: &Value| !flatten(v, FlattenPolicy::default()).is_empty();
    let k = schema.len();

    let (selected_keys, gold_subset) = match strategy {
        Strategy::All => {
            let all: Vec<usize> = (0..k).collect();
            let (sel, sub) = build(&all);
            if !has_values(&sub) {
                return Err(SchemaError::EmptyGoldAfterRestriction(1));
            }
            (sel, sub)
        }
        Strategy::Sampled => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut found = None;
            for _ in 0..MAX_RESAMPLES {
                let size = rng.random_range(1..=k);
                let mut picked = index::sample(&mut rng, k, size).into_vec();
                picked.sort_unstable();
                let (sel, sub) = build(&picked);
                if has_values(&sub) {
                    found = Some((sel, sub));
                    break;
                }
            }
            found.ok_or(SchemaError::EmptyGoldAfterRestriction(MAX_RESAMPLES))?
        }
    };
    let mut query = Query {
        selected_keys,
        prompt_text: String::new(),
        gold_subset,
    };
    query.prompt_text = render_prompt(&query, DEFAULT_TEMPLATE)?;
    Ok(query)
}

fn fields_block(keys: &[SchemaKey]) -> String {
    keys.iter()
        .map(|k| format!("{}: {}", k.name, k.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Substitutes one `key: description` line per selected key for the
/// `{fields}` placeholder.
pub fn render_prompt(query: &Query, template: &str) -> Result<String, SchemaError> {
    if !template.contains(FIELDS_PLACEHOLDER) {
        return Err(SchemaError::TemplateError);
    }
    Ok(template.replace(FIELDS_PLACEHOLDER, &fields_block(&query.selected_keys)))
}
