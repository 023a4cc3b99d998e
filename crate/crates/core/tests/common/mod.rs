#![allow(dead_code)]

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};
use vie_kit::{flatten, unflatten, FlatRecord, FlattenPolicy};

/// Object keys, including characters that need escaping in flat paths.
pub fn key() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => "[a-d]{1,3}",
        2 => "[a-c.\\[\\]\\\\ ]{0,4}",
        1 => "[é中a]{1,2}",
    ]
}

/// Leaf strings that are already normalized and non-empty.
pub fn clean_leaf() -> impl Strategy<Value = Value> {
    "[a-z0-9é中]([a-z0-9 é中.]{0,4}[a-z0-9é中])?".prop_map(Value::String)
}

fn object_of<S: Strategy<Value = Value>>(inner: S, min: usize, max: usize) -> impl Strategy<Value = Value> {
    prop::collection::btree_map(key(), inner, min..max).prop_map(|m| Value::Object(m.into_iter().collect()))
}

/// JSON objects whose leaves are clean strings and whose containers are
/// non-empty.
pub fn clean_json() -> impl Strategy<Value = Value> {
    let tree = clean_leaf().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 1..4).prop_map(Value::Array),
            object_of(inner, 1, 4),
        ]
    });
    object_of(tree, 1, 5)
}

/// Arbitrary JSON objects: numbers, nulls, blanks and empty containers.
pub fn any_json() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i32>().prop_map(Value::from),
        (-1e6f64..1e6).prop_map(Value::from),
        "[ a-cé]{0,4}".prop_map(Value::String),
    ];
    let tree = leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
            object_of(inner, 0, 4),
        ]
    });
    object_of(tree, 0, 5)
}

/// Same tree with every object's members in a random order.
pub fn permute_keys(v: &Value, rng: &mut ChaCha8Rng) -> Value {
    match v {
        Value::Object(m) => {
            let mut members: Vec<(&String, &Value)> = m.iter().collect();
            members.shuffle(rng);
            let mut out = Map::new();
            for (k, child) in members {
                out.insert(k.clone(), permute_keys(child, rng));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(|c| permute_keys(c, rng)).collect()),
        other => other.clone(),
    }
}

/// A noisy copy of `gold`: some pairs dropped, some values changed, a few
/// invented pairs added.
pub fn mutate_prediction(gold: &Value, seed: u64) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = flatten(gold, FlattenPolicy::default());
    let mut pred = FlatRecord::new();
    for (path, value) in flat.iter() {
        match rng.random_range(0..4) {
            0 => {}
            1 => {
                pred.insert(path, format!("{value}x"));
            }
            _ => {
                pred.insert(path, value);
            }
        }
    }
    for i in 0..rng.random_range(0..3) {
        pred.insert(format!("extra{i}"), "v");
    }
    unflatten(&pred).expect("paths come from one tree")
}
