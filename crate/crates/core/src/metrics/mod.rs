//! Corpus evaluation: field-level precision, recall and F1 over flattened
//! records, plus a structural accuracy derived from tree edit distance.

mod ted;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::flatjson::{flatten, match_records, normalize_value, FlatRecord, FlattenPolicy};

pub use ted::{ted, ted_opt, OrderedLabeledTree};

pub const OBJECT_LABEL: &str = "<obj>";
pub const ARRAY_LABEL: &str = "<arr>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("gold annotation is empty")]
    EmptyGold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_matched: usize,
    pub pred_size: usize,
    pub gold_size: usize,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

impl FieldMetrics {
    pub fn from_counts(n_matched: usize, pred_size: usize, gold_size: usize) -> Result<Self, MetricsError> {
        if gold_size == 0 {
            return Err(MetricsError::EmptyGold);
        }
        let precision = if pred_size == 0 {
            0.0
        } else {
            n_matched as f64 / pred_size as f64
        };
        let recall = n_matched as f64 / gold_size as f64;
        Ok(FieldMetrics {
            precision,
            recall,
            f1: f1_score(precision, recall),
            n_matched,
            pred_size,
            gold_size,
        })
    }
}

pub fn field_metrics(pred: &FlatRecord, gold: &FlatRecord) -> Result<FieldMetrics, MetricsError> {
    let m = match_records(pred, gold);
    FieldMetrics::from_counts(m.n_matched, m.pred_size, m.gold_size)
}

/// Converts JSON into an ordered labeled tree.
///
/// Objects become `<obj>` nodes with one child per member, sorted by key;
/// each member node is labeled by its key and holds the value's subtree.
/// Arrays become `<arr>` nodes and scalars become leaves labeled by their
/// normalized value. Empty objects and arrays contribute no node, so `{}`
/// maps to the empty tree (`None`).
pub fn json_to_tree(tree: &Value) -> Option<OrderedLabeledTree> {
    match tree {
        Value::Object(map) if map.is_empty() => None,
        Value::Array(items) if items.is_empty() => None,
        Value::Object(map) => {
            let mut members: Vec<_> = map.iter().collect();
            members.sort_by(|a, b| a.0.cmp(b.0));
            let children = members
                .into_iter()
                .map(|(k, v)| OrderedLabeledTree::node(k.clone(), json_to_tree(v).into_iter().collect()))
                .collect();
            Some(OrderedLabeledTree::node(OBJECT_LABEL, children))
        }
        Value::Array(items) => Some(OrderedLabeledTree::node(
            ARRAY_LABEL,
            items.iter().filter_map(json_to_tree).collect(),
        )),
        scalar => Some(OrderedLabeledTree::leaf(normalize_value(scalar))),
    }
}

/// `max(0, 1 - TED(pred, gold) / |gold|)`, where `|gold|` is the distance
/// from the empty tree to the gold tree.
pub fn ted_accuracy(pred: &Value, gold: &Value) -> Result<f64, MetricsError> {
    let gold_tree = json_to_tree(gold).ok_or(MetricsError::EmptyGold)?;
    let pred_tree = json_to_tree(pred);
    let dist = ted_opt(pred_tree.as_ref(), Some(&gold_tree));
    Ok((1.0 - dist as f64 / gold_tree.size() as f64).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRow {
    pub id: String,
    pub metrics: Option<FieldMetrics>,
    pub ted_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_doc: Vec<DocRow>,
    /// Pooled over all matched pairs of the scored documents.
    pub micro: Option<FieldMetrics>,
    /// Unweighted mean of the per-document scores.
    #[serde(rename = "macro")]
    pub macro_avg: Option<MacroMetrics>,
    pub mean_ted_accuracy: Option<f64>,
    pub n_scored: usize,
    pub n_errors: usize,
}

struct Aggregates {
    micro: Option<FieldMetrics>,
    macro_avg: Option<MacroMetrics>,
    mean_ted: Option<f64>,
    n_scored: usize,
    n_errors: usize,
}

fn aggregate(rows: &[DocRow]) -> Aggregates {
    let scored: Vec<(&FieldMetrics, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.metrics.as_ref()?, r.ted_accuracy?)))
        .collect();
    let n = scored.len();
    let n_errors = rows.len() - n;
    if n == 0 {
        return Aggregates {
            micro: None,
            macro_avg: None,
            mean_ted: None,
            n_scored: 0,
            n_errors,
        };
    }
    let (mut matched, mut pred, mut gold) = (0, 0, 0);
    let (mut p, mut r, mut f, mut t) = (0.0, 0.0, 0.0, 0.0);
    for (m, ted_acc) in &scored {
        matched += m.n_matched;
        pred += m.pred_size;
        gold += m.gold_size;
        p += m.precision;
        r += m.recall;
        f += m.f1;
        t += ted_acc;
    }
    let nf = n as f64;
    Aggregates {
        micro: FieldMetrics::from_counts(matched, pred, gold).ok(),
        macro_avg: Some(MacroMetrics {
            precision: p / nf,
            recall: r / nf,
            f1: f / nf,
        }),
        mean_ted: Some(t / nf),
        n_scored: n,
        n_errors,
    }
}

impl EvalReport {
    pub fn from_rows(per_doc: Vec<DocRow>) -> Self {
        let agg = aggregate(&per_doc);
        EvalReport {
            per_doc,
            micro: agg.micro,
            macro_avg: agg.macro_avg,
            mean_ted_accuracy: agg.mean_ted,
            n_scored: agg.n_scored,
            n_errors: agg.n_errors,
        }
    }

    /// Recomputes the aggregates from the per-document rows and checks they
    /// equal the stored ones exactly.
    pub fn revalidate(&self) -> bool {
        let agg = aggregate(&self.per_doc);
        agg.micro == self.micro
            && agg.macro_avg == self.macro_avg
            && agg.mean_ted == self.mean_ted_accuracy
            && agg.n_scored == self.n_scored
            && agg.n_errors == self.n_errors
    }

    pub fn errors(&self) -> impl Iterator<Item = (&str, &str)> {
        self.per_doc
            .iter()
            .filter_map(|r| Some((r.id.as_str(), r.error.as_deref()?)))
    }

    /// Table with F1, precision, recall and TED accuracy scaled by 100.
    pub fn to_markdown(&self, title: &str) -> String {
        let pct = |v: f64| format!("{:.2}", v * 100.0);
        let mut out = String::new();
        let _ = writeln!(out, "# {title}\n");
        let _ = writeln!(out, "| Aggregate | F1 | Precision | Recall | TED Acc |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        let ted = self.mean_ted_accuracy.map_or("-".to_string(), pct);
        match &self.macro_avg {
            Some(m) => {
                let _ = writeln!(out, "| macro | {} | {} | {} | {} |", pct(m.f1), pct(m.precision), pct(m.recall), ted);
            }
            None => {
                let _ = writeln!(out, "| macro | - | - | - | - |");
            }
        }
        match &self.micro {
            Some(m) => {
                let _ = writeln!(out, "| micro | {} | {} | {} | {} |", pct(m.f1), pct(m.precision), pct(m.recall), ted);
            }
            None => {
                let _ = writeln!(out, "| micro | - | - | - | - |");
            }
        }
        let _ = writeln!(out, "\n{} documents scored, {} errors.\n", self.n_scored, self.n_errors);
        let _ = writeln!(out, "| Document | F1 | Precision | Recall | TED Acc |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for row in &self.per_doc {
            match (&row.metrics, row.ted_accuracy) {
                (Some(m), Some(t)) => {
                    let _ = writeln!(
                        out,
                        "| {} | {} | {} | {} | {} |",
                        row.id,
                        pct(m.f1),
                        pct(m.precision),
                        pct(m.recall),
                        pct(t)
                    );
                }
                _ => {
                    let err = row.error.as_deref().unwrap_or("not scored");
                    let _ = writeln!(out, "| {} | error: {} | | | |", row.id, err);
                }
            }
        }
        out
    }
}

pub fn evaluate_document(id: &str, pred: &Value, gold: &Value, policy: FlattenPolicy) -> DocRow {
    let scores = field_metrics(&flatten(pred, policy), &flatten(gold, policy))
        .and_then(|m| Ok((m, ted_accuracy(pred, gold)?)));
    match scores {
        Ok((m, t)) => DocRow {
            id: id.to_owned(),
            metrics: Some(m),
            ted_accuracy: Some(t),
            error: None,
        },
        Err(e) => DocRow {
            id: id.to_owned(),
            metrics: None,
            ted_accuracy: None,
            error: Some(e.to_string()),
        },
    }
}

/// Scores every `(id, prediction, gold)` triple. Per-document failures are
/// recorded in the report rather than aborting the run.
pub fn evaluate_corpus<'a, I>(pairs: I, policy: FlattenPolicy) -> EvalReport
where
    I: IntoIterator<Item = (&'a str, &'a Value, &'a Value)>,
{
    let rows = pairs
        .into_iter()
        .map(|(id, pred, gold)| evaluate_document(id, pred, gold, policy))
        .collect();
    EvalReport::from_rows(rows)
}
