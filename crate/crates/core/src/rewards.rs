//! Rule-based reward for a single model response.
//!
//! The reward is the sum of a binary format score and a matching score in
//! `[0, 1]`, so every response earns a total in `[0, 2]`. The matching score
//! weighs field precision against field recall with `alpha`: precision
//! punishes hallucinated pairs, recall punishes missing ones.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::flatjson::{flatten, match_records, FlatRecord, FlattenPolicy};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("gold annotation flattens to an empty record")]
    EmptyGold,
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
}

/// No JSON object could be recovered from the response.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no parseable JSON object in response")]
pub struct ParseFailure;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Precision weight of the matching score.
    pub alpha: f64,
    pub drop_empty: bool,
    pub fence_stripping: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 0.5,
            drop_empty: true,
            fence_stripping: true,
        }
    }
}

impl RewardConfig {
    pub fn with_alpha(alpha: f64) -> Result<Self, RewardError> {
        let cfg = RewardConfig {
            alpha,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if (0.0..=1.0).contains(&self.alpha) {
            Ok(())
        } else {
            Err(RewardError::InvalidAlpha(self.alpha))
        }
    }

    pub fn flatten_policy(&self) -> FlattenPolicy {
        FlattenPolicy {
            drop_empty: self.drop_empty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format_score: u8,
    pub matching_score: f64,
    pub total: f64,
    pub precision_part: f64,
    pub recall_part: f64,
    pub parse_ok: bool,
    pub n_matched: usize,
    pub pred_size: usize,
    pub gold_size: usize,
}

/// 1 when the response is exactly one think block followed by exactly one
/// answer block with nothing but whitespace around them, else 0.
pub fn format_score(resp: &str) -> u8 {
    let tags = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];
    if tags.iter().any(|t| resp.matches(t).count() != 1) {
        return 0;
    }
    let pos: Vec<usize> = tags.iter().map(|t| resp.find(t).unwrap()).collect();
    if !pos.windows(2).all(|w| w[0] < w[1]) {
        return 0;
    }
    let before = &resp[..pos[0]];
    let between = &resp[pos[1] + THINK_CLOSE.len()..pos[2]];
    let after = &resp[pos[3] + ANSWER_CLOSE.len()..];
    let blank = |s: &str| s.chars().all(char::is_whitespace);
    u8::from(blank(before) && blank(between) && blank(after))
}

fn answer_block(resp: &str) -> &str {
    if let Some(open) = resp.find(ANSWER_OPEN) {
        let body = &resp[open + ANSWER_OPEN.len()..];
        if let Some(close) = body.find(ANSWER_CLOSE) {
            return &body[..close];
        }
    }
    resp
}

/// Contents of the first Markdown code fence, without its info string.
/// Text without a fence is returned unchanged.
fn strip_fences(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text;
    };
    let rest = &text[open + 3..];
    // skip the info string (e.g. `json`) up to the end of the line
    let body = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    }
}

/// Parses the first JSON object found in the answer block, or in the whole
/// response when there is no answer block.
pub fn extract_answer_json(resp: &str, cfg: &RewardConfig) -> Result<Value, ParseFailure> {
    let mut text = answer_block(resp);
    if cfg.fence_stripping {
        text = strip_fences(text);
    }
    for (start, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        if let Some(Ok(value @ Value::Object(_))) = stream.next() {
            return Ok(value);
        }
    }
    Err(ParseFailure)
}

/// `alpha * precision + (1 - alpha) * recall`, or 0 for an empty prediction.
pub fn matching_score(pred: &FlatRecord, gold: &FlatRecord, alpha: f64) -> Result<f64, RewardError> {
    Ok(score_parts(pred, gold, alpha)?.0)
}

// (score, precision, recall, n_matched)
fn score_parts(pred: &FlatRecord, gold: &FlatRecord, alpha: f64) -> Result<(f64, f64, f64, usize), RewardError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(RewardError::InvalidAlpha(alpha));
    }
    if gold.is_empty() {
        return Err(RewardError::EmptyGold);
    }
    let m = match_records(pred, gold);
    if m.pred_size == 0 {
        return Ok((0.0, 0.0, 0.0, 0));
    }
    let precision = m.n_matched as f64 / m.pred_size as f64;
    let recall = m.n_matched as f64 / m.gold_size as f64;
    Ok((alpha * precision + (1.0 - alpha) * recall, precision, recall, m.n_matched))
}

pub fn reward(resp: &str, gold: &Value, cfg: &RewardConfig) -> Result<RewardBreakdown, RewardError> {
    let gold_rec = flatten(gold, cfg.flatten_policy());
    reward_flat(resp, &gold_rec, cfg)
}

/// Same as [`reward`] with the gold document already flattened.
pub fn reward_flat(resp: &str, gold: &FlatRecord, cfg: &RewardConfig) -> Result<RewardBreakdown, RewardError> {
    if gold.is_empty() {
        return Err(RewardError::EmptyGold);
    }
    let format = format_score(resp);
    let (pred, parse_ok) = match extract_answer_json(resp, cfg) {
        Ok(v) => (flatten(&v, cfg.flatten_policy()), true),
        Err(ParseFailure) => (FlatRecord::new(), false),
    };
    let (matching, precision, recall, n_matched) = score_parts(&pred, gold, cfg.alpha)?;
    Ok(RewardBreakdown {
        format_score: format,
        matching_score: matching,
        total: f64::from(format) + matching,
        precision_part: precision,
        recall_part: recall,
        parse_ok,
        n_matched,
        pred_size: pred.len(),
        gold_size: gold.len(),
    })
}
