//! A deterministic desk-scale extraction environment.
//!
//! Documents are synthetic gold JSON records over a schema. The "model" is
//! a tabular softmax policy that emits flat key-value pairs one token at a
//! time and then stops; its output is decoded into a think/answer response
//! and scored by the same reward used for real model outputs. Log-probs and
//! their parameter gradients are closed-form, so the GRPO update is exact.
//!
//! Each leaf path can be emitted at most once. Every logit is indexed by a
//! position bucket (tokens emitted so far, capped) and by whether the
//! token's key was requested, so the policy can learn to stay on-query but
//! is free to emit unrequested keys.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::flatjson::{unflatten, FlatPath, FlatRecord, Segment};
use crate::grpo::{self, Aggregation, GrpoConfig, GrpoError, LogProbGradient, Rollout, RolloutGroup};
use crate::rewards::{self, RewardBreakdown, RewardConfig, RewardError};
use crate::schema::{sample_keys, FieldKind, Query, Schema, SchemaError, SchemaKey, Strategy};

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("non-finite objective or gradient at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("invalid toy config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
}

/// Generation knobs for synthetic documents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Candidate values per leaf path.
    pub value_pool: usize,
    /// Probability that a populated leaf takes the first pool value.
    pub dominant_prob: f64,
    /// Fill probability of the first top-level key; later keys decay
    /// linearly towards `fill_last`.
    pub fill_first: f64,
    pub fill_last: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            value_pool: 2,
            dominant_prob: 0.9,
            fill_first: 0.9,
            fill_last: 0.4,
        }
    }
}

impl WorldConfig {
    fn fill_prob(&self, index: usize, n_keys: usize) -> f64 {
        if n_keys <= 1 {
            return self.fill_first;
        }
        let frac = index as f64 / (n_keys - 1) as f64;
        self.fill_first + (self.fill_last - self.fill_first) * frac
    }
}

fn pool_value(leaf: &str, idx: usize) -> String {
    format!("{leaf} {idx}")
}

fn draw_value(rng: &mut ChaCha8Rng, leaf: &str, cfg: &WorldConfig) -> String {
    let pool = cfg.value_pool.max(1);
    let idx = if pool == 1 || rng.random::<f64>() < cfg.dominant_prob {
        0
    } else {
        rng.random_range(1..pool)
    };
    pool_value(leaf, idx)
}

fn fill_children(rng: &mut ChaCha8Rng, children: &[SchemaKey], cfg: &WorldConfig) -> Map<String, Value> {
    let mut row = Map::new();
    let mut any = false;
    for child in children {
        let populated = rng.random::<f64>() < 0.7;
        any |= populated;
        let v = if populated {
            Value::String(draw_value(rng, &child.name, cfg))
        } else {
            Value::String(String::new())
        };
        row.insert(child.name.clone(), v);
    }
    if !any {
        if let Some(first) = children.first() {
            row.insert(first.name.clone(), Value::String(draw_value(rng, &first.name, cfg)));
        }
    }
    row
}

fn populated_value(rng: &mut ChaCha8Rng, key: &SchemaKey, cfg: &WorldConfig) -> Value {
    match &key.kind {
        FieldKind::Scalar => Value::String(draw_value(rng, &key.name, cfg)),
        FieldKind::Object(children) => Value::Object(fill_children(rng, children, cfg)),
        FieldKind::List(children) if children.is_empty() => {
            Value::Array(vec![Value::String(draw_value(rng, &key.name, cfg))])
        }
        FieldKind::List(children) => Value::Array(vec![Value::Object(fill_children(rng, children, cfg))]),
    }
}

fn empty_value(key: &SchemaKey) -> Value {
    match key.kind {
        FieldKind::Scalar => Value::String(String::new()),
        FieldKind::Object(_) => Value::Object(Map::new()),
        FieldKind::List(_) => Value::Array(Vec::new()),
    }
}

pub fn make_world(seed: u64, n_docs: usize, schema: &Schema) -> Vec<Value> {
    make_world_with(seed, n_docs, schema, &WorldConfig::default())
}

/// Synthesizes `n_docs` gold documents; every document has at least one
/// populated field.
pub fn make_world_with(seed: u64, n_docs: usize, schema: &Schema, cfg: &WorldConfig) -> Vec<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_keys = schema.len();
    (0..n_docs)
        .map(|_| {
            let mut doc = Map::new();
            let mut any = false;
            for (i, key) in schema.keys.iter().enumerate() {
                let v = if rng.random::<f64>() < cfg.fill_prob(i, n_keys) {
                    any = true;
                    populated_value(&mut rng, key, cfg)
                } else {
                    empty_value(key)
                };
                doc.insert(key.name.clone(), v);
            }
            if !any {
                let k = rng.random_range(0..n_keys);
                let key = &schema.keys[k];
                doc.insert(key.name.clone(), populated_value(&mut rng, key, cfg));
            }
            Value::Object(doc)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToyToken {
    Emit { path: String, value: String },
    Stop,
}

impl fmt::Display for ToyToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToyToken::Emit { path, value } => write!(f, "EMIT({path}={value})"),
            ToyToken::Stop => f.write_str("STOP"),
        }
    }
}

/// Token space of the toy policy: one EMIT per (leaf path, pool value),
/// plus STOP as the last token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyVocab {
    tokens: Vec<ToyToken>,
    // per token: index of its top-level key and of its leaf path
    key_of: Vec<usize>,
    path_of: Vec<usize>,
    n_paths: usize,
}

fn leaf_paths(key: &SchemaKey) -> Vec<(FlatPath, String)> {
    let top = Segment::Key(key.name.clone());
    match &key.kind {
        FieldKind::Scalar => vec![(FlatPath(vec![top]), key.name.clone())],
        FieldKind::Object(children) => children
            .iter()
            .map(|c| (FlatPath(vec![top.clone(), Segment::Key(c.name.clone())]), c.name.clone()))
            .collect(),
        FieldKind::List(children) if children.is_empty() => {
            vec![(FlatPath(vec![top, Segment::Index(0)]), key.name.clone())]
        }
        FieldKind::List(children) => children
            .iter()
            .map(|c| {
                let path = FlatPath(vec![top.clone(), Segment::Index(0), Segment::Key(c.name.clone())]);
                (path, c.name.clone())
            })
            .collect(),
    }
}

impl ToyVocab {
    pub fn new(schema: &Schema, world: &WorldConfig) -> Self {
        let mut tokens = Vec::new();
        let mut key_of = Vec::new();
        let mut path_of = Vec::new();
        let mut n_paths = 0;
        for (k, key) in schema.keys.iter().enumerate() {
            for (path, leaf) in leaf_paths(key) {
                let text = path.canonical();
                for v in 0..world.value_pool.max(1) {
                    tokens.push(ToyToken::Emit {
                        path: text.clone(),
                        value: pool_value(&leaf, v),
                    });
                    key_of.push(k);
                    path_of.push(n_paths);
                }
                n_paths += 1;
            }
        }
        tokens.push(ToyToken::Stop);
        ToyVocab {
            tokens,
            key_of,
            path_of,
            n_paths,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn stop(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn token(&self, id: usize) -> &ToyToken {
        &self.tokens[id]
    }

    /// Decodes a token sequence into the flat record it emits.
    pub fn decode(&self, seq: &[u32]) -> FlatRecord {
        seq.iter()
            .filter_map(|&t| match &self.tokens[t as usize] {
                ToyToken::Emit { path, value } => Some((path.clone(), value.clone())),
                ToyToken::Stop => None,
            })
            .collect()
    }

    /// Token ids emitting exactly the pairs of `record`, followed by STOP.
    /// Pairs outside the vocabulary are skipped.
    pub fn encode(&self, record: &FlatRecord) -> Vec<u32> {
        let mut seq: Vec<u32> = record
            .iter()
            .filter_map(|(p, v)| {
                self.tokens.iter().position(|t| match t {
                    ToyToken::Emit { path, value } => path == p && value == v,
                    ToyToken::Stop => false,
                })
            })
            .map(|i| i as u32)
            .collect();
        seq.push(self.stop() as u32);
        seq
    }
}

/// Tabular softmax policy: logits indexed by `[bucket][requested][token]`,
/// where `requested` says whether the token's key is part of the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub logits: Vec<f64>,
    pub n_buckets: usize,
    pub vocab_size: usize,
    pub temperature: f64,
}

/// State at one decoding step. `requested[i]` belongs to `allowed[i]`;
/// STOP always counts as requested.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub bucket: usize,
    pub allowed: Vec<u32>,
    pub requested: Vec<bool>,
}

impl StepState {
    fn position(&self, token: u32) -> usize {
        self.allowed
            .iter()
            .position(|&t| t == token)
            .unwrap_or_else(|| panic!("token {token} is not admissible in this state"))
    }
}

impl ToyPolicy {
    pub fn uniform(n_buckets: usize, vocab_size: usize, temperature: f64) -> Self {
        ToyPolicy {
            logits: vec![0.0; n_buckets * 2 * vocab_size],
            n_buckets,
            vocab_size,
            temperature,
        }
    }

    /// Starting point mimicking an instruction-following base model: the
    /// logits of unrequested keys sit `off_query_penalty` below the rest.
    pub fn instruction_prior(n_buckets: usize, vocab_size: usize, temperature: f64, off_query_penalty: f64) -> Self {
        let mut p = Self::uniform(n_buckets, vocab_size, temperature);
        for b in 0..n_buckets {
            let row = b * 2 * vocab_size;
            for l in &mut p.logits[row..row + vocab_size] {
                *l = -off_query_penalty;
            }
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.logits.len()
    }

    fn slot(&self, state: &StepState, i: usize) -> usize {
        (state.bucket * 2 + usize::from(state.requested[i])) * self.vocab_size + state.allowed[i] as usize
    }

    fn scaled(&self, state: &StepState) -> Vec<f64> {
        (0..state.allowed.len())
            .map(|i| self.logits[self.slot(state, i)] / self.temperature)
            .collect()
    }

    /// Probabilities over `state.allowed`, in that order.
    pub fn probs(&self, state: &StepState) -> Vec<f64> {
        let scaled = self.scaled(state);
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn log_prob(&self, state: &StepState, token: u32) -> f64 {
        let scaled = self.scaled(state);
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        scaled[state.position(token)] - lse
    }

    /// Adds `scale * d log_prob(state, token) / d logits` into `grad`.
    pub fn accumulate_log_prob_grad(&self, state: &StepState, token: u32, scale: f64, grad: &mut [f64]) {
        let chosen = state.position(token);
        for (i, p) in self.probs(state).into_iter().enumerate() {
            let indicator = if i == chosen { 1.0 } else { 0.0 };
            grad[self.slot(state, i)] += scale * (indicator - p) / self.temperature;
        }
    }

    pub fn distance(&self, other: &ToyPolicy) -> f64 {
        self.logits
            .iter()
            .zip(&other.logits)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// One sampled response with the states needed to re-score it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub states: Vec<StepState>,
    pub tokens: Vec<u32>,
    pub response: String,
    pub reward: RewardBreakdown,
    pub emitted_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRollouts {
    pub group: RolloutGroup,
    pub traces: Vec<Trace>,
}

/// Gradient oracle for a group under a given parameter table.
pub struct PolicyGradient<'a> {
    pub policy: &'a ToyPolicy,
    pub traces: &'a [Trace],
}

impl LogProbGradient for PolicyGradient<'_> {
    fn num_params(&self) -> usize {
        self.policy.num_params()
    }

    fn accumulate(&self, rollout: usize, token: usize, scale: f64, grad: &mut [f64]) {
        let trace = &self.traces[rollout];
        self.policy
            .accumulate_log_prob_grad(&trace.states[token], trace.tokens[token], scale, grad);
    }
}

/// Per-token log-probs of every trace under `policy`.
pub fn score_traces(policy: &ToyPolicy, traces: &[Trace]) -> Vec<Vec<f64>> {
    traces
        .iter()
        .map(|tr| tr.states.iter().zip(&tr.tokens).map(|(s, &t)| policy.log_prob(s, t)).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyPrior {
    pub n_buckets: usize,
    pub temperature: f64,
    pub off_query_penalty: f64,
}

impl Default for PolicyPrior {
    fn default() -> Self {
        PolicyPrior {
            n_buckets: 8,
            temperature: 1.0,
            off_query_penalty: 3.0,
        }
    }
}

/// Everything the rollout needs besides the policy being sampled.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    pub schema: Schema,
    pub vocab: ToyVocab,
    pub reference: ToyPolicy,
    pub reward: RewardConfig,
    pub max_len: usize,
    /// Probability of dropping the think block from a response.
    pub corrupt_format: f64,
}

impl ToyEnv {
    /// The reference (and starting) policy is [`ToyPolicy::instruction_prior`].
    pub fn new(schema: Schema, world: &WorldConfig, reward: RewardConfig, prior: PolicyPrior) -> Self {
        let vocab = ToyVocab::new(&schema, world);
        let reference = ToyPolicy::instruction_prior(prior.n_buckets, vocab.len(), prior.temperature, prior.off_query_penalty);
        ToyEnv {
            schema,
            vocab,
            reference,
            reward,
            max_len: 16,
            corrupt_format: 0.0,
        }
    }

    fn requested_keys(&self, query: &Query) -> Vec<bool> {
        let names: Vec<&str> = query.key_names().collect();
        self.schema.keys.iter().map(|k| names.contains(&k.name.as_str())).collect()
    }

    fn state(&self, policy: &ToyPolicy, pos: usize, key_requested: &[bool], path_used: &[bool]) -> StepState {
        let stop = self.vocab.stop();
        let mut allowed: Vec<u32> = (0..stop)
            .filter(|&t| !path_used[self.vocab.path_of[t]])
            .map(|t| t as u32)
            .collect();
        let mut requested: Vec<bool> = allowed
            .iter()
            .map(|&t| key_requested[self.vocab.key_of[t as usize]])
            .collect();
        allowed.push(stop as u32);
        requested.push(true);
        StepState {
            bucket: pos.min(policy.n_buckets - 1),
            allowed,
            requested,
        }
    }

    /// Samples one token sequence (EMIT* STOP, truncated at `max_len`).
    pub fn sample_sequence(&self, policy: &ToyPolicy, query: &Query, rng: &mut ChaCha8Rng) -> (Vec<StepState>, Vec<u32>) {
        let key_requested = self.requested_keys(query);
        let mut path_used = vec![false; self.vocab.n_paths];
        let (mut states, mut tokens) = (Vec::new(), Vec::new());
        for pos in 0..self.max_len.max(1) {
            let state = self.state(policy, pos, &key_requested, &path_used);
            let probs = policy.probs(&state);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = *state.allowed.last().unwrap();
            for (&tok, p) in state.allowed.iter().zip(&probs) {
                acc += p;
                if u < acc {
                    pick = tok;
                    break;
                }
            }
            states.push(state);
            tokens.push(pick);
            if pick as usize == self.vocab.stop() {
                break;
            }
            path_used[self.vocab.path_of[pick as usize]] = true;
        }
        (states, tokens)
    }

    /// Wraps the emitted pairs in a think/answer response.
    pub fn render_response(&self, query: &Query, tokens: &[u32], drop_think: bool) -> String {
        let record = self.vocab.decode(tokens);
        // paths are distinct and come from one schema, so this cannot conflict
        let answer = unflatten(&record).unwrap_or_else(|_| Value::Object(Map::new()));
        let think = format!(
            "<think>{} fields requested, {} found.</think>",
            query.selected_keys.len(),
            record.len()
        );
        let answer = format!("<answer>{answer}</answer>");
        if drop_think {
            answer
        } else {
            format!("{think}{answer}")
        }
    }

    pub fn score(&self, query: &Query, states: Vec<StepState>, tokens: Vec<u32>, drop_think: bool) -> Result<Trace, ToyError> {
        let response = self.render_response(query, &tokens, drop_think);
        let reward = rewards::reward(&response, &query.gold_subset, &self.reward)?;
        let emitted_pairs = self.vocab.decode(&tokens).len();
        Ok(Trace {
            states,
            tokens,
            response,
            reward,
            emitted_pairs,
        })
    }

    /// Samples `g` responses from `policy` for one query. The sampling policy
    /// doubles as the old policy, so the current and old log-probs coincide.
    pub fn rollout(&self, policy: &ToyPolicy, query: &Query, g: usize, seed: u64) -> Result<ToyRollouts, ToyError> {
        if g < 2 {
            return Err(GrpoError::GroupTooSmall(g).into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut traces = Vec::with_capacity(g);
        for _ in 0..g {
            let (states, tokens) = self.sample_sequence(policy, query, &mut rng);
            let drop_think = self.corrupt_format > 0.0 && rng.random::<f64>() < self.corrupt_format;
            traces.push(self.score(query, states, tokens, drop_think)?);
        }
        let cur = score_traces(policy, &traces);
        let reference = score_traces(&self.reference, &traces);
        let rollouts = traces
            .iter()
            .zip(cur)
            .zip(reference)
            .map(|((tr, lc), lr)| Rollout {
                tokens: tr.tokens.clone(),
                logp_old: lc.clone(),
                logp_cur: lc,
                logp_ref: lr,
                reward: tr.reward.total,
            })
            .collect();
        let group = RolloutGroup { rollouts };
        group.validate()?;
        Ok(ToyRollouts { group, traces })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub grpo: GrpoConfig,
    pub reward: RewardConfig,
    pub world: WorldConfig,
    pub strategy: Strategy,
    pub steps: usize,
    /// Initial learning rate; decays linearly to zero over `steps`.
    pub lr: f64,
    /// Gradient steps on each rollout group before the old policy refreshes.
    pub updates_per_step: usize,
    pub max_len: usize,
    pub n_buckets: usize,
    pub temperature: f64,
    /// Initial logit gap between requested and unrequested keys.
    pub off_query_penalty: f64,
    pub n_docs: usize,
    pub corrupt_format: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            grpo: GrpoConfig::default(),
            reward: RewardConfig::default(),
            world: WorldConfig::default(),
            strategy: Strategy::Sampled,
            steps: 300,
            lr: 1.0,
            updates_per_step: 4,
            max_len: 16,
            n_buckets: 8,
            temperature: 1.0,
            off_query_penalty: 3.0,
            n_docs: 100,
            corrupt_format: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        self.grpo.validate()?;
        self.reward.validate()?;
        let bad = |m: &str| Err(ToyError::InvalidConfig(m.to_owned()));
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr must be finite and non-negative");
        }
        if self.updates_per_step == 0 || self.max_len == 0 || self.n_buckets == 0 || self.n_docs == 0 {
            return bad("updates_per_step, max_len, n_buckets and n_docs must be positive");
        }
        if !self.off_query_penalty.is_finite() {
            return bad("off_query_penalty must be finite");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(0.0..=1.0).contains(&self.corrupt_format) {
            return bad("corrupt_format must lie in [0, 1]");
        }
        if self.world.value_pool == 0 || !(0.0..=1.0).contains(&self.world.dominant_prob) {
            return bad("world needs a non-empty value pool and a dominant_prob in [0, 1]");
        }
        Ok(())
    }

    /// Learning rate for outer step `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr * (1.0 - step as f64 / self.steps as f64)
    }
}

/// Per-step training statistics. The CSV form keeps the first five columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_len: f64,
    pub clip_frac: f64,
    pub kl: f64,
    #[serde(skip)]
    pub mean_pairs: f64,
    #[serde(skip)]
    pub mean_gold_size: f64,
    #[serde(skip)]
    pub format_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<TrainRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    fn mean_over<F: Fn(&TrainRow) -> f64>(rows: &[TrainRow], f: F) -> f64 {
        if rows.is_empty() {
            return f64::NAN;
        }
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    }

    fn head(&self, n: usize) -> &[TrainRow] {
        &self.rows[..n.min(self.rows.len())]
    }

    fn tail(&self, n: usize) -> &[TrainRow] {
        &self.rows[self.rows.len().saturating_sub(n)..]
    }

    pub fn first_mean<F: Fn(&TrainRow) -> f64>(&self, n: usize, f: F) -> f64 {
        Self::mean_over(self.head(n), f)
    }

    pub fn last_mean<F: Fn(&TrainRow) -> f64>(&self, n: usize, f: F) -> f64 {
        Self::mean_over(self.tail(n), f)
    }

    /// First step whose trailing `window`-step mean reward reaches
    /// `threshold`, if any.
    pub fn steps_to_reward(&self, threshold: f64, window: usize) -> Option<usize> {
        let w = window.max(1);
        (w..=self.rows.len()).find_map(|end| {
            let mean = Self::mean_over(&self.rows[end - w..end], |r| r.mean_reward);
            (mean >= threshold).then_some(self.rows[end - 1].step)
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub log: TrainLog,
    pub policy: ToyPolicy,
    pub reference: ToyPolicy,
}

/// Runs the full loop: sample a query, roll out a group, normalize rewards,
/// and take `updates_per_step` gradient-ascent steps on the token-mean
/// objective before refreshing the old policy.
pub fn train(schema: &Schema, cfg: &TrainConfig, seed: u64) -> Result<TrainRun, ToyError> {
    cfg.validate()?;
    let world = make_world_with(seed, cfg.n_docs, schema, &cfg.world);
    let prior = PolicyPrior {
        n_buckets: cfg.n_buckets,
        temperature: cfg.temperature,
        off_query_penalty: cfg.off_query_penalty,
    };
    let mut env = ToyEnv::new(schema.clone(), &cfg.world, cfg.reward, prior);
    env.max_len = cfg.max_len;
    env.corrupt_format = cfg.corrupt_format;
    let mut policy = env.reference.clone();
    // separate stream from the world generator
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut log = TrainLog::default();

    for step in 0..cfg.steps {
        let doc = &world[rng.random_range(0..world.len())];
        let query = sample_keys(schema, doc, rng.next_u64(), cfg.strategy)?;
        let ToyRollouts { mut group, traces } = env.rollout(&policy, &query, cfg.grpo.group_size, rng.next_u64())?;
        let adv = grpo::advantages(&group.rewards(), cfg.grpo.advantage_eps)?;
        let lr = cfg.lr_at(step);

        let (mut clip, mut kl) = (0.0, 0.0);
        for update in 0..cfg.updates_per_step {
            if update > 0 {
                for (r, lp) in group.rollouts.iter_mut().zip(score_traces(&policy, &traces)) {
                    r.logp_cur = lp;
                }
            }
            let stats = grpo::objective_stats(&group, &adv, &cfg.grpo, Aggregation::TokenMean)?;
            let oracle = PolicyGradient {
                policy: &policy,
                traces: &traces,
            };
            let grad = grpo::grpo_gradient(&group, &adv, &cfg.grpo, Aggregation::TokenMean, &oracle)?;
            if !stats.objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ToyError::NonFiniteLoss { step });
            }
            for (p, g) in policy.logits.iter_mut().zip(&grad) {
                *p += lr * g;
            }
            clip += stats.clip_fraction;
            kl += stats.kl_mean;
        }

        let g = traces.len() as f64;
        let updates = cfg.updates_per_step as f64;
        log.rows.push(TrainRow {
            step,
            mean_reward: traces.iter().map(|t| t.reward.total).sum::<f64>() / g,
            mean_len: traces.iter().map(|t| t.tokens.len() as f64).sum::<f64>() / g,
            clip_frac: clip / updates,
            kl: kl / updates,
            mean_pairs: traces.iter().map(|t| t.emitted_pairs as f64).sum::<f64>() / g,
            mean_gold_size: traces[0].reward.gold_size as f64,
            format_rate: traces.iter().map(|t| f64::from(t.reward.format_score)).sum::<f64>() / g,
        });
    }
    Ok(TrainRun {
        log,
        policy,
        reference: env.reference,
    })
}

/// Exponential moving average with `alpha = 2 / (span + 1)`, seeded with
/// the first sample.
pub fn ema(values: &[f64], span: f64) -> Vec<f64> {
    let alpha = 2.0 / (span.max(1.0) + 1.0);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let next = match acc {
            None => v,
            Some(prev) => alpha * v + (1.0 - alpha) * prev,
        };
        acc = Some(next);
        out.push(next);
    }
    out
}
