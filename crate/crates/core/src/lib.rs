//! Verifiable rewards, field-level metrics and GRPO/DAPO optimization for
//! structured information extraction, with a deterministic toy environment
//! that exercises the full reinforcement-learning loop.

pub mod cli;
pub mod flatjson;
pub mod grpo;
pub mod metrics;
pub mod rewards;
pub mod schema;
pub mod toyenv;

pub use flatjson::{flatten, match_records, normalize_value, unflatten, FlatPath, FlatRecord, FlattenPolicy, MatchResult};
