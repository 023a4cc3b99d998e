//! Group-relative policy optimization kernels.
//!
//! For a group of `G` responses to one query, rewards are normalized inside
//! the group to give one advantage per response, broadcast to its tokens.
//! The per-token surrogate is the PPO-style pessimistic bound
//!
//! ```text
//! min(phi * A, clip(phi, 1 - eps_low, 1 + eps_high) * A) - beta * k3
//! phi = exp(logp_cur - logp_old)
//! k3  = exp(logp_ref - logp_cur) - (logp_ref - logp_cur) - 1
//! ```
//!
//! aggregated either per sample (`1/G * sum_i 1/|o_i| * sum_t`, symmetric
//! clip at `eps_low`) or per token (`1/sum_i |o_i| * sum_i sum_t`, with the
//! asymmetric "clip-higher" range). All functions return the objective to
//! be maximized; trainers negate it for descent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("group needs at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub eps_low: f64,
    pub eps_high: f64,
    /// KL penalty coefficient.
    pub beta: f64,
    /// Added to the group standard deviation.
    pub advantage_eps: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            eps_low: 0.2,
            eps_high: 0.28,
            beta: 0.04,
            advantage_eps: 1e-8,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.to_owned()));
        if self.group_size < 2 {
            return Err(GrpoError::GroupTooSmall(self.group_size));
        }
        if !(self.eps_low > 0.0) {
            return bad("eps_low must be positive");
        }
        if !(self.eps_high >= self.eps_low) {
            return bad("eps_high must be at least eps_low");
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad("beta must be a finite non-negative number");
        }
        if !(self.advantage_eps >= 0.0) {
            return bad("advantage_eps must be non-negative");
        }
        Ok(())
    }
}

/// How the per-token terms are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over tokens within each response, then mean over responses,
    /// with a symmetric clip range `eps_low`.
    SampleMean,
    /// One mean over all tokens of the group, with the asymmetric range
    /// `[1 - eps_low, 1 + eps_high]`.
    TokenMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub tokens: Vec<u32>,
    pub logp_old: Vec<f64>,
    pub logp_cur: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub reward: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }

    pub fn total_tokens(&self) -> usize {
        self.rollouts.iter().map(Rollout::len).sum()
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.rollouts.len() < 2 {
            return Err(GrpoError::GroupTooSmall(self.rollouts.len()));
        }
        for (i, r) in self.rollouts.iter().enumerate() {
            let n = r.tokens.len();
            if n == 0 {
                return Err(GrpoError::ShapeMismatch(format!("rollout {i} has no tokens")));
            }
            for (name, v) in [("logp_old", &r.logp_old), ("logp_cur", &r.logp_cur), ("logp_ref", &r.logp_ref)] {
                if v.len() != n {
                    return Err(GrpoError::ShapeMismatch(format!(
                        "rollout {i}: {name} has {} entries for {n} tokens",
                        v.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-response advantages, shared by every token of that response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advantage(pub Vec<f64>);

impl Advantage {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `(r_i - mean) / (std + advantage_eps)` with the population standard
/// deviation. A group of identical rewards gets all-zero advantages.
pub fn advantages(rewards: &[f64], advantage_eps: f64) -> Result<Advantage, GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(Advantage(vec![0.0; g]));
    }
    let n = g as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + advantage_eps;
    Ok(Advantage(rewards.iter().map(|r| (r - mean) / denom).collect()))
}

/// Importance ratio `pi_cur / pi_old` for one token.
pub fn ratio(logp_cur: f64, logp_old: f64) -> f64 {
    (logp_cur - logp_old).exp()
}

/// Non-negative per-token KL estimate `e^d - d - 1`, `d = logp_ref - logp_cur`.
pub fn kl_term(logp_cur: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_cur;
    // exp_m1 keeps precision for small d
    d.exp_m1() - d
}

/// Objective value plus diagnostics for logging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveStats {
    pub objective: f64,
    /// Fraction of tokens whose surrogate took the clipped branch.
    pub clip_fraction: f64,
    /// Token-averaged KL estimate against the reference policy.
    pub kl_mean: f64,
}

struct TokenTerm {
    value: f64,
    /// d(value)/d(logp_cur)
    slope: f64,
    clipped: bool,
    kl: f64,
}

fn token_term(logp_cur: f64, logp_old: f64, logp_ref: f64, adv: f64, lo: f64, hi: f64, beta: f64) -> TokenTerm {
    let phi = ratio(logp_cur, logp_old);
    let unclipped = phi * adv;
    let clipped_val = phi.clamp(lo, hi) * adv;
    // when phi lies inside [lo, hi] both branches coincide
    let clipped = clipped_val < unclipped;
    let surrogate = if clipped { clipped_val } else { unclipped };
    let surrogate_slope = if clipped { 0.0 } else { unclipped };
    let kl = kl_term(logp_cur, logp_ref);
    let kl_slope = -(logp_ref - logp_cur).exp_m1();
    TokenTerm {
        value: surrogate - beta * kl,
        slope: surrogate_slope - beta * kl_slope,
        clipped,
        kl,
    }
}

fn check_shapes(group: &RolloutGroup, adv: &Advantage) -> Result<(), GrpoError> {
    group.validate()?;
    if adv.0.len() != group.rollouts.len() {
        return Err(GrpoError::ShapeMismatch(format!(
            "{} advantages for {} rollouts",
            adv.0.len(),
            group.rollouts.len()
        )));
    }
    Ok(())
}

fn clip_range(cfg: &GrpoConfig, mode: Aggregation) -> (f64, f64) {
    match mode {
        Aggregation::SampleMean => (1.0 - cfg.eps_low, 1.0 + cfg.eps_low),
        Aggregation::TokenMean => (1.0 - cfg.eps_low, 1.0 + cfg.eps_high),
    }
}

fn token_weight(group: &RolloutGroup, i: usize, mode: Aggregation) -> f64 {
    match mode {
        Aggregation::SampleMean => 1.0 / (group.rollouts.len() as f64 * group.rollouts[i].len() as f64),
        Aggregation::TokenMean => 1.0 / group.total_tokens() as f64,
    }
}

/// Visits every token with its aggregation weight and term.
fn for_each_term(
    group: &RolloutGroup,
    adv: &Advantage,
    cfg: &GrpoConfig,
    mode: Aggregation,
    mut f: impl FnMut(usize, usize, f64, &TokenTerm),
) {
    let (lo, hi) = clip_range(cfg, mode);
    for (i, r) in group.rollouts.iter().enumerate() {
        let w = token_weight(group, i, mode);
        for t in 0..r.len() {
            let term = token_term(r.logp_cur[t], r.logp_old[t], r.logp_ref[t], adv.0[i], lo, hi, cfg.beta);
            f(i, t, w, &term);
        }
    }
}

pub fn objective_stats(
    group: &RolloutGroup,
    adv: &Advantage,
    cfg: &GrpoConfig,
    mode: Aggregation,
) -> Result<ObjectiveStats, GrpoError> {
    check_shapes(group, adv)?;
    let (mut objective, mut clipped, mut kl) = (0.0, 0usize, 0.0);
    for_each_term(group, adv, cfg, mode, |_, _, w, term| {
        objective += w * term.value;
        clipped += usize::from(term.clipped);
        kl += term.kl;
    });
    let n = group.total_tokens() as f64;
    Ok(ObjectiveStats {
        objective,
        clip_fraction: clipped as f64 / n,
        kl_mean: kl / n,
    })
}

/// The GRPO objective under the chosen aggregation.
pub fn grpo_objective(group: &RolloutGroup, adv: &Advantage, cfg: &GrpoConfig, mode: Aggregation) -> Result<f64, GrpoError> {
    objective_stats(group, adv, cfg, mode).map(|s| s.objective)
}

/// `dJ / d logp_cur[i][t]` for every token.
pub fn token_coefficients(
    group: &RolloutGroup,
    adv: &Advantage,
    cfg: &GrpoConfig,
    mode: Aggregation,
) -> Result<Vec<Vec<f64>>, GrpoError> {
    check_shapes(group, adv)?;
    let mut out: Vec<Vec<f64>> = group.rollouts.iter().map(|r| vec![0.0; r.len()]).collect();
    for_each_term(group, adv, cfg, mode, |i, t, w, term| out[i][t] = w * term.slope);
    Ok(out)
}

/// Source of `d logp_cur[i][t] / d theta` for a policy.
pub trait LogProbGradient {
    fn num_params(&self) -> usize;

    /// Adds `scale * d logp_cur[rollout][token] / d theta` into `grad`.
    fn accumulate(&self, rollout: usize, token: usize, scale: f64, grad: &mut [f64]);
}

/// Explicit per-token gradient vectors, indexed `[rollout][token][param]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLogProbGradients(pub Vec<Vec<Vec<f64>>>);

impl LogProbGradient for DenseLogProbGradients {
    fn num_params(&self) -> usize {
        self.0.iter().flatten().next().map_or(0, Vec::len)
    }

    fn accumulate(&self, rollout: usize, token: usize, scale: f64, grad: &mut [f64]) {
        for (g, d) in grad.iter_mut().zip(&self.0[rollout][token]) {
            *g += scale * d;
        }
    }
}

/// Exact gradient of [`grpo_objective`] with respect to the policy
/// parameters, by the chain rule through `logp_cur`. Tokens on the active
/// clipped branch contribute only through the KL term.
pub fn grpo_gradient(
    group: &RolloutGroup,
    adv: &Advantage,
    cfg: &GrpoConfig,
    mode: Aggregation,
    logp_grad: &impl LogProbGradient,
) -> Result<Vec<f64>, GrpoError> {
    let coeffs = token_coefficients(group, adv, cfg, mode)?;
    let mut grad = vec![0.0; logp_grad.num_params()];
    for (i, row) in coeffs.iter().enumerate() {
        for (t, &c) in row.iter().enumerate() {
            if c != 0.0 {
                logp_grad.accumulate(i, t, c, &mut grad);
            }
        }
    }
    Ok(grad)
}
