//! Weight-conditioned softmax policy over each prompt's candidates.
//!
//! Logits mix one linear head per objective with a shared base head:
//!
//! ```text
//! logit(x, y, w) = ⟨u_0 + Σ_k w_k u_k, φ(x, y)⟩
//! ```
//!
//! so a one-hot `w = ê_k` selects head `k` on top of the base. All
//! probabilities are handled in log space.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::types::{dot, PromptId, RewardParameters, ResponseId, WeightVector};

pub const POLICY_SCHEMA_VERSION: u32 = 1;

/// Default number of supervised steps used to fit the starting policy.
pub const SFT_STEPS: usize = 200;
/// Default step size for the supervised fit.
pub const SFT_LEARNING_RATE: f64 = 0.1;

/// Policy parameters: a base head and one head per objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    pub base: Vec<f64>,
    pub heads: Vec<Vec<f64>>,
}

impl Policy {
    /// All-zero parameters, i.e. the uniform policy.
    pub fn zeros(dim: usize, objectives: usize) -> Self {
        Self {
            base: vec![0.0; dim],
            heads: vec![vec![0.0; dim]; objectives],
        }
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn num_objectives(&self) -> usize {
        self.heads.len()
    }

    pub fn is_finite(&self) -> bool {
        self.base.iter().chain(self.heads.iter().flatten()).all(|v| v.is_finite())
    }

    fn check(&self, env: &Environment, w: &WeightVector) -> Result<()> {
        if self.dim() != env.dim() {
            return Err(Error::DimensionMismatch {
                what: "policy parameters",
                expected: env.dim(),
                got: self.dim(),
            });
        }
        if w.len() != self.heads.len() {
            return Err(Error::DimensionMismatch {
                what: "weight vector",
                expected: self.heads.len(),
                got: w.len(),
            });
        }
        Ok(())
    }

    /// The combined parameter vector `u_0 + Σ_k w_k u_k`.
    pub fn effective(&self, w: &WeightVector) -> Result<Vec<f64>> {
        if w.len() != self.heads.len() {
            return Err(Error::DimensionMismatch {
                what: "weight vector",
                expected: self.heads.len(),
                got: w.len(),
            });
        }
        let mut v = self.base.clone();
        for (head, &wk) in self.heads.iter().zip(w.as_slice()) {
            for (vi, hi) in v.iter_mut().zip(head) {
                *vi += wk * hi;
            }
        }
        Ok(v)
    }

    pub fn logit(&self, env: &Environment, prompt: PromptId, response: ResponseId, w: &WeightVector) -> Result<f64> {
        self.check(env, w)?;
        env.check_ids(prompt, response)?;
        let v = self.effective(w)?;
        Ok(dot(&v, env.phi(prompt.0, response.0)))
    }

    /// Log-probabilities of every candidate of `prompt`.
    pub fn log_probs(&self, env: &Environment, prompt: PromptId, w: &WeightVector) -> Result<Vec<f64>> {
        self.check(env, w)?;
        env.check_ids(prompt, ResponseId(0))?;
        let v = self.effective(w)?;
        Ok(log_softmax_row(env, prompt.0, &v))
    }

    pub fn log_prob(&self, env: &Environment, prompt: PromptId, response: ResponseId, w: &WeightVector) -> Result<f64> {
        env.check_ids(prompt, response)?;
        Ok(self.log_probs(env, prompt, w)?[response.0])
    }

    /// Explicit per-prompt distributions at weight `w`.
    pub fn distributions(&self, env: &Environment, w: &WeightVector) -> Result<Distributions> {
        self.check(env, w)?;
        let v = self.effective(w)?;
        Ok(Distributions {
            log_probs: (0..env.num_prompts()).map(|x| log_softmax_row(env, x, &v)).collect(),
        })
    }

    /// Draws one response for `prompt`.
    pub fn sample(&self, env: &Environment, prompt: PromptId, w: &WeightVector, rng: &mut Rng) -> Result<ResponseId> {
        let lp = self.log_probs(env, prompt, w)?;
        Ok(sample_from_log_probs(&lp, rng))
    }

    /// Flattened parameters: base first, then heads in order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.base.iter().chain(self.heads.iter().flatten()).copied().collect()
    }

    pub fn from_flat(flat: &[f64], dim: usize, objectives: usize) -> Result<Self> {
        if flat.len() != dim * (objectives + 1) {
            return Err(Error::DimensionMismatch {
                what: "flat policy parameters",
                expected: dim * (objectives + 1),
                got: flat.len(),
            });
        }
        Ok(Self {
            base: flat[..dim].to_vec(),
            heads: flat[dim..].chunks(dim).map(|c| c.to_vec()).collect(),
        })
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, scale: f64, other: &Policy) {
        for (a, b) in self.base.iter_mut().zip(&other.base) {
            *a += scale * b;
        }
        for (ha, hb) in self.heads.iter_mut().zip(&other.heads) {
            for (a, b) in ha.iter_mut().zip(hb) {
                *a += scale * b;
            }
        }
    }

    /// Fits the base head by cross-entropy toward each prompt's reference
    /// response, heads left at zero. The result ignores the weight vector.
    pub fn fit_sft(env: &Environment, steps: usize, learning_rate: f64) -> Self {
        let d = env.dim();
        let mut policy = Self::zeros(d, env.num_objectives());
        for _ in 0..steps {
            let mut grad = vec![0.0; d];
            for x in 0..env.num_prompts() {
                let lp = log_softmax_row(env, x, &policy.base);
                let rho = env.rho()[x];
                let reference = env.reference_response(PromptId(x)).0;
                for (y, l) in lp.iter().enumerate() {
                    let p = l.exp();
                    let target = if y == reference { 1.0 } else { 0.0 };
                    let coef = rho * (target - p);
                    for (g, f) in grad.iter_mut().zip(env.phi(x, y)) {
                        *g += coef * f;
                    }
                }
            }
            for (u, g) in policy.base.iter_mut().zip(&grad) {
                *u += learning_rate * g;
            }
        }
        policy
    }
}

/// Frozen policy parameters used as the KL anchor of one alignment round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferencePolicy(Policy);

impl ReferencePolicy {
    pub fn freeze(policy: &Policy) -> Self {
        Self(policy.clone())
    }

    pub fn policy(&self) -> &Policy {
        &self.0
    }
}

impl std::ops::Deref for ReferencePolicy {
    type Target = Policy;

    fn deref(&self) -> &Policy {
        &self.0
    }
}

/// Explicit conditional distributions, one log-probability row per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Distributions {
    log_probs: Vec<Vec<f64>>,
}

impl Distributions {
    /// Builds from probability rows, normalizing each row.
    pub fn from_probs(rows: Vec<Vec<f64>>) -> Result<Self> {
        let log_probs = rows
            .into_iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                if !(total > 0.0) || row.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::InvalidArgument("probability rows must be non-negative with positive mass".into()));
                }
                Ok(row.iter().map(|p| (p / total).ln()).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Self { log_probs })
    }

    pub fn from_log_probs(log_probs: Vec<Vec<f64>>) -> Self {
        Self { log_probs }
    }

    /// The uniform distribution over every prompt's candidates.
    pub fn uniform(env: &Environment) -> Self {
        let l = -(env.num_candidates() as f64).ln();
        Self {
            log_probs: vec![vec![l; env.num_candidates()]; env.num_prompts()],
        }
    }

    pub fn num_prompts(&self) -> usize {
        self.log_probs.len()
    }

    pub fn log_row(&self, x: usize) -> &[f64] {
        &self.log_probs[x]
    }

    pub fn probs(&self, x: usize) -> Vec<f64> {
        self.log_probs[x].iter().map(|l| l.exp()).collect()
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.log_probs[x][y].exp()
    }
}

/// Numerically stable `log Σ exp`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn log_softmax_row(env: &Environment, x: usize, v: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = (0..env.num_candidates()).map(|y| dot(v, env.phi(x, y))).collect();
    let lse = log_sum_exp(&logits);
    logits.into_iter().map(|l| l - lse).collect()
}

pub(crate) fn sample_from_log_probs(log_probs: &[f64], rng: &mut Rng) -> ResponseId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (y, l) in log_probs.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return ResponseId(y);
        }
    }
    // rounding left a sliver of mass past the last bucket
    let last = log_probs
        .iter()
        .enumerate()
        .rev()
        .find(|(_, l)| l.is_finite())
        .map_or(0, |(y, _)| y);
    ResponseId(last)
}

/// Per-candidate scalarized reward `wᵀ θᵀ φ(x, y)`.
pub(crate) fn weighted_reward(env: &Environment, theta: &[RewardParameters], w: &WeightVector, x: usize, y: usize) -> f64 {
    let phi = env.phi(x, y);
    theta
        .iter()
        .zip(w.as_slice())
        .map(|(t, wk)| wk * t.reward(phi))
        .sum()
}

fn check_theta(env: &Environment, theta: &[RewardParameters], w: &WeightVector) -> Result<()> {
    if theta.len() != w.len() {
        return Err(Error::DimensionMismatch {
            what: "reward parameter set",
            expected: w.len(),
            got: theta.len(),
        });
    }
    if let Some(t) = theta.iter().find(|t| t.dim() != env.dim()) {
        return Err(Error::DimensionMismatch {
            what: "reward parameters",
            expected: env.dim(),
            got: t.dim(),
        });
    }
    Ok(())
}

/// Exact maximizer of the KL-regularized objective on finite candidate sets:
/// `π*(y|x) ∝ π_ref(y|x) · exp(wᵀθᵀφ(x, y) / β)`.
pub fn optimal_policy_oracle(
    env: &Environment,
    theta: &[RewardParameters],
    w: &WeightVector,
    beta: f64,
    reference: &Distributions,
) -> Result<Distributions> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
    }
    check_theta(env, theta, w)?;
    if reference.num_prompts() != env.num_prompts() {
        return Err(Error::DimensionMismatch {
            what: "reference distributions",
            expected: env.num_prompts(),
            got: reference.num_prompts(),
        });
    }
    let log_probs = (0..env.num_prompts())
        .map(|x| {
            let tilted: Vec<f64> = reference
                .log_row(x)
                .iter()
                .enumerate()
                .map(|(y, l)| l + weighted_reward(env, theta, w, x, y) / beta)
                .collect();
            let lse = log_sum_exp(&tilted);
            tilted.into_iter().map(|t| t - lse).collect()
        })
        .collect();
    Ok(Distributions { log_probs })
}

/// Oracle against a reference policy evaluated at `w`.
pub fn optimal_policy_for_reference(
    env: &Environment,
    theta: &[RewardParameters],
    w: &WeightVector,
    beta: f64,
    reference: &ReferencePolicy,
) -> Result<Distributions> {
    let ref_dist = reference.distributions(env, w)?;
    optimal_policy_oracle(env, theta, w, beta, &ref_dist)
}

/// `Σ_y p(y) log(p(y) / q(y))` for probability vectors.
pub fn kl_probs(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut kl = 0.0;
    for (y, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::SupportMismatch { prompt: 0, response: y });
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

/// KL divergence of `p` from `reference` at prompt `x`, computed from log-probabilities.
pub fn kl_divergence(p: &Distributions, reference: &Distributions, x: PromptId) -> Result<f64> {
    let (lp, lq) = (p.log_row(x.0), reference.log_row(x.0));
    let mut kl = 0.0;
    for (y, (&a, &b)) in lp.iter().zip(lq).enumerate() {
        let pa = a.exp();
        if pa > 0.0 {
            if b == f64::NEG_INFINITY {
                return Err(Error::SupportMismatch { prompt: x.0, response: y });
            }
            kl += pa * (a - b);
        }
    }
    Ok(kl)
}
