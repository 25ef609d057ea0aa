//! Synthetic multi-objective environment.
//!
//! Every prompt shares one catalog of `M` candidate responses; the pair
//! `(x, y)` owns a bounded feature vector `φ(x, y)` and each objective `k`
//! scores it with a linear reward `⟨θ*_k, φ(x, y)⟩`. Prompts are grouped into
//! patients (several "views" per patient), every `(x, y)` carries a group
//! label obtained by thresholding feature coordinates, and each prompt owns a
//! reference response.
//!
//! Features are generated as
//!
//! ```text
//! raw(x, y) = a·c_y + b·(q_patient(x) + v·n_x) + e·ε_xy
//! ```
//!
//! with standard normal `c`, `q`, `n`, `ε`, then rescaled jointly so the
//! largest norm is exactly one.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::types::{
    dot, l2_norm, Direction, FeatureVector, PromptId, RewardParameters, ResponseId, STRUCTURAL_TOL,
};

pub const ENV_SCHEMA_VERSION: u32 = 1;

/// Prompt sampling distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PromptDistribution {
    Uniform,
    /// `ρ(x) ∝ (x + 1)^(-exponent)`.
    PowerLaw { exponent: f64 },
}

/// Parameters for [`generate_environment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Feature dimension `d`.
    pub dim: usize,
    /// Number of objectives `N`.
    pub objectives: usize,
    pub num_prompts: usize,
    /// Size `M` of the shared candidate catalog.
    pub candidates_per_prompt: usize,
    /// Norm bound `B` on reward parameters.
    pub bound: f64,
    pub seed: u64,
    pub views_per_patient: usize,
    /// Number of feature coordinates thresholded into the group label.
    pub group_bits: usize,
    /// Threshold applied to each labelled coordinate; non-zero values skew group sizes.
    pub group_threshold: f64,
    pub prompt_distribution: PromptDistribution,
    pub response_weight: f64,
    pub prompt_weight: f64,
    pub view_noise: f64,
    pub noise_weight: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            objectives: 3,
            num_prompts: 3000,
            candidates_per_prompt: 8,
            bound: 1.0,
            seed: 0,
            views_per_patient: 2,
            group_bits: 2,
            group_threshold: 0.0,
            prompt_distribution: PromptDistribution::Uniform,
            response_weight: 0.6,
            prompt_weight: 0.6,
            view_noise: 0.3,
            noise_weight: 1.0,
        }
    }
}

impl EnvConfig {
    /// A config with the given core sizes and default shape parameters.
    pub fn sized(dim: usize, objectives: usize, num_prompts: usize, candidates: usize, bound: f64, seed: u64) -> Self {
        Self {
            dim,
            objectives,
            num_prompts,
            candidates_per_prompt: candidates,
            bound,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "feature dimension must be at least 2, got {}: the centering constraint ⟨1, θ⟩ = 0 forces θ = 0 when d = 1",
                self.dim
            )));
        }
        if self.objectives == 0 || self.num_prompts == 0 || self.candidates_per_prompt == 0 {
            return Err(Error::InvalidArgument(
                "objectives, num_prompts and candidates_per_prompt must all be positive".into(),
            ));
        }
        if self.candidates_per_prompt < 2 {
            return Err(Error::InvalidArgument("need at least 2 candidates per prompt".into()));
        }
        if !(self.bound > 0.0) || !self.bound.is_finite() {
            return Err(Error::InvalidArgument(format!("bound must be positive, got {}", self.bound)));
        }
        if self.views_per_patient == 0 {
            return Err(Error::InvalidArgument("views_per_patient must be >= 1".into()));
        }
        if let PromptDistribution::PowerLaw { exponent } = self.prompt_distribution {
            if !exponent.is_finite() || exponent < 0.0 {
                return Err(Error::InvalidArgument(format!("power-law exponent must be >= 0, got {exponent}")));
            }
        }
        Ok(())
    }
}

/// An immutable synthetic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvironmentFile", into = "EnvironmentFile")]
pub struct Environment {
    config: EnvConfig,
    dim: usize,
    num_prompts: usize,
    num_candidates: usize,
    rho: Vec<f64>,
    /// Flat `[prompt][candidate][dim]`.
    features: Vec<f64>,
    norms: Vec<f64>,
    theta_star: Vec<RewardParameters>,
    reference_response: Vec<ResponseId>,
    patient_of: Vec<usize>,
    /// Flat `[prompt][candidate]`.
    group_of: Vec<u32>,
}

/// On-disk layout of an environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentFile {
    pub schema: String,
    pub schema_version: u32,
    pub config: EnvConfig,
    pub rho: Vec<f64>,
    pub features: Vec<Vec<Vec<f64>>>,
    pub theta_star: Vec<RewardParameters>,
    pub reference_response: Vec<ResponseId>,
    pub patient_of: Vec<usize>,
    pub group_of: Vec<Vec<u32>>,
}

impl From<Environment> for EnvironmentFile {
    fn from(env: Environment) -> Self {
        let features = (0..env.num_prompts)
            .map(|x| {
                (0..env.num_candidates)
                    .map(|y| env.phi(x, y).to_vec())
                    .collect()
            })
            .collect();
        let group_of = env
            .group_of
            .chunks(env.num_candidates)
            .map(|c| c.to_vec())
            .collect();
        EnvironmentFile {
            schema: "moalign.environment".into(),
            schema_version: ENV_SCHEMA_VERSION,
            config: env.config,
            rho: env.rho,
            features,
            theta_star: env.theta_star,
            reference_response: env.reference_response,
            patient_of: env.patient_of,
            group_of,
        }
    }
}

impl TryFrom<EnvironmentFile> for Environment {
    type Error = Error;

    fn try_from(file: EnvironmentFile) -> Result<Self> {
        if file.schema_version != ENV_SCHEMA_VERSION {
            return Err(Error::Invariant(format!(
                "unsupported environment schema version {}",
                file.schema_version
            )));
        }
        let num_prompts = file.features.len();
        let num_candidates = file.features.first().map_or(0, |c| c.len());
        let dim = file.config.dim;
        let mut features = Vec::with_capacity(num_prompts * num_candidates * dim);
        for row in &file.features {
            if row.len() != num_candidates {
                return Err(Error::Invariant("ragged candidate lists in feature table".into()));
            }
            for f in row {
                if f.len() != dim {
                    return Err(Error::DimensionMismatch {
                        what: "feature",
                        expected: dim,
                        got: f.len(),
                    });
                }
                features.extend_from_slice(f);
            }
        }
        let group_of: Vec<u32> = file.group_of.into_iter().flatten().collect();
        Environment::from_parts(
            file.config,
            file.rho,
            features,
            num_candidates,
            file.theta_star,
            file.reference_response,
            file.patient_of,
            group_of,
        )
    }
}

impl Environment {
    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        config: EnvConfig,
        rho: Vec<f64>,
        features: Vec<f64>,
        num_candidates: usize,
        theta_star: Vec<RewardParameters>,
        reference_response: Vec<ResponseId>,
        patient_of: Vec<usize>,
        group_of: Vec<u32>,
    ) -> Result<Self> {
        let dim = config.dim;
        let num_prompts = rho.len();
        if features.len() != num_prompts * num_candidates * dim {
            return Err(Error::Invariant("feature table size does not match prompt/candidate counts".into()));
        }
        if rho.iter().any(|p| !(*p >= 0.0)) || (rho.iter().sum::<f64>() - 1.0).abs() > STRUCTURAL_TOL {
            return Err(Error::Invariant("prompt distribution must be non-negative and sum to 1".into()));
        }
        let norms: Vec<f64> = features.chunks(dim).map(l2_norm).collect();
        if let Some(n) = norms.iter().find(|n| **n > 1.0 + STRUCTURAL_TOL) {
            return Err(Error::Invariant(format!("feature norm {n} exceeds 1")));
        }
        if theta_star.len() != config.objectives {
            return Err(Error::DimensionMismatch {
                what: "theta_star",
                expected: config.objectives,
                got: theta_star.len(),
            });
        }
        for t in &theta_star {
            if t.dim() != dim {
                return Err(Error::DimensionMismatch {
                    what: "theta_star",
                    expected: dim,
                    got: t.dim(),
                });
            }
        }
        if reference_response.len() != num_prompts || patient_of.len() != num_prompts {
            return Err(Error::Invariant("per-prompt tables must have one entry per prompt".into()));
        }
        if reference_response.iter().any(|r| r.0 >= num_candidates) {
            return Err(Error::Invariant("reference response is not a candidate of its prompt".into()));
        }
        if group_of.len() != num_prompts * num_candidates {
            return Err(Error::Invariant("group table size does not match prompt/candidate counts".into()));
        }
        Ok(Self {
            config,
            dim,
            num_prompts,
            num_candidates,
            rho,
            features,
            norms,
            theta_star,
            reference_response,
            patient_of,
            group_of,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_objectives(&self) -> usize {
        self.theta_star.len()
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn num_candidates(&self) -> usize {
        self.num_candidates
    }

    pub fn bound(&self) -> f64 {
        self.config.bound
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn prompts(&self) -> impl Iterator<Item = PromptId> {
        (0..self.num_prompts).map(PromptId)
    }

    pub fn candidates(&self, _prompt: PromptId) -> impl Iterator<Item = ResponseId> {
        (0..self.num_candidates).map(ResponseId)
    }

    pub fn theta_star(&self) -> &[RewardParameters] {
        &self.theta_star
    }

    pub fn reference_response(&self, prompt: PromptId) -> ResponseId {
        self.reference_response[prompt.0]
    }

    pub fn patient_of(&self, prompt: PromptId) -> usize {
        self.patient_of[prompt.0]
    }

    pub fn group_of(&self, prompt: PromptId, response: ResponseId) -> u32 {
        self.group_of[prompt.0 * self.num_candidates + response.0]
    }

    /// Raw feature slice; callers must pass valid indices.
    #[inline]
    pub fn phi(&self, x: usize, y: usize) -> &[f64] {
        let start = (x * self.num_candidates + y) * self.dim;
        &self.features[start..start + self.dim]
    }

    /// Feature vector with id validation.
    pub fn features(&self, prompt: PromptId, response: ResponseId) -> Result<FeatureVector> {
        self.check_ids(prompt, response)?;
        FeatureVector::new(self.phi(prompt.0, response.0).to_vec())
    }

    pub fn check_ids(&self, prompt: PromptId, response: ResponseId) -> Result<()> {
        if prompt.0 >= self.num_prompts {
            return Err(Error::IndexOutOfRange {
                what: "prompt",
                index: prompt.0,
                len: self.num_prompts,
            });
        }
        if response.0 >= self.num_candidates {
            return Err(Error::IndexOutOfRange {
                what: "response",
                index: response.0,
                len: self.num_candidates,
            });
        }
        Ok(())
    }

    pub fn check_objective(&self, k: usize) -> Result<()> {
        if k >= self.num_objectives() {
            return Err(Error::IndexOutOfRange {
                what: "objective",
                index: k,
                len: self.num_objectives(),
            });
        }
        Ok(())
    }

    /// Ground-truth reward `⟨θ*_k, φ(x, y)⟩`.
    pub fn true_reward(&self, k: usize, prompt: PromptId, response: ResponseId) -> Result<f64> {
        self.check_objective(k)?;
        self.check_ids(prompt, response)?;
        Ok(self.reward(k, prompt.0, response.0))
    }

    #[inline]
    pub(crate) fn reward(&self, k: usize, x: usize, y: usize) -> f64 {
        self.theta_star[k].reward(self.phi(x, y))
    }

    /// Shifted cosine similarity `(1 + cos(φ_a, φ_b)) / 2` between two
    /// prompt/response pairs; always in `[0, 1]`, symmetric, one on the diagonal.
    pub fn similarity(&self, a: (PromptId, ResponseId), b: (PromptId, ResponseId)) -> f64 {
        let ia = a.0 .0 * self.num_candidates + a.1 .0;
        let ib = b.0 .0 * self.num_candidates + b.1 .0;
        if ia == ib {
            return 1.0;
        }
        let (na, nb) = (self.norms[ia], self.norms[ib]);
        if na == 0.0 || nb == 0.0 {
            return if na == nb { 1.0 } else { 0.5 };
        }
        let cos = dot(self.phi(a.0 .0, a.1 .0), self.phi(b.0 .0, b.1 .0)) / (na * nb);
        ((1.0 + cos) / 2.0).clamp(0.0, 1.0)
    }

    /// Similarity of two responses under the same prompt.
    pub fn similarity_given_prompt(&self, prompt: PromptId, a: ResponseId, b: ResponseId) -> f64 {
        self.similarity((prompt, a), (prompt, b))
    }

    /// Similarity of a response to the prompt's reference response.
    pub fn similarity_to_reference(&self, prompt: PromptId, response: ResponseId) -> f64 {
        self.similarity((prompt, response), (prompt, self.reference_response(prompt)))
    }

    /// Replaces the ground-truth parameters; used by diagnostics that probe
    /// alternative reward models on a fixed feature table.
    pub fn with_theta_star(&self, theta_star: Vec<RewardParameters>) -> Result<Self> {
        let mut config = self.config.clone();
        config.objectives = theta_star.len();
        Self::from_parts(
            config,
            self.rho.clone(),
            self.features.clone(),
            self.num_candidates,
            theta_star,
            self.reference_response.clone(),
            self.patient_of.clone(),
            self.group_of.clone(),
        )
    }

    /// Builds an environment from explicit tables. Group labels default to 0,
    /// every prompt is its own patient, and `ρ` is uniform.
    pub fn from_tables(
        features: Vec<Vec<Vec<f64>>>,
        theta_star: Vec<RewardParameters>,
        reference_response: Vec<ResponseId>,
        bound: f64,
    ) -> Result<Self> {
        let num_prompts = features.len();
        let num_candidates = features.first().map_or(0, |c| c.len());
        let dim = features
            .first()
            .and_then(|c| c.first())
            .map_or(0, |f| f.len());
        let config = EnvConfig {
            dim,
            objectives: theta_star.len(),
            num_prompts,
            candidates_per_prompt: num_candidates,
            bound,
            views_per_patient: 1,
            ..EnvConfig::default()
        };
        let file = EnvironmentFile {
            schema: "moalign.environment".into(),
            schema_version: ENV_SCHEMA_VERSION,
            config,
            rho: vec![1.0 / num_prompts as f64; num_prompts],
            group_of: vec![vec![0; num_candidates]; num_prompts],
            features,
            theta_star,
            reference_response,
            patient_of: (0..num_prompts).collect(),
        };
        Environment::try_from(file)
    }

    /// Same environment with explicit patient and group tables.
    pub fn with_labels(&self, patient_of: Vec<usize>, group_of: Vec<Vec<u32>>) -> Result<Self> {
        Self::from_parts(
            self.config.clone(),
            self.rho.clone(),
            self.features.clone(),
            self.num_candidates,
            self.theta_star.clone(),
            self.reference_response.clone(),
            patient_of,
            group_of.into_iter().flatten().collect(),
        )
    }

    /// Same environment with a different prompt distribution.
    pub fn with_rho(&self, rho: Vec<f64>) -> Result<Self> {
        Self::from_parts(
            self.config.clone(),
            rho,
            self.features.clone(),
            self.num_candidates,
            self.theta_star.clone(),
            self.reference_response.clone(),
            self.patient_of.clone(),
            self.group_of.clone(),
        )
    }
}

fn normal_vec(rng: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Samples a centered direction scaled to `bound · u`, `u ∈ (0, 1]`.
pub(crate) fn sample_theta(rng: &mut rng::Rng, dim: usize, bound: f64) -> RewardParameters {
    loop {
        let raw = normal_vec(rng, dim);
        let mean = raw.iter().sum::<f64>() / dim as f64;
        let centered: Vec<f64> = raw.iter().map(|v| v - mean).collect();
        let norm = l2_norm(&centered);
        if norm < 1e-12 {
            continue;
        }
        let u = 1.0 - rng.random::<f64>();
        let scale = bound * u / norm;
        let theta: Vec<f64> = centered.iter().map(|v| v * scale).collect();
        if let Ok(p) = RewardParameters::project(&theta, bound) {
            return p;
        }
    }
}

/// Generates a synthetic environment from `config`.
pub fn generate_environment(config: &EnvConfig) -> Result<Environment> {
    config.validate()?;
    let d = config.dim;
    let m = config.candidates_per_prompt;
    let n_prompts = config.num_prompts;
    let mut rng = rng::stream(config.seed, &[tag::ENV]);

    let catalog: Vec<Vec<f64>> = (0..m).map(|_| normal_vec(&mut rng, d)).collect();
    let num_patients = n_prompts.div_ceil(config.views_per_patient);
    let patients: Vec<Vec<f64>> = (0..num_patients).map(|_| normal_vec(&mut rng, d)).collect();
    let patient_of: Vec<usize> = (0..n_prompts).map(|x| x / config.views_per_patient).collect();

    let mut features = Vec::with_capacity(n_prompts * m * d);
    for x in 0..n_prompts {
        let view = normal_vec(&mut rng, d);
        let prompt_vec: Vec<f64> = patients[patient_of[x]]
            .iter()
            .zip(&view)
            .map(|(q, n)| q + config.view_noise * n)
            .collect();
        for c in catalog.iter() {
            let eps = normal_vec(&mut rng, d);
            for j in 0..d {
                features.push(
                    config.response_weight * c[j]
                        + config.prompt_weight * prompt_vec[j]
                        + config.noise_weight * eps[j],
                );
            }
        }
    }
    let max_norm = features.chunks(d).map(l2_norm).fold(0.0, f64::max);
    if max_norm > 0.0 {
        features.iter_mut().for_each(|v| *v /= max_norm);
    }

    let theta_star: Vec<RewardParameters> = (0..config.objectives)
        .map(|_| sample_theta(&mut rng, d, config.bound))
        .collect();

    let reference_response: Vec<ResponseId> = (0..n_prompts)
        .map(|x| {
            let mut best = 0;
            let mut best_val = f64::NEG_INFINITY;
            for y in 0..m {
                let phi = &features[(x * m + y) * d..(x * m + y + 1) * d];
                let total: f64 = theta_star.iter().map(|t| t.reward(phi)).sum();
                if total > best_val {
                    best_val = total;
                    best = y;
                }
            }
            ResponseId(best)
        })
        .collect();

    let bits = config.group_bits.min(d);
    let group_of: Vec<u32> = features
        .chunks(d)
        .map(|phi| {
            (0..bits).fold(0u32, |acc, j| {
                acc | (u32::from(phi[j] > config.group_threshold) << j)
            })
        })
        .collect();

    let rho = match config.prompt_distribution {
        PromptDistribution::Uniform => vec![1.0 / n_prompts as f64; n_prompts],
        PromptDistribution::PowerLaw { exponent } => {
            let raw: Vec<f64> = (0..n_prompts).map(|x| ((x + 1) as f64).powf(-exponent)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|r| r / total).collect()
        }
    };

    Environment::from_parts(
        config.clone(),
        rho,
        features,
        m,
        theta_star,
        reference_response,
        patient_of,
        group_of,
    )
}

/// A deterministic evaluation metric comparing a response with the prompt's
/// reference response.
pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;
    fn direction(&self) -> Direction;
    fn score(&self, env: &Environment, prompt: PromptId, response: ResponseId, reference: ResponseId) -> f64;
    /// The objective this scorer stands for.
    fn objective(&self) -> usize;

    /// Score in higher-is-better orientation.
    fn oriented_score(&self, env: &Environment, prompt: PromptId, response: ResponseId, reference: ResponseId) -> f64 {
        self.direction().orient(self.score(env, prompt, response, reference))
    }
}

/// Built-in scorer reporting the ground-truth reward of one objective, either
/// as-is or negated as an error-style metric.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardScorer {
    name: String,
    objective: usize,
    direction: Direction,
}

impl RewardScorer {
    pub fn new(objective: usize, direction: Direction) -> Self {
        let name = match direction {
            Direction::HigherBetter => format!("reward_{objective}"),
            Direction::LowerBetter => format!("error_{objective}"),
        };
        Self {
            name,
            objective,
            direction,
        }
    }
}

impl Scorer for RewardScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn objective(&self) -> usize {
        self.objective
    }

    fn score(&self, env: &Environment, prompt: PromptId, response: ResponseId, _reference: ResponseId) -> f64 {
        let r = env.reward(self.objective, prompt.0, response.0);
        match self.direction {
            Direction::HigherBetter => r,
            Direction::LowerBetter => -r,
        }
    }
}

/// Index of the built-in scorer emitted as lower-is-better.
pub const LOWER_BETTER_SCORER: usize = 0;

/// One scorer per objective; scorer [`LOWER_BETTER_SCORER`] is an error-style
/// metric (negated reward, lower is better).
pub fn builtin_scorers(env: &Environment) -> Vec<Box<dyn Scorer>> {
    scorers_with(env, Some(LOWER_BETTER_SCORER))
}

/// Reward scorers with an optional lower-better scorer at index `lower_better`.
pub fn scorers_with(env: &Environment, lower_better: Option<usize>) -> Vec<Box<dyn Scorer>> {
    (0..env.num_objectives())
        .map(|k| {
            let direction = if Some(k) == lower_better {
                Direction::LowerBetter
            } else {
                Direction::HigherBetter
            };
            Box::new(RewardScorer::new(k, direction)) as Box<dyn Scorer>
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Environment {
        generate_environment(&EnvConfig::sized(6, 3, 40, 5, 1.0, 11)).unwrap()
    }

    #[test]
    fn tiny_environment_invariants() {
        let env = generate_environment(&EnvConfig::sized(2, 1, 1, 2, 1.0, 3)).unwrap();
        for y in env.candidates(PromptId(0)) {
            assert!(env.features(PromptId(0), y).unwrap().norm() <= 1.0 + 1e-9);
        }
        let theta = env.theta_star()[0].as_slice();
        assert!(theta.iter().sum::<f64>().abs() <= 1e-9);
    }

    #[test]
    fn rejects_one_dimensional_features() {
        let err = generate_environment(&EnvConfig::sized(1, 1, 3, 2, 1.0, 0)).unwrap_err();
        assert!(err.to_string().contains("centering constraint"), "{err}");
    }

    #[test]
    fn invariants_hold_over_whole_environment() {
        let env = small();
        let max_norm = env.features.chunks(env.dim()).map(l2_norm).fold(0.0, f64::max);
        assert!((max_norm - 1.0).abs() < 1e-12);
        for t in env.theta_star() {
            assert!(t.norm() <= env.bound() + 1e-9);
            assert!(t.as_slice().iter().sum::<f64>().abs() <= 1e-9);
        }
        assert!((env.rho().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for x in env.prompts() {
            assert!(env.reference_response(x).0 < env.num_candidates());
            for y in env.candidates(x) {
                let r = env.true_reward(1, x, y).unwrap();
                assert!(r.abs() <= env.bound() + 1e-12);
            }
        }
    }

    #[test]
    fn similarity_is_symmetric_bounded_and_reflexive() {
        let env = small();
        for x in env.prompts().take(6) {
            for a in env.candidates(x) {
                assert_eq!(env.similarity_given_prompt(x, a, a), 1.0);
                for b in env.candidates(x) {
                    let s = env.similarity_given_prompt(x, a, b);
                    assert!((0.0..=1.0).contains(&s));
                    assert_eq!(s, env.similarity_given_prompt(x, b, a));
                }
            }
        }
    }

    #[test]
    fn hand_computed_reward() {
        let c = 0.4;
        let theta = RewardParameters::new(vec![c, -c], 1.0).unwrap();
        let phi = vec![0.6, 0.8];
        let env = Environment::from_tables(
            vec![vec![phi.clone(), vec![0.0, 0.0]]],
            vec![theta],
            vec![ResponseId(0)],
            1.0,
        )
        .unwrap();
        let r = env.true_reward(0, PromptId(0), ResponseId(0)).unwrap();
        assert!((r - (c * 0.6 - c * 0.8)).abs() < 1e-15);
        assert_eq!(env.true_reward(0, PromptId(0), ResponseId(1)).unwrap(), 0.0);
        assert!(env.true_reward(1, PromptId(0), ResponseId(0)).is_err());
        assert!(env.true_reward(0, PromptId(1), ResponseId(0)).is_err());
    }

    #[test]
    fn patients_hold_two_views() {
        let env = small();
        assert_eq!(env.patient_of(PromptId(0)), env.patient_of(PromptId(1)));
        assert_ne!(env.patient_of(PromptId(1)), env.patient_of(PromptId(2)));
    }

    #[test]
    fn power_law_rho_is_a_distribution() {
        let mut cfg = EnvConfig::sized(4, 2, 50, 3, 1.0, 2);
        cfg.prompt_distribution = PromptDistribution::PowerLaw { exponent: 1.2 };
        let env = generate_environment(&cfg).unwrap();
        assert!((env.rho().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(env.rho()[0] > env.rho()[49]);
    }

    #[test]
    fn scorers_have_one_lower_better_and_are_deterministic() {
        let env = small();
        let scorers = builtin_scorers(&env);
        assert_eq!(scorers.len(), 3);
        assert_eq!(
            scorers.iter().filter(|s| s.direction() == Direction::LowerBetter).count(),
            1
        );
        let x = PromptId(3);
        let reference = env.reference_response(x);
        for s in &scorers {
            for y in env.candidates(x) {
                assert_eq!(s.score(&env, x, y, reference), s.score(&env, x, y, reference));
            }
        }
    }

    #[test]
    fn lower_better_ranking_matches_negated_higher_better() {
        let env = small();
        let lower = RewardScorer::new(0, Direction::LowerBetter);
        let higher = RewardScorer::new(0, Direction::HigherBetter);
        let x = PromptId(5);
        let reference = env.reference_response(x);
        let mut by_lower: Vec<ResponseId> = env.candidates(x).collect();
        by_lower.sort_by(|a, b| {
            lower
                .oriented_score(&env, x, *b, reference)
                .total_cmp(&lower.oriented_score(&env, x, *a, reference))
        });
        let mut by_higher: Vec<ResponseId> = env.candidates(x).collect();
        by_higher.sort_by(|a, b| {
            higher
                .score(&env, x, *b, reference)
                .total_cmp(&higher.score(&env, x, *a, reference))
        });
        assert_eq!(by_lower, by_higher);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let env = small();
        let text = serde_json::to_string(&env).unwrap();
        let back: Environment = serde_json::from_str(&text).unwrap();
        assert_eq!(env, back);
    }
}
