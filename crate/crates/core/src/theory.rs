//! Estimation and sub-optimality bounds for linear Bradley-Terry rewards.
//!
//! Everything here is exact on finite prompt and candidate sets: objective
//! values are sums over `ρ` and the policy, not samples.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{log_sigmoid, sample_preference_label, sigmoid};
use crate::env::{generate_environment, EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::policy::{log_sum_exp, optimal_policy_oracle, weighted_reward, Distributions};
use crate::rng::{self, tag};
use crate::types::{dot, l2_norm, PreferenceDataset, PreferencePair, PromptId, ResponseId, RewardParameters, WeightVector};

/// A preference observation: `winner` beat `loser` at `prompt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub prompt: PromptId,
    pub winner: ResponseId,
    pub loser: ResponseId,
}

impl From<&PreferencePair> for LabeledPair {
    fn from(p: &PreferencePair) -> Self {
        Self {
            prompt: p.prompt,
            winner: p.chosen,
            loser: p.rejected,
        }
    }
}

fn difference(env: &Environment, p: &LabeledPair) -> Result<Vec<f64>> {
    env.check_ids(p.prompt, p.winner)?;
    env.check_ids(p.prompt, p.loser)?;
    let (a, b) = (env.phi(p.prompt.0, p.winner.0), env.phi(p.prompt.0, p.loser.0));
    Ok(a.iter().zip(b).map(|(u, v)| u - v).collect())
}

/// `Σ_D = (1/K) Σ (φ^w − φ^l)(φ^w − φ^l)ᵀ` together with the regularizer used
/// wherever it is inverted.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub pairs: usize,
    pub lambda: f64,
}

impl DesignMatrix {
    pub fn from_pairs(env: &Environment, pairs: &[LabeledPair], lambda: f64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("design matrix needs at least one pair".into()));
        }
        check_lambda(lambda)?;
        let d = env.dim();
        let mut m = DMatrix::zeros(d, d);
        for p in pairs {
            let v = DVector::from_vec(difference(env, p)?);
            m.ger(1.0, &v, &v, 1.0);
        }
        m /= pairs.len() as f64;
        Ok(Self {
            matrix: m,
            pairs: pairs.len(),
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.clone().symmetric_eigenvalues().min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.matrix.clone().symmetric_eigenvalues().max()
    }

    fn regularized(&self) -> DMatrix<f64> {
        &self.matrix + DMatrix::identity(self.dim(), self.dim()) * self.lambda
    }

    /// `√(vᵀ (Σ + λI) v)`.
    pub fn norm(&self, v: &[f64]) -> Result<f64> {
        let v = self.vector(v)?;
        Ok(v.dot(&(self.regularized() * &v)).max(0.0).sqrt())
    }

    /// `√(vᵀ (Σ + λI)^{-1} v)`, by Cholesky solve.
    pub fn inverse_norm(&self, v: &[f64]) -> Result<f64> {
        let v = self.vector(v)?;
        if self.lambda <= 0.0 {
            return Err(Error::InvalidArgument("inverse norm needs lambda > 0".into()));
        }
        let chol = self
            .regularized()
            .cholesky()
            .ok_or_else(|| Error::Invariant("regularized design matrix is not positive definite".into()))?;
        Ok(v.dot(&chol.solve(&v)).max(0.0).sqrt())
    }

    fn vector(&self, v: &[f64]) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "vector",
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(DVector::from_column_slice(v))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

/// Design matrix of a preference dataset.
pub fn sigma_matrix(env: &Environment, dataset: &PreferenceDataset, lambda: f64) -> Result<DesignMatrix> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset {
            objective: dataset.objective(),
        });
    }
    let pairs: Vec<LabeledPair> = dataset.pairs().iter().map(LabeledPair::from).collect();
    DesignMatrix::from_pairs(env, &pairs, lambda)
}

/// Solver limits for the constrained MLE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleOptions {
    pub max_iterations: usize,
    /// Stop once an iterate moves less than this in Euclidean norm.
    pub tolerance: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub theta: RewardParameters,
    pub converged: bool,
    pub iterations: usize,
    /// Penalized log-likelihood at `theta`.
    pub objective: f64,
}

/// Maximizes `Σ log σ(θᵀ(φ^win − φ^lose)) − (λ/2)‖θ‖²` over `Θ_B` by
/// accelerated projected gradient ascent with adaptive restart.
pub fn mle_fit(env: &Environment, pairs: &[LabeledPair], lambda: f64, bound: f64, options: MleOptions) -> Result<MleFit> {
    check_lambda(lambda)?;
    let d = env.dim();
    let diffs: Vec<Vec<f64>> = pairs.iter().map(|p| difference(env, p)).collect::<Result<_>>()?;
    let objective = |theta: &[f64]| -> f64 {
        diffs.iter().map(|z| log_sigmoid(dot(theta, z))).sum::<f64>() - 0.5 * lambda * dot(theta, theta)
    };
    let gradient = |theta: &[f64]| -> Vec<f64> {
        let mut g: Vec<f64> = theta.iter().map(|t| -lambda * t).collect();
        for z in &diffs {
            let s = sigmoid(-dot(theta, z));
            for (gj, zj) in g.iter_mut().zip(z) {
                *gj += s * zj;
            }
        }
        g
    };
    let lipschitz = if diffs.is_empty() {
        lambda
    } else {
        let design = DesignMatrix::from_pairs(env, pairs, lambda)?;
        0.25 * pairs.len() as f64 * design.max_eigenvalue().max(0.0) + lambda
    };
    if lipschitz <= 0.0 {
        let theta = RewardParameters::zeros(d, bound)?;
        return Ok(MleFit {
            objective: objective(theta.as_slice()),
            theta,
            converged: true,
            iterations: 0,
        });
    }
    let step = 1.0 / lipschitz;
    let mut theta = vec![0.0; d];
    let mut y = theta.clone();
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let g = gradient(&y);
        let raw: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a + step * b).collect();
        let next = RewardParameters::project(&raw, bound)?.as_slice().to_vec();
        let moved: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        if l2_norm(&moved) <= options.tolerance {
            theta = next;
            converged = true;
            break;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // restart momentum when it points against the latest step
        let against: f64 = y.iter().zip(&next).zip(&moved).map(|((yi, ni), mi)| (yi - ni) * mi).sum();
        if against > 0.0 {
            t = 1.0;
            y = next.clone();
        } else {
            let beta = (t - 1.0) / t_next;
            y = next.iter().zip(&moved).map(|(n, m)| n + beta * m).collect();
            t = t_next;
        }
        theta = next;
    }
    if !converged {
        log::warn!("MLE stopped after {iterations} iterations without meeting tolerance {}", options.tolerance);
    }
    let theta = RewardParameters::project(&theta, bound)?;
    Ok(MleFit {
        objective: objective(theta.as_slice()),
        theta,
        converged,
        iterations,
    })
}

/// `γ = 1 / (2 + e^{−B} + e^{B})`, the smallest logistic slope on rewards in `[−B, B]`.
pub fn gamma(bound: f64) -> f64 {
    1.0 / (2.0 + (-bound).exp() + bound.exp())
}

/// Confidence radius `ϱ = C √((d + log(1/δ)) / (γ² K) + λ B²)`.
pub fn rho_bound(d: usize, k: usize, delta: f64, lambda: f64, bound: f64, c: f64) -> f64 {
    let g = gamma(bound);
    c * ((d as f64 + (1.0 / delta).ln()) / (g * g * k as f64) + lambda * bound * bound).sqrt()
}

fn check_distributions(env: &Environment, what: &'static str, p: &Distributions) -> Result<()> {
    if p.num_prompts() != env.num_prompts() {
        return Err(Error::DimensionMismatch {
            what,
            expected: env.num_prompts(),
            got: p.num_prompts(),
        });
    }
    Ok(())
}

fn check_theta(theta: &[RewardParameters], w: &WeightVector) -> Result<()> {
    if theta.len() != w.len() {
        return Err(Error::DimensionMismatch {
            what: "reward parameter set",
            expected: w.len(),
            got: theta.len(),
        });
    }
    Ok(())
}

/// Exact `E_{x∼ρ} E_{y∼π}[wᵀθᵀφ(x, y)]`.
pub fn expected_reward(env: &Environment, policy: &Distributions, theta: &[RewardParameters], w: &WeightVector) -> Result<f64> {
    check_distributions(env, "policy distributions", policy)?;
    check_theta(theta, w)?;
    Ok(env
        .rho()
        .iter()
        .enumerate()
        .map(|(x, px)| {
            let row: f64 = policy
                .log_row(x)
                .iter()
                .enumerate()
                .map(|(y, l)| l.exp() * weighted_reward(env, theta, w, x, y))
                .sum();
            px * row
        })
        .sum())
}

/// Exact `E_{x∼ρ} KL(π(·|x) ‖ π_ref(·|x))`.
pub fn expected_kl(env: &Environment, policy: &Distributions, reference: &Distributions) -> Result<f64> {
    check_distributions(env, "policy distributions", policy)?;
    check_distributions(env, "reference distributions", reference)?;
    let mut total = 0.0;
    for (x, px) in env.rho().iter().enumerate() {
        total += px * crate::policy::kl_divergence(policy, reference, PromptId(x))?;
    }
    Ok(total)
}

/// `J(π) = E_ρ E_π[wᵀθᵀφ] − β E_ρ KL(π ‖ π_ref)`.
pub fn j_value(
    env: &Environment,
    policy: &Distributions,
    theta: &[RewardParameters],
    w: &WeightVector,
    beta: f64,
    reference: &Distributions,
) -> Result<f64> {
    check_beta(beta)?;
    Ok(expected_reward(env, policy, theta, w)? - beta * expected_kl(env, policy, reference)?)
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
    }
    Ok(())
}

/// Closed form of `J` at the Gibbs optimum: `β E_ρ[log Σ_y π_ref(y|x) e^{wᵀθᵀφ/β}]`.
pub fn log_partition_value(env: &Environment, theta: &[RewardParameters], w: &WeightVector, beta: f64, reference: &Distributions) -> Result<f64> {
    check_beta(beta)?;
    check_theta(theta, w)?;
    check_distributions(env, "reference distributions", reference)?;
    Ok(env
        .rho()
        .iter()
        .enumerate()
        .map(|(x, px)| {
            let terms: Vec<f64> = reference
                .log_row(x)
                .iter()
                .enumerate()
                .map(|(y, l)| l + weighted_reward(env, theta, w, x, y) / beta)
                .collect();
            px * beta * log_sum_exp(&terms)
        })
        .sum())
}

/// `J(π*, θ*) − J(π̂, θ*)` with `π*` the Gibbs oracle of the true rewards.
pub fn suboptimality(env: &Environment, pi_hat: &Distributions, w: &WeightVector, beta: f64, reference: &Distributions) -> Result<f64> {
    let theta = env.theta_star();
    let pi_star = optimal_policy_oracle(env, theta, w, beta, reference)?;
    Ok(j_value(env, &pi_star, theta, w, beta, reference)? - j_value(env, pi_hat, theta, w, beta, reference)?)
}

/// The three-term split of the sub-optimality gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// `E_{π*}[wᵀ(θ* − θ̂)ᵀφ]`
    pub term_i: f64,
    /// `E_{π̂}[wᵀ(θ̂ − θ*)ᵀφ]`
    pub term_ii: f64,
    /// `J(π*, θ̂) − J(π̂, θ̂)`
    pub term_iii: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.term_i + self.term_ii + self.term_iii
    }
}

pub fn subopt_decomposition(
    env: &Environment,
    pi_hat: &Distributions,
    theta_hat: &[RewardParameters],
    w: &WeightVector,
    beta: f64,
    reference: &Distributions,
) -> Result<Decomposition> {
    let theta_star = env.theta_star();
    let pi_star = optimal_policy_oracle(env, theta_star, w, beta, reference)?;
    let star_on = |p: &Distributions| expected_reward(env, p, theta_star, w);
    let hat_on = |p: &Distributions| expected_reward(env, p, theta_hat, w);
    Ok(Decomposition {
        term_i: star_on(&pi_star)? - hat_on(&pi_star)?,
        term_ii: hat_on(pi_hat)? - star_on(pi_hat)?,
        term_iii: j_value(env, &pi_star, theta_hat, w, beta, reference)? - j_value(env, pi_hat, theta_hat, w, beta, reference)?,
    })
}

/// Exact `E_{x∼ρ, y∼π}[φ(x, y)]`.
pub fn mean_features(env: &Environment, policy: &Distributions) -> Result<Vec<f64>> {
    check_distributions(env, "policy distributions", policy)?;
    let mut v = vec![0.0; env.dim()];
    for (x, px) in env.rho().iter().enumerate() {
        for (y, l) in policy.log_row(x).iter().enumerate() {
            let weight = px * l.exp();
            for (vj, fj) in v.iter_mut().zip(env.phi(x, y)) {
                *vj += weight * fj;
            }
        }
    }
    Ok(v)
}

/// `‖E_{ρ,π}[φ]‖` in the `(Σ + λI)^{-1}` norm.
pub fn coverage_norm(env: &Environment, design: &DesignMatrix, policy: &Distributions) -> Result<f64> {
    design.inverse_norm(&mean_features(env, policy)?)
}

/// `2ϱ Σ_k w_k ‖E_{ρ,π*}[φ]‖_{(Σ_k + λI)^{-1}}`.
pub fn theorem1_bound(env: &Environment, designs: &[DesignMatrix], pi_star: &Distributions, w: &WeightVector, rho: f64) -> Result<f64> {
    if designs.len() != w.len() {
        return Err(Error::DimensionMismatch {
            what: "design matrices",
            expected: w.len(),
            got: designs.len(),
        });
    }
    let v = mean_features(env, pi_star)?;
    let mut total = 0.0;
    for (design, wk) in designs.iter().zip(w.as_slice()) {
        if *wk > 0.0 {
            total += wk * design.inverse_norm(&v)?;
        }
    }
    Ok(2.0 * rho * total)
}

/// Per-objective `(coverage of π*, coverage of π̂)`.
pub fn coverage_comparison(env: &Environment, designs: &[DesignMatrix], pi_star: &Distributions, pi_hat: &Distributions) -> Result<Vec<(f64, f64)>> {
    let (vs, vh) = (mean_features(env, pi_star)?, mean_features(env, pi_hat)?);
    designs
        .iter()
        .map(|d| Ok((d.inverse_norm(&vs)?, d.inverse_norm(&vh)?)))
        .collect()
}

/// Settings for the Monte-Carlo bound checks. Each trial draws a fresh
/// environment with a uniform reference policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub dim: usize,
    pub objectives: usize,
    pub num_prompts: usize,
    pub candidates: usize,
    pub pairs: usize,
    pub delta: f64,
    pub lambda: f64,
    pub bound: f64,
    pub beta: f64,
    /// Constant in front of the confidence radius.
    pub c: f64,
    pub trials: usize,
    pub calibration_trials: usize,
    pub seed: u64,
    pub mle: MleOptions,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            objectives: 3,
            num_prompts: 20,
            candidates: 8,
            pairs: 500,
            delta: 0.1,
            lambda: 0.01,
            bound: 1.0,
            beta: 0.5,
            c: 1.0,
            trials: 500,
            calibration_trials: 1000,
            seed: 0,
            mle: MleOptions::default(),
        }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim < 2 {
            return bad(format!("theory dim must be >= 2, got {}", self.dim));
        }
        if self.objectives == 0 || self.num_prompts == 0 || self.candidates < 2 || self.pairs == 0 {
            return bad("theory needs objectives >= 1, prompts >= 1, candidates >= 2, pairs >= 1".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.lambda > 0.0) || !(self.bound > 0.0) || !(self.beta > 0.0) || !(self.c > 0.0) {
            return bad("lambda, bound, beta and c must be positive".into());
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        rho_bound(self.dim, self.pairs, self.delta, self.lambda, self.bound, self.c)
    }

    /// `δ + 2√(δ(1−δ)/trials)`.
    pub fn violation_threshold(&self) -> f64 {
        self.delta + 2.0 * (self.delta * (1.0 - self.delta) / self.trials as f64).sqrt()
    }

    fn environment(&self, objectives: usize, seed: u64) -> Result<Environment> {
        generate_environment(&EnvConfig::sized(self.dim, objectives, self.num_prompts, self.candidates, self.bound, seed))
    }
}

/// `K` pairs with prompts from `ρ`, two distinct uniform candidates, and a
/// Bradley-Terry label from objective `k`.
pub fn sample_labeled_pairs(env: &Environment, k: usize, count: usize, rng: &mut rng::Rng) -> Result<Vec<LabeledPair>> {
    if env.num_candidates() < 2 {
        return Err(Error::InvalidArgument("labeled pairs need at least two candidates".into()));
    }
    let cdf: Vec<f64> = env
        .rho()
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    (0..count)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
            let x = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
            let a = rng.random_range(0..env.num_candidates());
            let mut b = rng.random_range(0..env.num_candidates() - 1);
            if b >= a {
                b += 1;
            }
            let (winner, loser) = sample_preference_label(env, k, PromptId(x), ResponseId(a), ResponseId(b), rng)?;
            Ok(LabeledPair {
                prompt: PromptId(x),
                winner,
                loser,
            })
        })
        .collect()
}

/// One estimation trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaTrial {
    pub trial: usize,
    pub seed: u64,
    pub pairs: usize,
    pub dim: usize,
    pub rho: f64,
    /// `‖θ̂ − θ*‖_{Σ+λI}`
    pub error: f64,
    pub converged: bool,
    pub violated: bool,
}

fn estimation_error(config: &TheoryConfig, seed: u64) -> Result<(f64, bool)> {
    let env = config.environment(1, rng::derive_seed(seed, &[tag::ENV]))?;
    let mut r = rng::stream(seed, &[tag::PAIRS]);
    let pairs = sample_labeled_pairs(&env, 0, config.pairs, &mut r)?;
    let fit = mle_fit(&env, &pairs, config.lambda, config.bound, config.mle)?;
    let design = DesignMatrix::from_pairs(&env, &pairs, config.lambda)?;
    let diff: Vec<f64> = fit
        .theta
        .as_slice()
        .iter()
        .zip(env.theta_star()[0].as_slice())
        .map(|(a, b)| a - b)
        .collect();
    Ok((design.norm(&diff)?, fit.converged))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Summary {
    pub c: f64,
    pub rho: f64,
    pub trials: usize,
    pub violations: usize,
    pub fraction: f64,
    pub threshold: f64,
    pub reports: Vec<LemmaTrial>,
}

/// Fraction of fresh trials whose MLE error exceeds the radius.
pub fn verify_lemma1(config: &TheoryConfig) -> Result<Lemma1Summary> {
    config.validate()?;
    let rho = config.rho();
    let reports: Vec<LemmaTrial> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let seed = rng::derive_seed(config.seed, &[tag::TRIAL, t as u64]);
            let (error, converged) = estimation_error(config, seed)?;
            Ok(LemmaTrial {
                trial: t,
                seed,
                pairs: config.pairs,
                dim: config.dim,
                rho,
                error,
                converged,
                violated: error > rho,
            })
        })
        .collect::<Result<_>>()?;
    let violations = reports.iter().filter(|r| r.violated).count();
    Ok(Lemma1Summary {
        c: config.c,
        rho,
        trials: config.trials,
        violations,
        fraction: violations as f64 / config.trials as f64,
        threshold: config.violation_threshold(),
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub c: f64,
    pub trials: usize,
    /// Sorted `error / ϱ(C = 1)` over the calibration suite.
    pub ratios: Vec<f64>,
}

/// Smallest `C` such that at most `⌊δ n⌋` of `n` calibration trials violate
/// the radius. Calibration trials use their own seed streams, disjoint from
/// the verification trials.
pub fn calibrate_c(config: &TheoryConfig) -> Result<Calibration> {
    config.validate()?;
    let n = config.calibration_trials;
    if n == 0 {
        return Err(Error::Config("calibration_trials must be >= 1".into()));
    }
    let unit = TheoryConfig { c: 1.0, ..config.clone() }.rho();
    let mut ratios: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|t| {
            let seed = rng::derive_seed(config.seed, &[tag::CALIBRATION, t as u64]);
            Ok(estimation_error(config, seed)?.0 / unit)
        })
        .collect::<Result<_>>()?;
    ratios.sort_by(f64::total_cmp);
    let allowed = (config.delta * n as f64).floor() as usize;
    let c = ratios[n - 1 - allowed.min(n - 1)];
    Ok(Calibration { c, trials: n, ratios })
}

/// One (trial, weight) comparison of the gap against the bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub trial: usize,
    pub seed: u64,
    pub weight: String,
    #[serde(rename = "K")]
    pub pairs: usize,
    pub d: usize,
    pub rho: f64,
    pub subopt: f64,
    pub bound: f64,
    pub violated: bool,
    pub coverage_star: Vec<f64>,
    pub coverage_hat: Vec<f64>,
}

/// CSV columns for [`BoundReport`] batches.
pub const BOUND_CSV_HEADER: [&str; 8] = ["trial", "weight", "K", "d", "rho", "subopt", "bound", "violated"];

impl BoundReport {
    pub fn csv_record(&self) -> [String; 8] {
        [
            self.trial.to_string(),
            self.weight.clone(),
            self.pairs.to_string(),
            self.d.to_string(),
            format!("{:.16e}", self.rho),
            format!("{:.16e}", self.subopt),
            format!("{:.16e}", self.bound),
            self.violated.to_string(),
        ]
    }
}

/// The weights checked per trial: every one-hot vertex plus the uniform weight.
pub fn standard_weights(n: usize) -> Result<Vec<WeightVector>> {
    let mut ws: Vec<WeightVector> = (0..n).map(|k| WeightVector::one_hot(n, k)).collect::<Result<_>>()?;
    if n > 1 {
        ws.push(WeightVector::uniform(n)?);
    }
    Ok(ws)
}

fn bound_trial(config: &TheoryConfig, trial: usize, seed: u64, rho: f64, inject_truth: bool) -> Result<Vec<BoundReport>> {
    let n = config.objectives;
    let env = config.environment(n, rng::derive_seed(seed, &[tag::ENV]))?;
    let reference = Distributions::uniform(&env);
    let mut designs = Vec::with_capacity(n);
    let mut theta_hat = Vec::with_capacity(n);
    for k in 0..n {
        let mut r = rng::stream(seed, &[tag::PAIRS, k as u64]);
        let pairs = sample_labeled_pairs(&env, k, config.pairs, &mut r)?;
        designs.push(DesignMatrix::from_pairs(&env, &pairs, config.lambda)?);
        theta_hat.push(if inject_truth {
            env.theta_star()[k].clone()
        } else {
            mle_fit(&env, &pairs, config.lambda, config.bound, config.mle)?.theta
        });
    }
    standard_weights(n)?
        .iter()
        .map(|w| {
            let pi_star = optimal_policy_oracle(&env, env.theta_star(), w, config.beta, &reference)?;
            let pi_hat = optimal_policy_oracle(&env, &theta_hat, w, config.beta, &reference)?;
            let subopt = suboptimality(&env, &pi_hat, w, config.beta, &reference)?;
            let bound = theorem1_bound(&env, &designs, &pi_star, w, rho)?;
            let coverage = coverage_comparison(&env, &designs, &pi_star, &pi_hat)?;
            Ok(BoundReport {
                trial,
                seed,
                weight: w.label(),
                pairs: config.pairs,
                d: config.dim,
                rho,
                subopt,
                bound,
                violated: subopt > bound,
                coverage_star: coverage.iter().map(|c| c.0).collect(),
                coverage_hat: coverage.iter().map(|c| c.1).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Summary {
    pub c: f64,
    pub rho: f64,
    pub trials: usize,
    /// Trials in which at least one weight's gap exceeds its bound.
    pub violated_trials: usize,
    pub fraction: f64,
    pub threshold: f64,
    pub min_subopt: f64,
    /// Quartiles of `bound / gap` over reports with a positive gap.
    pub ratio_quantiles: Option<crate::pdc::Quantiles>,
    /// Fraction of (report, objective) entries where π̂'s coverage norm does not exceed π*'s.
    pub coverage_rate: f64,
    pub reports: Vec<BoundReport>,
}

/// Compares the oracle policy of the fitted rewards against the bound.
pub fn verify_theorem1(config: &TheoryConfig) -> Result<Theorem1Summary> {
    verify_theorem1_with(config, false)
}

/// As [`verify_theorem1`]; with `inject_truth` the fitted rewards are
/// replaced by the true ones.
pub fn verify_theorem1_with(config: &TheoryConfig, inject_truth: bool) -> Result<Theorem1Summary> {
    config.validate()?;
    let rho = config.rho();
    let per_trial: Vec<Vec<BoundReport>> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let seed = rng::derive_seed(config.seed, &[tag::TRIAL, t as u64, config.objectives as u64]);
            bound_trial(config, t, seed, rho, inject_truth)
        })
        .collect::<Result<_>>()?;
    let violated_trials = per_trial.iter().filter(|rs| rs.iter().any(|r| r.violated)).count();
    let reports: Vec<BoundReport> = per_trial.into_iter().flatten().collect();
    let ratios: Vec<f64> = reports.iter().filter(|r| r.subopt > 0.0).map(|r| r.bound / r.subopt).collect();
    let (mut hits, mut total) = (0usize, 0usize);
    for r in &reports {
        for (s, h) in r.coverage_star.iter().zip(&r.coverage_hat) {
            total += 1;
            hits += usize::from(h <= s);
        }
    }
    Ok(Theorem1Summary {
        c: config.c,
        rho,
        trials: config.trials,
        violated_trials,
        fraction: violated_trials as f64 / config.trials as f64,
        threshold: config.violation_threshold(),
        min_subopt: reports.iter().map(|r| r.subopt).fold(f64::INFINITY, f64::min),
        ratio_quantiles: crate::pdc::Quantiles::of(&ratios),
        coverage_rate: if total == 0 { 1.0 } else { hits as f64 / total as f64 },
        reports,
    })
}
