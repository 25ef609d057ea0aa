//! Preference losses and the trainer.
//!
//! Both losses are logistic in a per-pair logit `h`:
//!
//! ```text
//! DPO:    h = β (Δ log π_θ − Δ log π_ref)
//! MODPO:  h = (β / w_k) (Δ log π_θ − Δ log π_sft) − (1 / w_k) w_{-k}ᵀ (R_{-k}(x, y_w) − R_{-k}(x, y_l))
//! loss  = mean −log σ(h)
//! ```
//!
//! where `Δ` is chosen-minus-rejected at the same prompt and weight. With
//! linear logits the normalizer cancels in `Δ log π`, so
//! `∇ Δ log π = (φ_w − φ_l) ⊗ [1, w]` exactly and gradients are closed-form.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::policy::{Policy, ReferencePolicy};
use crate::rng::{self, tag, Rng};
use crate::types::{dot, PreferenceDataset, PromptId, ResponseId, WeightVector};

/// Logistic function, stable for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log σ(z)` without overflow.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Bradley-Terry probability that the response with reward `r_w` is preferred
/// over the one with reward `r_l`.
pub fn bt_probability(r_w: f64, r_l: f64) -> f64 {
    sigmoid(r_w - r_l)
}

/// Draws a ground-truth preference between two candidates of `prompt` under
/// objective `k`; returns `(winner, loser)`.
pub fn sample_preference_label(
    env: &Environment,
    k: usize,
    prompt: PromptId,
    a: ResponseId,
    b: ResponseId,
    rng: &mut Rng,
) -> Result<(ResponseId, ResponseId)> {
    if a == b {
        return Err(Error::InvalidArgument("preference labels need two distinct candidates".into()));
    }
    let ra = env.true_reward(k, prompt, a)?;
    let rb = env.true_reward(k, prompt, b)?;
    let p = bt_probability(ra, rb);
    if rng.random::<f64>() < p {
        Ok((a, b))
    } else {
        Ok((b, a))
    }
}

/// Loss value with its gradient in parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: Policy,
}

/// Per-pair logit shared by both losses.
#[inline]
fn pair_logit(beta: f64, w_k: f64, delta_policy: f64, delta_ref: f64, margin: f64) -> f64 {
    (beta / w_k) * (delta_policy - delta_ref) - margin / w_k
}

fn delta_log_prob(policy: &Policy, env: &Environment, prompt: PromptId, chosen: ResponseId, rejected: ResponseId, w: &WeightVector) -> Result<f64> {
    let lp = policy.log_probs(env, prompt, w)?;
    env.check_ids(prompt, chosen)?;
    env.check_ids(prompt, rejected)?;
    Ok(lp[chosen.0] - lp[rejected.0])
}

/// Accumulates `−log σ(h)` and its gradient over a dataset.
fn logistic_loss(
    policy: &Policy,
    env: &Environment,
    dataset: &PreferenceDataset,
    w: &WeightVector,
    scale: f64,
    mut logit_of: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<LossAndGrad> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset {
            objective: dataset.objective(),
        });
    }
    let d = env.dim();
    let n = dataset.len() as f64;
    let mut loss = 0.0;
    let mut g_eff = vec![0.0; d];
    for (i, pair) in dataset.pairs().iter().enumerate() {
        let dp = delta_log_prob(policy, env, pair.prompt, pair.chosen, pair.rejected, w)?;
        let h = logit_of(i, dp)?;
        loss -= log_sigmoid(h);
        // d(−log σ(h))/dh = −σ(−h); dh/dΔlogπ = scale
        let coef = -sigmoid(-h) * scale / n;
        let (fw, fl) = (env.phi(pair.prompt.0, pair.chosen.0), env.phi(pair.prompt.0, pair.rejected.0));
        for j in 0..d {
            g_eff[j] += coef * (fw[j] - fl[j]);
        }
    }
    Ok(LossAndGrad {
        loss: loss / n,
        grad: expand_gradient(&g_eff, w),
    })
}

/// Maps a gradient with respect to the effective vector onto base and heads.
fn expand_gradient(g_eff: &[f64], w: &WeightVector) -> Policy {
    Policy {
        base: g_eff.to_vec(),
        heads: w
            .as_slice()
            .iter()
            .map(|wk| g_eff.iter().map(|g| wk * g).collect())
            .collect(),
    }
}

/// DPO loss of `policy` against `reference` on `dataset`, evaluated at `w`
/// (normally the dataset objective's one-hot weight).
pub fn dpo_loss(
    policy: &Policy,
    reference: &Policy,
    env: &Environment,
    dataset: &PreferenceDataset,
    w: &WeightVector,
    beta: f64,
) -> Result<LossAndGrad> {
    check_beta(beta)?;
    let pairs = dataset.pairs();
    logistic_loss(policy, env, dataset, w, beta, |i, dp| {
        let p = &pairs[i];
        let dr = delta_log_prob(reference, env, p.prompt, p.chosen, p.rejected, w)?;
        Ok(pair_logit(beta, 1.0, dp, dr, 0.0))
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// Implicit reward of a policy trained with DPO on one objective:
/// `R_k(x, y) = β [log π(y|x, ê_k) − log π_ref(y|x, ê_k)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRewardModel {
    pub objective: usize,
    pub policy: Policy,
    pub reference: ReferencePolicy,
    pub beta: f64,
}

impl MarginRewardModel {
    fn one_hot(&self) -> Result<WeightVector> {
        WeightVector::one_hot(self.policy.num_objectives(), self.objective)
    }

    pub fn reward(&self, env: &Environment, prompt: PromptId, response: ResponseId) -> Result<f64> {
        let w = self.one_hot()?;
        let lp = self.policy.log_prob(env, prompt, response, &w)?;
        let lr = self.reference.log_prob(env, prompt, response, &w)?;
        Ok(self.beta * (lp - lr))
    }

    /// `R_k(x, y_w) − R_k(x, y_l)`.
    pub fn reward_difference(&self, env: &Environment, prompt: PromptId, chosen: ResponseId, rejected: ResponseId) -> Result<f64> {
        let w = self.one_hot()?;
        let dp = delta_log_prob(&self.policy, env, prompt, chosen, rejected, &w)?;
        let dr = delta_log_prob(&self.reference, env, prompt, chosen, rejected, &w)?;
        Ok(self.beta * (dp - dr))
    }
}

/// `w_{-k}ᵀ (R_{-k}(x, y_w) − R_{-k}(x, y_l))` for one pair.
fn margin_for_pair(
    env: &Environment,
    margins: &[MarginRewardModel],
    w: &WeightVector,
    k: usize,
    prompt: PromptId,
    chosen: ResponseId,
    rejected: ResponseId,
) -> Result<f64> {
    let others = w.drop_component(k)?;
    let mut m = 0.0;
    for (slot, j) in (0..w.len()).filter(|&j| j != k).enumerate() {
        if others[slot] == 0.0 {
            continue;
        }
        let model = margins
            .iter()
            .find(|r| r.objective == j)
            .ok_or_else(|| Error::InvalidArgument(format!("missing margin reward model for objective {j}")))?;
        m += others[slot] * model.reward_difference(env, prompt, chosen, rejected)?;
    }
    Ok(m)
}

/// MODPO loss on dataset `D_k` at weight `w` with margins from the other
/// objectives' reward models.
pub fn modpo_loss(
    policy: &Policy,
    sft_ref: &Policy,
    env: &Environment,
    dataset: &PreferenceDataset,
    w: &WeightVector,
    margins: &[MarginRewardModel],
    beta: f64,
) -> Result<LossAndGrad> {
    check_beta(beta)?;
    let k = dataset.objective();
    if k >= w.len() {
        return Err(Error::IndexOutOfRange {
            what: "objective",
            index: k,
            len: w.len(),
        });
    }
    let w_k = w.get(k);
    if w_k <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "weight for objective {k} is zero; the MODPO loss divides by it"
        )));
    }
    let pairs = dataset.pairs();
    logistic_loss(policy, env, dataset, w, beta / w_k, |i, dp| {
        let p = &pairs[i];
        let dr = delta_log_prob(sft_ref, env, p.prompt, p.chosen, p.rejected, w)?;
        let m = margin_for_pair(env, margins, w, k, p.prompt, p.chosen, p.rejected)?;
        Ok(pair_logit(beta, w_k, dp, dr, m))
    })
}

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub seed: u64,
    /// Order in which datasets are traversed; `None` means `0..N`.
    pub dataset_order: Option<Vec<usize>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 60,
            batch_size: 16,
            beta: 0.5,
            seed: 0,
            dataset_order: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    fn order(&self, n: usize) -> Result<Vec<usize>> {
        match &self.dataset_order {
            None => Ok((0..n).collect()),
            Some(order) => {
                let mut sorted = order.clone();
                sorted.sort_unstable();
                if sorted != (0..n).collect::<Vec<_>>() {
                    return Err(Error::InvalidArgument(format!("dataset_order {order:?} is not a permutation of 0..{n}")));
                }
                Ok(order.clone())
            }
        }
    }
}

/// One row of the per-epoch training log; epoch 0 is the loss before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: usize,
    pub epoch: usize,
    pub loss: f64,
}

/// A pair reduced to what the optimizer needs.
struct Prepared {
    dphi: Vec<f64>,
    /// `β/w_k · Δ log π_ref − m / w_k`, constant during training.
    offset: f64,
}

/// Gradient descent on `mean −log σ(scale · dphiᵀ v − offset)` where `v` is the
/// effective parameter vector at `w`.
struct Phase<'a> {
    pairs: Vec<Prepared>,
    scale: f64,
    w: &'a WeightVector,
}

impl Phase<'_> {
    fn full_loss(&self, eff: &[f64]) -> f64 {
        let total: f64 = self
            .pairs
            .iter()
            .map(|p| -log_sigmoid(self.scale * dot(&p.dphi, eff) - p.offset))
            .sum();
        total / self.pairs.len() as f64
    }

    fn run(&self, policy: &mut Policy, config: &TrainConfig, phase: usize, rng: &mut Rng, log: &mut Vec<EpochLog>) -> Result<()> {
        let d = policy.dim();
        let mut eff = policy.effective(self.w)?;
        log.push(EpochLog {
            phase,
            epoch: 0,
            loss: self.full_loss(&eff),
        });
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        let mut g = vec![0.0; d];
        for epoch in 1..=config.epochs {
            order.shuffle(rng);
            for batch in order.chunks(config.batch_size) {
                g.iter_mut().for_each(|v| *v = 0.0);
                for &i in batch {
                    let p = &self.pairs[i];
                    let h = self.scale * dot(&p.dphi, &eff) - p.offset;
                    let coef = -sigmoid(-h) * self.scale / batch.len() as f64;
                    for (gj, dj) in g.iter_mut().zip(&p.dphi) {
                        *gj += coef * dj;
                    }
                }
                let step = expand_gradient(&g, self.w);
                policy.add_scaled(-config.learning_rate, &step);
                eff = policy.effective(self.w)?;
            }
            let loss = self.full_loss(&eff);
            if !loss.is_finite() || !policy.is_finite() {
                return Err(Error::Diverged { phase, epoch, loss });
            }
            log.push(EpochLog { phase, epoch, loss });
        }
        Ok(())
    }
}

fn prepare(
    env: &Environment,
    dataset: &PreferenceDataset,
    reference: &Policy,
    w: &WeightVector,
    beta: f64,
    w_k: f64,
    margin: impl Fn(PromptId, ResponseId, ResponseId) -> Result<f64>,
) -> Result<Vec<Prepared>> {
    let v_ref = reference.effective(w)?;
    dataset
        .pairs()
        .iter()
        .map(|p| {
            env.check_ids(p.prompt, p.chosen)?;
            env.check_ids(p.prompt, p.rejected)?;
            let (fw, fl) = (env.phi(p.prompt.0, p.chosen.0), env.phi(p.prompt.0, p.rejected.0));
            let dphi: Vec<f64> = fw.iter().zip(fl).map(|(a, b)| a - b).collect();
            let d_ref = dot(&dphi, &v_ref);
            let m = margin(p.prompt, p.chosen, p.rejected)?;
            Ok(Prepared {
                dphi,
                offset: (beta / w_k) * d_ref + m / w_k,
            })
        })
        .collect()
}

fn phase_stream(config: &TrainConfig, w: &WeightVector, phase: usize) -> Rng {
    let mut tags = vec![tag::SHUFFLE, phase as u64];
    tags.extend(w.as_slice().iter().map(|v| v.to_bits()));
    rng::stream(config.seed, &tags)
}

/// Trains one DPO reward model per objective, each starting from `init` at
/// its one-hot weight.
pub fn train_margin_models(
    init: &Policy,
    reference: &ReferencePolicy,
    env: &Environment,
    datasets: &[PreferenceDataset],
    config: &TrainConfig,
) -> Result<(Vec<MarginRewardModel>, Vec<EpochLog>)> {
    config.validate()?;
    let n = init.num_objectives();
    if datasets.len() != n {
        return Err(Error::DimensionMismatch {
            what: "datasets",
            expected: n,
            got: datasets.len(),
        });
    }
    let results: Vec<Result<(MarginRewardModel, Vec<EpochLog>)>> = datasets
        .par_iter()
        .map(|ds| {
            let k = ds.objective();
            let w = WeightVector::one_hot(n, k)?;
            let mut policy = init.clone();
            let mut log = Vec::new();
            if ds.is_empty() {
                log::warn!("dataset for objective {k} is empty; its margin reward is identically zero");
            } else {
                let pairs = prepare(env, ds, reference, &w, config.beta, 1.0, |_, _, _| Ok(0.0))?;
                let phase = Phase {
                    pairs,
                    scale: config.beta,
                    w: &w,
                };
                let mut rng = phase_stream(config, &w, k);
                phase.run(&mut policy, config, k, &mut rng, &mut log)?;
            }
            Ok((
                MarginRewardModel {
                    objective: k,
                    policy,
                    reference: reference.clone(),
                    beta: config.beta,
                },
                log,
            ))
        })
        .collect();
    let mut models = Vec::with_capacity(n);
    let mut log = Vec::new();
    for r in results {
        let (m, l) = r?;
        models.push(m);
        log.extend(l);
    }
    Ok((models, log))
}

/// Sequential MODPO over `datasets` at weight `w`, starting from `init`.
///
/// Datasets whose weight is zero are skipped with a warning.
pub fn train_modpo(
    init: &Policy,
    sft_ref: &ReferencePolicy,
    env: &Environment,
    datasets: &[PreferenceDataset],
    w: &WeightVector,
    margins: &[MarginRewardModel],
    config: &TrainConfig,
) -> Result<(Policy, Vec<EpochLog>)> {
    config.validate()?;
    let order = config.order(datasets.len())?;
    let mut policy = init.clone();
    let mut log = Vec::new();
    for idx in order {
        let ds = &datasets[idx];
        let k = ds.objective();
        if k >= w.len() {
            return Err(Error::IndexOutOfRange {
                what: "objective",
                index: k,
                len: w.len(),
            });
        }
        let w_k = w.get(k);
        if w_k == 0.0 {
            log::debug!("weight {:?} gives objective {k} zero weight; skipping its dataset", w.as_slice());
            continue;
        }
        if ds.is_empty() {
            log::warn!("dataset for objective {k} is empty; skipping");
            continue;
        }
        let pairs = prepare(env, ds, sft_ref, w, config.beta, w_k, |x, yw, yl| {
            margin_for_pair(env, margins, w, k, x, yw, yl)
        })?;
        let phase = Phase {
            pairs,
            scale: config.beta / w_k,
            w,
        };
        let mut rng = phase_stream(config, w, k);
        phase.run(&mut policy, config, k, &mut rng, &mut log)?;
    }
    Ok((policy, log))
}

/// All weights whose components are positive multiples of `step` summing to
/// one, plus the `n` one-hot vertices, in descending lexicographic order.
pub fn weight_grid(n: usize, step: f64) -> Result<Vec<WeightVector>> {
    if n == 0 {
        return Err(Error::InvalidArgument("weight grid needs at least one objective".into()));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!("grid step must lie in (0, 1], got {step}")));
    }
    let units = (1.0 / step).round() as usize;
    if units == 0 || (units as f64 * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("grid step {step} does not divide 1 evenly")));
    }
    let mut points: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::with_capacity(n);
    compositions(units, n, &mut current, &mut points);
    for k in 0..n {
        let mut v = vec![0; n];
        v[k] = units;
        points.push(v);
    }
    points.sort_unstable_by(|a, b| b.cmp(a));
    points.dedup();
    points
        .into_iter()
        .map(|counts| {
            let values: Vec<f64> = counts.iter().map(|&c| c as f64 / units as f64).collect();
            WeightVector::new(&values)
        })
        .collect()
}

/// Compositions of `total` into `parts` positive integers.
fn compositions(total: usize, parts: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if parts == 1 {
        if total >= 1 {
            current.push(total);
            out.push(current.clone());
            current.pop();
        }
        return;
    }
    for first in 1..total {
        if total - first < parts - 1 {
            break;
        }
        current.push(first);
        compositions(total - first, parts - 1, current, out);
        current.pop();
    }
}

/// Result of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub weight: WeightVector,
    pub policy: Policy,
    pub log: Vec<EpochLog>,
}

/// Independent MODPO runs, one per weight, each from `init`. Results follow
/// the order of `grid`.
pub fn sweep(
    init: &Policy,
    sft_ref: &ReferencePolicy,
    env: &Environment,
    datasets: &[PreferenceDataset],
    margins: &[MarginRewardModel],
    grid: &[WeightVector],
    config: &TrainConfig,
) -> Result<Vec<SweepResult>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("weight grid is empty".into()));
    }
    grid.par_iter()
        .map(|w| {
            let (policy, log) = train_modpo(init, sft_ref, env, datasets, w, margins, config)?;
            Ok(SweepResult {
                weight: w.clone(),
                policy,
                log,
            })
        })
        .collect()
}
