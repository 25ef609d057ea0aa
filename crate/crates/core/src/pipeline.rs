//! The self-iteration loop, weight-configuration evaluation, and Pareto fronts.
//!
//! One iteration runs dataset construction from the current reference,
//! margin reward models, a MODPO sweep over the weight grid, and evaluation.
//! The policy trained at the configured next-reference weight (uniform by
//! default) becomes the reference of the following iteration.

use serde::{Deserialize, Serialize};

use crate::align::{self, EpochLog, SweepResult, TrainConfig};
use crate::env::{Environment, Scorer};
use crate::error::{Error, Result};
use crate::pdc::{self, BuildReport, PdcConfig, Quantiles};
use crate::policy::{Distributions, Policy, ReferencePolicy};
use crate::rng::{self, tag};
use crate::theory;
use crate::types::{Direction, Hyperparameters, PreferenceDataset, WeightVector};

/// Which trained policy seeds the next iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NextReference {
    Uniform,
    Weight(Vec<f64>),
}

impl NextReference {
    pub fn weight(&self, n: usize) -> Result<WeightVector> {
        match self {
            NextReference::Uniform => WeightVector::uniform(n),
            NextReference::Weight(v) => WeightVector::new(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub hyper: Hyperparameters,
    pub pdc: PdcConfig,
    pub sft_steps: usize,
    pub sft_learning_rate: f64,
    pub next_reference: NextReference,
    /// Sampled reports per prompt when estimating scorer means.
    pub eval_samples: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparameters::default(),
            pdc: PdcConfig::default(),
            sft_steps: crate::policy::SFT_STEPS,
            sft_learning_rate: crate::policy::SFT_LEARNING_RATE,
            next_reference: NextReference::Uniform,
            eval_samples: 1,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if !(self.pdc.low_threshold > 0.0 && self.pdc.low_threshold < self.pdc.high_threshold && self.pdc.high_threshold < 1.0) {
            return Err(Error::Config(format!(
                "dedup thresholds must satisfy 0 < low < high < 1, got ({}, {})",
                self.pdc.low_threshold, self.pdc.high_threshold
            )));
        }
        if self.pdc.samples_per_prompt == 0 {
            return Err(Error::Config("samples_per_prompt must be >= 1".into()));
        }
        if !(self.sft_learning_rate > 0.0) {
            return Err(Error::Config("sft_learning_rate must be > 0".into()));
        }
        if let NextReference::Weight(v) = &self.next_reference {
            WeightVector::new(v).map_err(|e| Error::Config(format!("next_reference: {e}")))?;
        }
        Ok(())
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.hyper.learning_rate,
            epochs: self.hyper.epochs,
            batch_size: self.hyper.batch_size,
            beta: self.hyper.beta,
            seed,
            dataset_order: None,
        }
    }
}

/// Everything an iteration needs from its predecessors.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    /// Iterations completed so far.
    pub completed: usize,
    pub sft: ReferencePolicy,
    pub reference: ReferencePolicy,
}

impl LoopState {
    pub fn initial(env: &Environment, config: &LoopConfig) -> Self {
        let sft = ReferencePolicy::freeze(&Policy::fit_sft(env, config.sft_steps, config.sft_learning_rate));
        Self {
            completed: 0,
            reference: sft.clone(),
            sft,
        }
    }

    /// State after `completed` iterations with the given reference.
    pub fn resume(env: &Environment, config: &LoopConfig, completed: usize, reference: Policy) -> Result<Self> {
        if reference.dim() != env.dim() || reference.num_objectives() != env.num_objectives() {
            return Err(Error::DimensionMismatch {
                what: "checkpoint policy",
                expected: env.dim() * (env.num_objectives() + 1),
                got: reference.dim() * (reference.num_objectives() + 1),
            });
        }
        let initial = Self::initial(env, config);
        Ok(Self {
            completed,
            reference: ReferencePolicy::freeze(&reference),
            sft: initial.sft,
        })
    }
}

/// Evaluation of one policy at one weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMetrics {
    pub weight: WeightVector,
    /// Exact expected true reward per objective.
    pub expected_rewards: Vec<f64>,
    /// Exact expected scorer value per scorer, in the scorer's own direction.
    pub expected_scores: Vec<f64>,
    /// Mean scorer value of sampled reports.
    pub sampled_scores: Vec<f64>,
    /// Gap to the Gibbs optimum of the reference the policy was trained against.
    pub subopt: f64,
    /// Gap to the Gibbs optimum anchored at the SFT policy.
    pub subopt_sft: f64,
    /// `E_ρ KL(π ‖ π_ref)` against the training reference.
    pub kl_to_reference: f64,
}

/// Metrics of `policy` evaluated at `w`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    env: &Environment,
    scorers: &[Box<dyn Scorer>],
    policy: &Policy,
    w: &WeightVector,
    reference: &ReferencePolicy,
    sft: &ReferencePolicy,
    config: &LoopConfig,
    seed: u64,
) -> Result<WeightMetrics> {
    let beta = config.hyper.beta;
    let dist = policy.distributions(env, w)?;
    let ref_dist = reference.distributions(env, w)?;
    let sft_dist = sft.distributions(env, w)?;
    let n = env.num_objectives();
    let expected_rewards = (0..n)
        .map(|k| {
            let e = WeightVector::one_hot(n, k)?;
            theory::expected_reward(env, &dist, env.theta_star(), &e)
        })
        .collect::<Result<_>>()?;
    let expected_scores = scorers.iter().map(|s| expected_score(env, s.as_ref(), &dist)).collect::<Result<_>>()?;
    let mut sample_tags = vec![tag::EVAL];
    sample_tags.extend(w.as_slice().iter().map(|v| v.to_bits()));
    let mut r = rng::stream(seed, &sample_tags);
    let mut totals = vec![0.0; scorers.len()];
    let mut count = 0usize;
    for x in env.prompts() {
        for _ in 0..config.eval_samples {
            let y = crate::policy::sample_from_log_probs(dist.log_row(x.0), &mut r);
            for (t, s) in totals.iter_mut().zip(scorers) {
                *t += s.score(env, x, y, env.reference_response(x));
            }
            count += 1;
        }
    }
    let sampled_scores = totals.iter().map(|t| t / count.max(1) as f64).collect();
    Ok(WeightMetrics {
        weight: w.clone(),
        expected_rewards,
        expected_scores,
        sampled_scores,
        subopt: theory::suboptimality(env, &dist, w, beta, &ref_dist)?,
        subopt_sft: theory::suboptimality(env, &dist, w, beta, &sft_dist)?,
        kl_to_reference: theory::expected_kl(env, &dist, &ref_dist)?,
    })
}

/// Exact `E_{ρ,π}[M(x, y)]`.
fn expected_score(env: &Environment, scorer: &dyn Scorer, dist: &Distributions) -> Result<f64> {
    let mut total = 0.0;
    for (x, px) in env.rho().iter().enumerate() {
        let prompt = crate::types::PromptId(x);
        let reference = env.reference_response(prompt);
        for (y, l) in dist.log_row(x).iter().enumerate() {
            total += px * l.exp() * scorer.score(env, prompt, crate::types::ResponseId(y), reference);
        }
    }
    Ok(total)
}

/// The evaluation rows: each one-hot weight, then the uniform weight.
pub fn standard_weights(n: usize) -> Result<Vec<WeightVector>> {
    theory::standard_weights(n)
}

/// Metrics for each requested weight, looked up among trained policies.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_weight_configs(
    policies: &[(WeightVector, Policy)],
    env: &Environment,
    scorers: &[Box<dyn Scorer>],
    configs: &[WeightVector],
    reference: &ReferencePolicy,
    sft: &ReferencePolicy,
    config: &LoopConfig,
    seed: u64,
) -> Result<Vec<WeightMetrics>> {
    configs
        .iter()
        .map(|w| {
            let (_, policy) = policies
                .iter()
                .find(|(pw, _)| same_weight(pw, w))
                .ok_or_else(|| Error::InvalidArgument(format!("no trained policy for weight {}", w.label())))?;
            evaluate_policy(env, scorers, policy, w, reference, sft, config, seed)
        })
        .collect()
}

fn same_weight(a: &WeightVector, b: &WeightVector) -> bool {
    a.len() == b.len() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= 1e-12)
}

/// Output of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub datasets: Vec<PreferenceDataset>,
    pub build_reports: Vec<BuildReport>,
    pub margin_log: Vec<EpochLog>,
    /// Trained policies: the weight grid in grid order, then any extra
    /// standard or next-reference weights trained on demand.
    pub policies: Vec<(WeightVector, Policy)>,
    pub training_logs: Vec<Vec<EpochLog>>,
    /// One row per entry of `policies`.
    pub metrics: Vec<WeightMetrics>,
    /// Rows for the standard weights, in [`standard_weights`] order.
    pub standard: Vec<WeightMetrics>,
    /// Metrics of the incoming reference, evaluated like a trained policy.
    pub reference_metrics: Vec<WeightMetrics>,
    pub next_reference: Policy,
}

impl IterationRecord {
    pub fn chosen_score_quantiles(&self) -> Vec<Option<Quantiles>> {
        self.build_reports.iter().map(|r| r.chosen_scores).collect()
    }

    /// Grid points for Pareto analysis, oriented higher-better.
    pub fn pareto_points(&self, directions: &[Direction]) -> Vec<ParetoPoint> {
        self.metrics
            .iter()
            .map(|m| ParetoPoint {
                weight: m.weight.clone(),
                values: m.expected_scores.iter().zip(directions).map(|(v, d)| d.orient(*v)).collect(),
            })
            .collect()
    }
}

/// Seed of iteration `i` (1-based).
pub fn iteration_seed(seed: u64, i: usize) -> u64 {
    rng::derive_seed(seed, &[tag::ITERATION, i as u64])
}

/// Runs one iteration from `state` and returns its record and the next state.
pub fn run_iteration(state: &LoopState, env: &Environment, scorers: &[Box<dyn Scorer>], config: &LoopConfig) -> Result<(IterationRecord, LoopState)> {
    config.validate()?;
    let n = env.num_objectives();
    let i = state.completed + 1;
    let seed = iteration_seed(config.hyper.seed, i);
    let reference = &state.reference;
    log::info!("iteration {i}: building datasets");
    let built = pdc::build_all(reference.policy(), env, scorers, config.hyper.pairs_per_objective, &config.pdc, seed)?;
    let (datasets, build_reports): (Vec<_>, Vec<_>) = built.into_iter().unzip();
    for r in &build_reports {
        if r.shortfall > 0 {
            log::warn!("iteration {i}: objective {} produced {} of {} pairs", r.objective, r.produced, r.requested);
        }
    }
    let train = config.train_config(seed);
    log::info!("iteration {i}: training margin reward models");
    let (margins, margin_log) = align::train_margin_models(reference.policy(), reference, env, &datasets, &train)?;
    let grid = align::weight_grid(n, config.hyper.weight_grid_step)?;
    let mut wanted = grid.clone();
    let next_w = config.next_reference.weight(n)?;
    for w in standard_weights(n)?.into_iter().chain(std::iter::once(next_w.clone())) {
        if !wanted.iter().any(|g| same_weight(g, &w)) {
            wanted.push(w);
        }
    }
    log::info!("iteration {i}: MODPO sweep over {} weights", wanted.len());
    let swept = align::sweep(reference.policy(), reference, env, &datasets, &margins, &wanted, &train)?;
    record_from_sweep(i, state, env, scorers, config, seed, datasets, build_reports, margin_log, swept, &next_w)
}

#[allow(clippy::too_many_arguments)]
fn record_from_sweep(
    i: usize,
    state: &LoopState,
    env: &Environment,
    scorers: &[Box<dyn Scorer>],
    config: &LoopConfig,
    seed: u64,
    datasets: Vec<PreferenceDataset>,
    build_reports: Vec<BuildReport>,
    margin_log: Vec<EpochLog>,
    swept: Vec<SweepResult>,
    next_w: &WeightVector,
) -> Result<(IterationRecord, LoopState)> {
    let n = env.num_objectives();
    let mut policies = Vec::with_capacity(swept.len());
    let mut training_logs = Vec::with_capacity(swept.len());
    for s in swept {
        policies.push((s.weight, s.policy));
        training_logs.push(s.log);
    }
    let metrics: Vec<WeightMetrics> = {
        use rayon::prelude::*;
        policies
            .par_iter()
            .map(|(w, p)| evaluate_policy(env, scorers, p, w, &state.reference, &state.sft, config, seed))
            .collect::<Result<_>>()?
    };
    let standard_ws = standard_weights(n)?;
    let standard = standard_ws
        .iter()
        .map(|w| {
            metrics
                .iter()
                .find(|m| same_weight(&m.weight, w))
                .cloned()
                .ok_or_else(|| Error::Invariant(format!("standard weight {} was not trained", w.label())))
        })
        .collect::<Result<_>>()?;
    let reference_metrics = standard_ws
        .iter()
        .map(|w| evaluate_policy(env, scorers, state.reference.policy(), w, &state.reference, &state.sft, config, seed))
        .collect::<Result<_>>()?;
    let next_reference = policies
        .iter()
        .find(|(w, _)| same_weight(w, next_w))
        .map(|(_, p)| p.clone())
        .ok_or_else(|| Error::Invariant("next-reference weight was not trained".into()))?;
    let next_state = LoopState {
        completed: i,
        sft: state.sft.clone(),
        reference: ReferencePolicy::freeze(&next_reference),
    };
    Ok((
        IterationRecord {
            iteration: i,
            datasets,
            build_reports,
            margin_log,
            policies,
            training_logs,
            metrics,
            standard,
            reference_metrics,
            next_reference,
        },
        next_state,
    ))
}

/// Runs `config.hyper.iterations` iterations from the SFT policy.
pub fn run_loop(env: &Environment, scorers: &[Box<dyn Scorer>], config: &LoopConfig) -> Result<Vec<IterationRecord>> {
    let mut state = LoopState::initial(env, config);
    let mut records = Vec::with_capacity(config.hyper.iterations);
    for _ in 0..config.hyper.iterations {
        let (record, next) = run_iteration(&state, env, scorers, config)?;
        records.push(record);
        state = next;
    }
    Ok(records)
}

/// A trained policy's objective values, all oriented higher-better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub weight: WeightVector,
    pub values: Vec<f64>,
}

fn check_axes(points: &[ParetoPoint], axes: (usize, usize)) -> Result<()> {
    for p in points {
        let len = p.values.len();
        if axes.0 >= len || axes.1 >= len {
            return Err(Error::IndexOutOfRange {
                what: "pareto axis",
                index: axes.0.max(axes.1),
                len,
            });
        }
        if !p.values[axes.0].is_finite() || !p.values[axes.1].is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite objective value at weight {}", p.weight.label())));
        }
    }
    Ok(())
}

/// `q` dominates `p` on the two axes.
pub fn dominates(q: (f64, f64), p: (f64, f64)) -> bool {
    q.0 >= p.0 && q.1 >= p.1 && (q.0 > p.0 || q.1 > p.1)
}

/// Indices of the non-dominated points, sorted by first axis ascending
/// (second axis descending, then input order, on ties).
pub fn pareto_front_indices(points: &[ParetoPoint], axes: (usize, usize)) -> Result<Vec<usize>> {
    check_axes(points, axes)?;
    let xy = |i: usize| (points[i].values[axes.0], points[i].values[axes.1]);
    let mut order: Vec<usize> = (0..points.len()).collect();
    // descending first axis, then descending second: a sweep keeps points whose
    // second value beats everything with a larger-or-equal first value
    order.sort_by(|&a, &b| {
        let (pa, pb) = (xy(a), xy(b));
        pb.0.total_cmp(&pa.0).then(pb.1.total_cmp(&pa.1)).then(a.cmp(&b))
    });
    let mut front = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for i in order {
        let p = xy(i);
        match best {
            None => {
                front.push(i);
                best = Some(p);
            }
            Some(b) => {
                if p.1 > b.1 {
                    front.push(i);
                    best = Some(p);
                } else if p == b {
                    // exact duplicates of a front point are not dominated
                    front.push(i);
                }
            }
        }
    }
    front.sort_by(|&a, &b| {
        let (pa, pb) = (xy(a), xy(b));
        pa.0.total_cmp(&pb.0).then(pb.1.total_cmp(&pa.1)).then(a.cmp(&b))
    });
    Ok(front)
}

/// The non-dominated subset under `axes`, sorted by the first axis.
pub fn pareto_front(points: &[ParetoPoint], axes: (usize, usize)) -> Result<Vec<ParetoPoint>> {
    Ok(pareto_front_indices(points, axes)?.into_iter().map(|i| points[i].clone()).collect())
}

/// Fraction of one front weakly dominated by another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progression {
    pub axes: (usize, usize),
    pub from_iteration: usize,
    pub to_iteration: usize,
    pub fraction: f64,
}

/// Per axis pair and consecutive iterations, the fraction of iteration-`i`
/// front points weakly dominated by some iteration-`i+1` point.
pub fn front_progression(per_iteration: &[Vec<ParetoPoint>]) -> Result<Vec<Progression>> {
    if per_iteration.len() < 2 {
        return Err(Error::InvalidArgument("front progression needs at least two iterations".into()));
    }
    let n = per_iteration
        .iter()
        .flat_map(|ps| ps.iter().map(|p| p.values.len()))
        .min()
        .ok_or_else(|| Error::InvalidArgument("front progression needs points".into()))?;
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for (i, pair) in per_iteration.windows(2).enumerate() {
                let before = pareto_front(&pair[0], (a, b))?;
                let after = &pair[1];
                let covered = before
                    .iter()
                    .filter(|p| after.iter().any(|q| q.values[a] >= p.values[a] && q.values[b] >= p.values[b]))
                    .count();
                out.push(Progression {
                    axes: (a, b),
                    from_iteration: i + 1,
                    to_iteration: i + 2,
                    fraction: if before.is_empty() { 1.0 } else { covered as f64 / before.len() as f64 },
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{builtin_scorers, generate_environment, EnvConfig};
    use proptest::prelude::*;

    fn point(v: &[f64]) -> ParetoPoint {
        ParetoPoint {
            weight: WeightVector::uniform(v.len()).unwrap(),
            values: v.to_vec(),
        }
    }

    fn brute_force(points: &[ParetoPoint]) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| {
                let p = (points[i].values[0], points[i].values[1]);
                !points.iter().any(|q| dominates((q.values[0], q.values[1]), p))
            })
            .collect()
    }

    #[test]
    fn front_hand_cases() {
        let single = vec![point(&[0.3, 0.1])];
        assert_eq!(pareto_front(&single, (0, 1)).unwrap(), single);
        let pts = vec![point(&[1.0, 2.0]), point(&[2.0, 1.0]), point(&[0.0, 0.0])];
        let front = pareto_front(&pts, (0, 1)).unwrap();
        assert_eq!(front, vec![pts[0].clone(), pts[1].clone()]);
        assert!(pareto_front(&pts, (0, 2)).is_err());
    }

    proptest! {
        #[test]
        fn front_matches_brute_force(raw in prop::collection::vec((0u8..6, 0u8..6), 1..60)) {
            // coarse integer grid forces ties and duplicates
            let pts: Vec<ParetoPoint> = raw.iter().map(|(a, b)| point(&[*a as f64, *b as f64])).collect();
            let mut fast = pareto_front_indices(&pts, (0, 1)).unwrap();
            fast.sort_unstable();
            prop_assert_eq!(fast, brute_force(&pts));
        }
    }

    #[test]
    fn progression_cases() {
        let a = vec![point(&[1.0, 2.0]), point(&[2.0, 1.0])];
        let same = front_progression(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same.len(), 1);
        assert_eq!(same[0].fraction, 1.0);
        let better = vec![point(&[1.5, 2.5]), point(&[2.5, 1.5])];
        assert_eq!(front_progression(&[a.clone(), better]).unwrap()[0].fraction, 1.0);
        let worse = vec![point(&[0.0, 0.0])];
        assert_eq!(front_progression(&[a.clone(), worse]).unwrap()[0].fraction, 0.0);
        assert!(front_progression(&[a]).is_err());
    }

    fn tiny() -> (Environment, LoopConfig) {
        let env = generate_environment(&EnvConfig::sized(6, 2, 200, 6, 1.0, 4)).unwrap();
        let mut config = LoopConfig::default();
        config.hyper.pairs_per_objective = 60;
        config.hyper.epochs = 3;
        config.hyper.iterations = 2;
        config.sft_steps = 40;
        (env, config)
    }

    #[test]
    fn zero_epochs_reproduce_reference_metrics() {
        let (env, mut config) = tiny();
        config.hyper.epochs = 0;
        let scorers = builtin_scorers(&env);
        let state = LoopState::initial(&env, &config);
        let (record, next) = run_iteration(&state, &env, &scorers, &config).unwrap();
        for (p_w, p) in &record.policies {
            assert_eq!(p, state.reference.policy(), "{}", p_w.label());
        }
        assert_eq!(record.standard, record.reference_metrics);
        for m in &record.standard {
            assert!(m.subopt > 0.0);
            assert_eq!(m.kl_to_reference, 0.0);
        }
        assert_eq!(next.reference, state.reference);
    }

    #[test]
    fn iterations_are_reproducible_and_resumable() {
        let (env, config) = tiny();
        let scorers = builtin_scorers(&env);
        let a = run_loop(&env, &scorers, &config).unwrap();
        let b = run_loop(&env, &scorers, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].iteration, 1);
        assert_eq!(a[1].iteration, 2);
        assert_eq!(a[0].standard.len(), 3);
        let resumed = LoopState::resume(&env, &config, 1, a[0].next_reference.clone()).unwrap();
        let (second, _) = run_iteration(&resumed, &env, &scorers, &config).unwrap();
        assert_eq!(second, a[1]);
    }

    #[test]
    fn evaluation_rejects_unknown_weights() {
        let (env, config) = tiny();
        let scorers = builtin_scorers(&env);
        let state = LoopState::initial(&env, &config);
        let w = WeightVector::uniform(2).unwrap();
        let policies = vec![(WeightVector::one_hot(2, 0).unwrap(), Policy::zeros(env.dim(), 2))];
        assert!(evaluate_weight_configs(&policies, &env, &scorers, &[w], &state.reference, &state.sft, &config, 0).is_err());
    }

    #[test]
    fn lower_better_scores_are_reoriented() {
        let (env, config) = tiny();
        let scorers = builtin_scorers(&env);
        let state = LoopState::initial(&env, &config);
        let w = WeightVector::uniform(2).unwrap();
        let m = evaluate_policy(&env, &scorers, state.reference.policy(), &w, &state.reference, &state.sft, &config, 0).unwrap();
        let k = crate::env::LOWER_BETTER_SCORER;
        assert!((m.expected_scores[k] + m.expected_rewards[k]).abs() < 1e-12);
        let other = 1 - k;
        assert!((m.expected_scores[other] - m.expected_rewards[other]).abs() < 1e-12);
    }
}
