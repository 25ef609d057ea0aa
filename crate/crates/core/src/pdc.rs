//! Preference dataset construction.
//!
//! For each objective `k` the reference policy generates one response per
//! prompt at the one-hot weight `ê_k`. The generations are deduplicated per
//! patient (keep the view closest to the reference response), grouped by
//! label, deduplicated within each group, and finally ranked by the
//! objective's scorer. The top `K_c` entries of group `c` become chosen
//! responses; each is paired with a uniformly drawn entry from the rest of
//! its group.
//!
//! Ties are always broken toward the lower id.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Scorer};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::{self, tag, Rng};
use crate::types::{PreferenceDataset, PreferencePair, PromptId, ResponseId, WeightVector};

/// Discard threshold on similarity to the reference response.
pub const DEFAULT_LOW_THRESHOLD: f64 = 0.5;
/// Pairwise near-duplicate threshold within a group.
pub const DEFAULT_HIGH_THRESHOLD: f64 = 0.8;

/// One generated response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub prompt: PromptId,
    pub response: ResponseId,
    /// Index of the generation pass that produced this entry.
    pub sample: usize,
    pub similarity_to_reference: f64,
}

/// Deduplicated entries partitioned by group label.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    entries: Vec<Entry>,
    groups: BTreeMap<u32, Vec<usize>>,
}

impl CandidatePool {
    /// Groups `entries` by the environment's labels without deduplicating.
    pub fn from_entries(entries: Vec<Entry>, env: &Environment) -> Self {
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            groups.entry(env.group_of(e.prompt, e.response)).or_default().push(i);
        }
        Self { entries, groups }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Group labels in ascending order with their entry indices.
    pub fn groups(&self) -> &BTreeMap<u32, Vec<usize>> {
        &self.groups
    }

    /// Number of non-empty groups `C`.
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Group sizes `N_c` in label order.
    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.values().map(Vec::len).collect()
    }

    /// Total number of pairs the pool can supply, `Σ max(N_c − 1, 0)`.
    pub fn capacity(&self) -> usize {
        self.groups.values().map(|g| g.len().saturating_sub(1)).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One pass of the quota loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRound {
    /// Samples still to place when the round started.
    pub remaining: usize,
    /// Groups with spare capacity.
    pub active_groups: usize,
    /// `⌈remaining / active_groups⌉`.
    pub mu: usize,
    /// Taken from groups whose spare capacity was below `mu`.
    pub k1: usize,
    /// Taken from the other groups.
    pub k2: usize,
}

/// Per-group quotas `K_c` for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Quotas in the same order as the group sizes they were planned for.
    pub quotas: Vec<usize>,
    pub requested: usize,
    pub allocated: usize,
    pub capacity: usize,
    pub rounds: Vec<PlanRound>,
}

impl SamplingPlan {
    /// How many requested pairs could not be planned.
    pub fn shortfall(&self) -> usize {
        self.requested - self.allocated
    }
}

/// Allocates `k` chosen responses across groups of the given sizes.
///
/// A group of size `N_c` can contribute at most `N_c − 1` chosen responses so
/// that every chosen one keeps a rejection candidate. Each round spreads the
/// remaining demand evenly (`μ = ⌈K_r / Q⌉`) over the `Q` groups that still
/// have capacity: groups below `μ` give everything they have, the rest give
/// `μ` in label order until the demand is met.
pub fn plan_quotas(sizes: &[usize], k: usize) -> SamplingPlan {
    let capacity: Vec<usize> = sizes.iter().map(|n| n.saturating_sub(1)).collect();
    let total_capacity: usize = capacity.iter().sum();
    let mut quotas = vec![0usize; sizes.len()];
    let mut remaining = k;
    let mut rounds = Vec::new();

    while remaining > 0 {
        let active: Vec<usize> = (0..sizes.len()).filter(|&c| capacity[c] > quotas[c]).collect();
        if active.is_empty() {
            break;
        }
        let q = active.len();
        let mu = remaining.div_ceil(q);
        let mut k1 = 0;
        for &c in &active {
            let spare = capacity[c] - quotas[c];
            if spare < mu {
                quotas[c] += spare;
                k1 += spare;
            }
        }
        // saturating groups take < q·(μ−1) < remaining in total, so this never underflows
        let mut left = remaining - k1;
        let mut k2 = 0;
        for &c in &active {
            if left == 0 {
                break;
            }
            let spare = capacity[c] - quotas[c];
            if spare >= mu {
                let take = mu.min(left);
                quotas[c] += take;
                k2 += take;
                left -= take;
            }
        }
        rounds.push(PlanRound {
            remaining,
            active_groups: q,
            mu,
            k1,
            k2,
        });
        remaining -= k1 + k2;
    }

    let allocated = quotas.iter().sum();
    SamplingPlan {
        quotas,
        requested: k,
        allocated,
        capacity: total_capacity,
        rounds,
    }
}

/// Plans quotas for a pool's groups (label order).
pub fn plan_stratified(pool: &CandidatePool, k: usize) -> SamplingPlan {
    let plan = plan_quotas(&pool.group_sizes(), k);
    if plan.shortfall() > 0 {
        log::warn!(
            "requested {k} pairs but pool capacity is {}; plan saturates with shortfall {}",
            plan.capacity,
            plan.shortfall()
        );
    }
    plan
}

/// Samples `samples_per_prompt` responses per prompt at the one-hot weight for
/// objective `k`.
pub fn self_generate(
    policy: &Policy,
    env: &Environment,
    k: usize,
    samples_per_prompt: usize,
    rng: &mut Rng,
) -> Result<Vec<Entry>> {
    env.check_objective(k)?;
    if samples_per_prompt == 0 {
        return Err(Error::InvalidArgument("samples_per_prompt must be >= 1".into()));
    }
    let w = WeightVector::one_hot(policy.num_objectives(), k)?;
    let mut entries = Vec::with_capacity(env.num_prompts() * samples_per_prompt);
    for x in env.prompts() {
        for sample in 0..samples_per_prompt {
            let response = policy.sample(env, x, &w, rng)?;
            entries.push(Entry {
                prompt: x,
                response,
                sample,
                similarity_to_reference: env.similarity_to_reference(x, response),
            });
        }
    }
    Ok(entries)
}

/// Keeps, for each patient and generation pass, only the view whose response
/// is most similar to its reference (ties: lower prompt id).
pub fn dedup_patient(entries: &[Entry], env: &Environment) -> Vec<Entry> {
    let mut best: BTreeMap<(usize, usize), Entry> = BTreeMap::new();
    for e in entries {
        let key = (env.patient_of(e.prompt), e.sample);
        match best.get(&key) {
            Some(cur)
                if cur.similarity_to_reference > e.similarity_to_reference
                    || (cur.similarity_to_reference == e.similarity_to_reference
                        && (cur.prompt, cur.response) <= (e.prompt, e.response)) => {}
            _ => {
                best.insert(key, *e);
            }
        }
    }
    let mut out: Vec<Entry> = best.into_values().collect();
    out.sort_by_key(|e| (e.prompt, e.sample));
    out
}

/// Rank order used for survivor selection: higher similarity to reference
/// first, then lower response id, then lower prompt id.
fn by_reference_similarity(a: &Entry, b: &Entry) -> std::cmp::Ordering {
    b.similarity_to_reference
        .total_cmp(&a.similarity_to_reference)
        .then(a.response.cmp(&b.response))
        .then(a.prompt.cmp(&b.prompt))
        .then(a.sample.cmp(&b.sample))
}

/// Within-group deduplication.
///
/// Every group drops entries with similarity to reference below `low`.
/// Groups that arrived with more than two entries are then thinned so that no
/// two survivors are more than `high` similar, keeping the entry closer to its
/// reference from each conflicting pair.
pub fn dedup_group(entries: &[Entry], low: f64, high: f64, env: &Environment) -> Result<CandidatePool> {
    if !(low > 0.0 && low < 1.0 && high > 0.0 && high < 1.0 && low < high) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must satisfy 0 < low < high < 1, got low = {low}, high = {high}"
        )));
    }
    let mut by_group: BTreeMap<u32, Vec<Entry>> = BTreeMap::new();
    for e in entries {
        by_group.entry(env.group_of(e.prompt, e.response)).or_default().push(*e);
    }
    let survivors: Vec<Vec<Entry>> = by_group
        .into_par_iter()
        .map(|(_, group)| {
            let arrived = group.len();
            let mut kept: Vec<Entry> = group
                .into_iter()
                .filter(|e| e.similarity_to_reference >= low)
                .collect();
            if arrived > 2 {
                kept.sort_by(by_reference_similarity);
                let mut thinned: Vec<Entry> = Vec::with_capacity(kept.len());
                for e in kept {
                    let clashes = thinned
                        .iter()
                        .any(|k| env.similarity((k.prompt, k.response), (e.prompt, e.response)) > high);
                    if !clashes {
                        thinned.push(e);
                    }
                }
                kept = thinned;
            }
            kept.sort_by_key(|e| (e.prompt, e.sample, e.response));
            kept
        })
        .collect();
    Ok(CandidatePool::from_entries(survivors.into_iter().flatten().collect(), env))
}

/// What happened while assembling one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyReport {
    /// Chosen entries for which every remaining entry shared the chosen response id.
    pub dropped_pairs: usize,
}

/// Ranks each group with `scorer`, takes the top `K_c` as chosen responses and
/// pairs each with a uniform draw from the group's remainder.
pub fn build_preference_dataset(
    pool: &CandidatePool,
    env: &Environment,
    scorer: &dyn Scorer,
    plan: &SamplingPlan,
    rng: &mut Rng,
) -> Result<(PreferenceDataset, AssemblyReport)> {
    if plan.quotas.len() != pool.num_groups() {
        return Err(Error::InvalidArgument(format!(
            "plan has {} quotas but pool has {} groups",
            plan.quotas.len(),
            pool.num_groups()
        )));
    }
    let objective = scorer.objective();
    let direction = scorer.direction();
    let base_seed: u64 = rng.random();
    let groups: Vec<(u32, &Vec<usize>, usize)> = pool
        .groups()
        .iter()
        .zip(&plan.quotas)
        .map(|((label, idx), q)| (*label, idx, *q))
        .collect();

    // per group: labelled pairs and the count dropped during assembly
    type GroupPairs = (Vec<(u32, PreferencePair)>, usize);
    let per_group: Vec<Result<GroupPairs>> = groups
        .par_iter()
        .map(|&(label, indices, quota)| {
            let mut pairs = Vec::with_capacity(quota);
            if quota == 0 {
                return Ok((pairs, 0));
            }
            if quota >= indices.len() {
                return Err(Error::Construction {
                    group: label,
                    reason: format!("quota {quota} leaves no rejection candidates among {} entries", indices.len()),
                });
            }
            let mut scored: Vec<(Entry, f64)> = indices
                .iter()
                .map(|&i| {
                    let e = pool.entries()[i];
                    let reference = env.reference_response(e.prompt);
                    (e, scorer.score(env, e.prompt, e.response, reference))
                })
                .collect();
            scored.sort_by(|(ea, sa), (eb, sb)| {
                direction
                    .orient(*sb)
                    .total_cmp(&direction.orient(*sa))
                    .then(ea.response.cmp(&eb.response))
                    .then(ea.prompt.cmp(&eb.prompt))
                    .then(ea.sample.cmp(&eb.sample))
            });
            let (chosen, rest) = scored.split_at(quota);
            let mut group_rng = rng::stream(base_seed, &[u64::from(label)]);
            let mut dropped = 0;
            for (c, sc) in chosen {
                let eligible: Vec<&(Entry, f64)> = rest.iter().filter(|(e, _)| e.response != c.response).collect();
                if eligible.is_empty() {
                    dropped += 1;
                    continue;
                }
                let (r, sr) = eligible[group_rng.random_range(0..eligible.len())];
                let pair = PreferencePair::new(objective, c.prompt, c.response, r.response, *sc, *sr, direction)?;
                pairs.push((label, pair));
            }
            Ok((pairs, dropped))
        })
        .collect();

    let mut pairs = Vec::new();
    let mut dropped_pairs = 0;
    for g in per_group {
        let (p, d) = g?;
        pairs.extend(p);
        dropped_pairs += d;
    }
    pairs.sort_by(|(la, a), (lb, b)| {
        la.cmp(lb)
            .then(a.prompt.cmp(&b.prompt))
            .then(a.chosen.cmp(&b.chosen))
            .then(a.rejected.cmp(&b.rejected))
    });
    let dataset = PreferenceDataset::new(objective, pairs.into_iter().map(|(_, p)| p).collect())?;
    Ok((dataset, AssemblyReport { dropped_pairs }))
}

/// Settings for [`build_all`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdcConfig {
    pub samples_per_prompt: usize,
    pub low_threshold: f64,
    pub high_threshold: f64,
}

impl Default for PdcConfig {
    fn default() -> Self {
        Self {
            samples_per_prompt: 1,
            low_threshold: DEFAULT_LOW_THRESHOLD,
            high_threshold: DEFAULT_HIGH_THRESHOLD,
        }
    }
}

/// Five-number summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quantiles {
    /// Linear-interpolation quantiles; `None` for empty input.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            min: v[0],
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Counts and diagnostics for one objective's dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub objective: usize,
    pub scorer: String,
    pub direction: crate::types::Direction,
    pub generated: usize,
    pub after_patient_dedup: usize,
    pub after_group_dedup: usize,
    pub groups: usize,
    pub capacity: usize,
    pub requested: usize,
    pub produced: usize,
    pub shortfall: usize,
    pub dropped_pairs: usize,
    pub plan_rounds: usize,
    /// Raw scorer values of the chosen responses.
    pub chosen_scores: Option<Quantiles>,
    /// Ground-truth reward of the chosen responses.
    pub chosen_rewards: Option<Quantiles>,
}

/// Builds one dataset per objective, each from its own one-hot generation pass
/// and an independent random stream derived from `seed`.
pub fn build_all(
    policy: &Policy,
    env: &Environment,
    scorers: &[Box<dyn Scorer>],
    k: usize,
    config: &PdcConfig,
    seed: u64,
) -> Result<Vec<(PreferenceDataset, BuildReport)>> {
    if scorers.len() != env.num_objectives() {
        return Err(Error::DimensionMismatch {
            what: "scorers",
            expected: env.num_objectives(),
            got: scorers.len(),
        });
    }
    (0..env.num_objectives())
        .map(|obj| {
            let scorer = scorers[obj].as_ref();
            let mut gen_rng = rng::stream(seed, &[tag::GENERATE, obj as u64]);
            let raw = self_generate(policy, env, obj, config.samples_per_prompt, &mut gen_rng)?;
            let patient = dedup_patient(&raw, env);
            let pool = dedup_group(&patient, config.low_threshold, config.high_threshold, env)?;
            let plan = plan_stratified(&pool, k);
            let mut pair_rng = rng::stream(seed, &[tag::PAIRS, obj as u64]);
            let (dataset, assembly) = build_preference_dataset(&pool, env, scorer, &plan, &mut pair_rng)?;
            let chosen_scores: Vec<f64> = dataset.pairs().iter().map(|p| p.score_chosen).collect();
            let chosen_rewards: Vec<f64> = dataset
                .pairs()
                .iter()
                .map(|p| env.reward(scorer.objective(), p.prompt.0, p.chosen.0))
                .collect();
            let report = BuildReport {
                objective: obj,
                scorer: scorer.name().to_string(),
                direction: scorer.direction(),
                generated: raw.len(),
                after_patient_dedup: patient.len(),
                after_group_dedup: pool.len(),
                groups: pool.num_groups(),
                capacity: pool.capacity(),
                requested: k,
                produced: dataset.len(),
                shortfall: k - dataset.len(),
                dropped_pairs: assembly.dropped_pairs,
                plan_rounds: plan.rounds.len(),
                chosen_scores: Quantiles::of(&chosen_scores),
                chosen_rewards: Quantiles::of(&chosen_rewards),
            };
            Ok((dataset, report))
        })
        .collect()
}
