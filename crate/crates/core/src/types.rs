//! Domain types shared by every module, with their invariants enforced at
//! construction time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for structural invariants (simplex sums, norm bounds, centering).
pub const STRUCTURAL_TOL: f64 = 1e-9;

/// Index of a prompt inside its environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub usize);

/// Index of a response in the shared candidate catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseId(pub usize);

/// Whether larger or smaller scores are better for a metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    /// Maps a raw score to the higher-is-better orientation.
    pub fn orient(self, score: f64) -> f64 {
        match self {
            Direction::HigherBetter => score,
            Direction::LowerBetter => -score,
        }
    }

    /// True when `a` is at least as good as `b`.
    pub fn at_least_as_good(self, a: f64, b: f64) -> bool {
        self.orient(a) >= self.orient(b)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::HigherBetter => "higher-better",
            Direction::LowerBetter => "lower-better",
        }
    }
}

/// A point on the probability simplex over objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    /// Normalizes non-negative values onto the simplex.
    ///
    /// Values that already sum to exactly one (one-hot vectors in particular)
    /// pass through unchanged.
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidWeight("weight vector must be non-empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidWeight(format!(
                "weights must be finite and non-negative, found {v}"
            )));
        }
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidWeight(
                "all weights are zero; at least one objective needs positive weight".into(),
            ));
        }
        let weights: Vec<f64> = if total == 1.0 {
            values.to_vec()
        } else {
            values.iter().map(|v| v / total).collect()
        };
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > STRUCTURAL_TOL {
            return Err(Error::Invariant(format!("normalized weights sum to {sum}")));
        }
        Ok(Self { weights })
    }

    /// The vertex that fully prefers objective `k`.
    pub fn one_hot(n: usize, k: usize) -> Result<Self> {
        if k >= n {
            return Err(Error::IndexOutOfRange {
                what: "objective",
                index: k,
                len: n,
            });
        }
        let mut weights = vec![0.0; n];
        weights[k] = 1.0;
        Ok(Self { weights })
    }

    /// Equal weight on all `n` objectives.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(&vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, k: usize) -> f64 {
        self.weights[k]
    }

    /// Index of the single non-zero component, if this is a vertex.
    pub fn one_hot_index(&self) -> Option<usize> {
        let mut hot = None;
        for (k, &w) in self.weights.iter().enumerate() {
            if w == 1.0 {
                hot = Some(k);
            } else if w != 0.0 {
                return None;
            }
        }
        hot
    }

    /// All components except index `k`, original order preserved.
    pub fn drop_component(&self, k: usize) -> Result<Vec<f64>> {
        if k >= self.weights.len() {
            return Err(Error::IndexOutOfRange {
                what: "objective",
                index: k,
                len: self.weights.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, w)| *w)
            .collect())
    }

    /// Compact label used in file names, e.g. `0.2_0.4_0.4`.
    pub fn label(&self) -> String {
        self.weights
            .iter()
            .map(|w| format!("{:.4}", w).trim_end_matches('0').trim_end_matches('.').to_string())
            .collect::<Vec<_>>()
            .join("_")
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(&values)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.weights
    }
}

/// Convenience wrapper matching the operation name used by the CLI layer.
pub fn make_weight(values: &[f64]) -> Result<WeightVector> {
    WeightVector::new(values)
}

/// A bounded feature vector, `‖φ‖₂ ≤ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("feature vector has non-finite entries".into()));
        }
        let norm = l2_norm(&values);
        if norm > 1.0 + STRUCTURAL_TOL {
            return Err(Error::Invariant(format!("feature norm {norm} exceeds 1")));
        }
        Ok(Self { values })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Self {
        f.values
    }
}

/// Linear reward parameters constrained to the set of centered vectors with
/// norm at most `bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRewardParameters", into = "RawRewardParameters")]
pub struct RewardParameters {
    theta: Vec<f64>,
    bound: f64,
}

#[derive(Serialize, Deserialize)]
struct RawRewardParameters {
    theta: Vec<f64>,
    bound: f64,
}

impl RewardParameters {
    /// Validates membership in the constraint set.
    pub fn new(theta: Vec<f64>, bound: f64) -> Result<Self> {
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(Error::InvalidArgument(format!("bound must be positive, got {bound}")));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("reward parameters have non-finite entries".into()));
        }
        let sum: f64 = theta.iter().sum();
        if sum.abs() > STRUCTURAL_TOL {
            return Err(Error::Invariant(format!(
                "reward parameters must be centered, component sum is {sum}"
            )));
        }
        let norm = l2_norm(&theta);
        if norm > bound + STRUCTURAL_TOL {
            return Err(Error::Invariant(format!("reward norm {norm} exceeds bound {bound}")));
        }
        Ok(Self { theta, bound })
    }

    /// Centers `raw` (removes its mean) and then clips its norm to `bound`.
    ///
    /// Clipping a centered vector keeps it centered, so the result always lies
    /// in the constraint set.
    pub fn project(raw: &[f64], bound: f64) -> Result<Self> {
        let mut theta = project_onto_ball(raw, bound);
        // re-center to wipe out rounding from the scaling step
        let mean = theta.iter().sum::<f64>() / theta.len().max(1) as f64;
        theta.iter_mut().for_each(|t| *t -= mean);
        Self::new(theta, bound)
    }

    /// The zero vector.
    pub fn zeros(dim: usize, bound: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], bound)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.theta)
    }

    /// Linear reward `⟨θ, φ⟩`.
    pub fn reward(&self, features: &[f64]) -> f64 {
        dot(&self.theta, features)
    }
}

impl TryFrom<RawRewardParameters> for RewardParameters {
    type Error = Error;

    fn try_from(raw: RawRewardParameters) -> Result<Self> {
        Self::new(raw.theta, raw.bound)
    }
}

impl From<RewardParameters> for RawRewardParameters {
    fn from(p: RewardParameters) -> Self {
        RawRewardParameters {
            theta: p.theta,
            bound: p.bound,
        }
    }
}

/// Euclidean projection onto `{⟨1,θ⟩ = 0, ‖θ‖ ≤ bound}` without validation.
pub(crate) fn project_onto_ball(raw: &[f64], bound: f64) -> Vec<f64> {
    let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
    let mut theta: Vec<f64> = raw.iter().map(|v| v - mean).collect();
    let norm = l2_norm(&theta);
    if norm > bound {
        let scale = bound / norm;
        theta.iter_mut().for_each(|t| *t *= scale);
    }
    theta
}

/// One chosen/rejected comparison for a single objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub objective: usize,
    pub prompt: PromptId,
    pub chosen: ResponseId,
    pub rejected: ResponseId,
    pub score_chosen: f64,
    pub score_rejected: f64,
}

impl PreferencePair {
    /// Builds a pair, rejecting identical responses and mis-ordered scores.
    pub fn new(
        objective: usize,
        prompt: PromptId,
        chosen: ResponseId,
        rejected: ResponseId,
        score_chosen: f64,
        score_rejected: f64,
        direction: Direction,
    ) -> Result<Self> {
        if chosen == rejected {
            return Err(Error::Invariant(format!(
                "chosen and rejected are both response {} for prompt {}",
                chosen.0, prompt.0
            )));
        }
        if !direction.at_least_as_good(score_chosen, score_rejected) {
            return Err(Error::Invariant(format!(
                "chosen score {score_chosen} is worse than rejected score {score_rejected} ({})",
                direction.as_str()
            )));
        }
        Ok(Self {
            objective,
            prompt,
            chosen,
            rejected,
            score_chosen,
            score_rejected,
        })
    }
}

/// The preference pairs collected for one objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    objective: usize,
    pairs: Vec<PreferencePair>,
}

impl PreferenceDataset {
    pub fn new(objective: usize, pairs: Vec<PreferencePair>) -> Result<Self> {
        if let Some(p) = pairs.iter().find(|p| p.objective != objective) {
            return Err(Error::Invariant(format!(
                "pair for objective {} placed in dataset for objective {objective}",
                p.objective
            )));
        }
        Ok(Self { objective, pairs })
    }

    pub fn objective(&self) -> usize {
        self.objective
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Run-wide numeric settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// KL coefficient.
    pub beta: f64,
    /// Ridge term in the design-matrix norm and MLE.
    pub lambda: f64,
    /// Confidence level of the estimation bound.
    pub delta: f64,
    pub weight_grid_step: f64,
    pub iterations: usize,
    /// Target pair count `K` per objective.
    pub pairs_per_objective: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            beta: 0.5,
            lambda: 0.01,
            delta: 0.1,
            weight_grid_step: 0.2,
            iterations: 3,
            pairs_per_objective: 1000,
            learning_rate: 0.05,
            epochs: 60,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
