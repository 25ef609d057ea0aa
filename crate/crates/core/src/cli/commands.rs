//! Command implementations. Each command reads the resolved [`RunConfig`] and
//! writes deterministic files; nothing depends on wall-clock time or thread
//! scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::io::{self, fmt_f64, Table};
use super::{Bound, Command};
use crate::align::EpochLog;
use crate::env::{generate_environment, scorers_with, Environment, Scorer};
use crate::error::{Error, Result};
use crate::pdc::{self, BuildReport, Quantiles};
use crate::pipeline::{self, IterationRecord, LoopConfig, LoopState, ParetoPoint, WeightMetrics};
use crate::policy::Policy;
use crate::theory::{self, TheoryConfig};
use crate::types::{Direction, WeightVector};

pub const POLICY_SCHEMA: &str = "moalign.policy";
pub const CHECKPOINT_SCHEMA: &str = "moalign.checkpoint";
pub const BUILD_REPORT_SCHEMA: &str = "moalign.build_report";
pub const METRICS_SCHEMA: &str = "moalign.metrics";
pub const FRONT_SCHEMA: &str = "moalign.front";
pub const TRAINING_LOG_SCHEMA: &str = "moalign.training_log";
pub const SUMMARY_SCHEMA: &str = "moalign.summary";
pub const QUANTILES_SCHEMA: &str = "moalign.chosen_quantiles";
pub const PROGRESSION_SCHEMA: &str = "moalign.progression";
pub const LEMMA1_SCHEMA: &str = "moalign.lemma1";
pub const THEOREM1_SCHEMA: &str = "moalign.theorem1";
pub const CALIBRATION_SCHEMA: &str = "moalign.calibration";
pub const VERIFY_SUMMARY_SCHEMA: &str = "moalign.verify_summary";

/// Minimum Monte-Carlo trials accepted by `verify`.
pub const MIN_VERIFY_TRIALS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    VerificationFailed,
}

pub fn dispatch(command: &Command, config: &RunConfig) -> Result<Outcome> {
    match command {
        Command::EnvGen { out } => {
            let path = out.clone().unwrap_or_else(|| config.output_dir.join("env.json"));
            env_gen(config, &path)
        }
        Command::DataBuild { env, policy, out } => {
            let dir = out.clone().unwrap_or_else(|| config.output_dir.join("datasets"));
            data_build(config, env, policy.as_deref(), &dir)
        }
        Command::Iterate { env, resume } => iterate(config, env.as_deref(), resume.as_deref()),
        Command::Verify { which, calibrate, out } => {
            let dir = out.clone().unwrap_or_else(|| config.output_dir.join("verify"));
            verify(config, *which, *calibrate, &dir)
        }
        Command::Pareto { dir, axes, out } => {
            let out = out.clone().unwrap_or_else(|| dir.clone());
            pareto(dir, axes, &out)
        }
    }
}

/// A policy file: parameters plus the weight they were trained at, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub weight: Option<WeightVector>,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub iteration: usize,
    pub reference: Policy,
}

/// Group count and pair capacity of the full candidate catalog.
pub fn catalog_summary(env: &Environment) -> (usize, usize) {
    let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
    for x in env.prompts() {
        for y in env.candidates(x) {
            *sizes.entry(env.group_of(x, y)).or_default() += 1;
        }
    }
    let capacity = sizes.values().map(|n| n.saturating_sub(1)).sum();
    (sizes.len(), capacity)
}

pub fn load_env(path: &Path) -> Result<Environment> {
    io::read_json_raw(path)
}

fn scorers_for(config: &RunConfig, env: &Environment) -> Result<Vec<Box<dyn Scorer>>> {
    if let Some(k) = config.scorers.lower_better {
        if k >= env.num_objectives() {
            return Err(Error::Config(format!(
                "[scorers] lower_better = {k} but the environment has {} objectives",
                env.num_objectives()
            )));
        }
    }
    Ok(scorers_with(env, config.scorers.lower_better))
}

fn env_gen(config: &RunConfig, path: &Path) -> Result<Outcome> {
    let env = generate_environment(&config.env)?;
    io::write_json_raw(path, &env)?;
    let (groups, capacity) = catalog_summary(&env);
    println!(
        "wrote {}: {} prompts x {} candidates, d = {}, N = {}, {} groups, capacity {}",
        path.display(),
        env.num_prompts(),
        env.num_candidates(),
        env.dim(),
        env.num_objectives(),
        groups,
        capacity
    );
    Ok(Outcome::Success)
}

fn data_build(config: &RunConfig, env_path: &Path, policy_path: Option<&Path>, dir: &Path) -> Result<Outcome> {
    let env = load_env(env_path)?;
    let scorers = scorers_for(config, &env)?;
    let policy = match policy_path {
        Some(p) => {
            let file: PolicyFile = io::read_document(p, POLICY_SCHEMA)?;
            if file.policy.dim() != env.dim() || file.policy.num_objectives() != env.num_objectives() {
                return Err(Error::Malformed {
                    path: p.to_path_buf(),
                    reason: format!(
                        "policy shape d = {}, N = {} does not match environment d = {}, N = {}",
                        file.policy.dim(),
                        file.policy.num_objectives(),
                        env.dim(),
                        env.num_objectives()
                    ),
                });
            }
            file.policy
        }
        None => Policy::fit_sft(&env, config.loop_.sft_steps, config.loop_.sft_learning_rate),
    };
    let built = pdc::build_all(&policy, &env, &scorers, config.hyper.pairs_per_objective, &config.pdc, config.hyper.seed)?;
    let reports: Vec<BuildReport> = built.iter().map(|(_, r)| r.clone()).collect();
    for (ds, r) in &built {
        io::write_dataset(&dir.join(format!("objective_{}.jsonl", ds.objective())), ds)?;
        println!(
            "objective {} ({}): {} groups, capacity {}, {} of {} pairs, shortfall {}",
            r.objective, r.scorer, r.groups, r.capacity, r.produced, r.requested, r.shortfall
        );
    }
    io::write_document(&dir.join("build_report.json"), BUILD_REPORT_SCHEMA, &reports)?;
    Ok(Outcome::Success)
}

fn strings<I: IntoIterator<Item = String>>(items: I) -> Vec<String> {
    items.into_iter().collect()
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}_{k}")).collect()
}

fn metrics_header(n: usize) -> Vec<String> {
    let mut h = strings(["policy".into(), "weight".into()]);
    h.extend(indexed("w", n));
    h.extend(indexed("reward", n));
    h.extend(indexed("score", n));
    h.extend(indexed("direction", n));
    h.extend(indexed("sampled_score", n));
    h.extend(strings(["subopt".into(), "subopt_sft".into(), "kl_to_reference".into()]));
    h
}

fn metrics_row(kind: &str, m: &WeightMetrics, directions: &[Direction]) -> Vec<String> {
    let mut r = strings([kind.to_string(), m.weight.label()]);
    r.extend(m.weight.as_slice().iter().map(|v| fmt_f64(*v)));
    r.extend(m.expected_rewards.iter().map(|v| fmt_f64(*v)));
    r.extend(m.expected_scores.iter().map(|v| fmt_f64(*v)));
    r.extend(directions.iter().map(|d| d.as_str().to_string()));
    r.extend(m.sampled_scores.iter().map(|v| fmt_f64(*v)));
    r.extend([fmt_f64(m.subopt), fmt_f64(m.subopt_sft), fmt_f64(m.kl_to_reference)]);
    r
}

fn write_metrics(path: &Path, n: usize, directions: &[Direction], rows: &[(&str, &WeightMetrics)]) -> Result<()> {
    let body: Vec<Vec<String>> = rows.iter().map(|(kind, m)| metrics_row(kind, m, directions)).collect();
    io::write_csv(path, METRICS_SCHEMA, &metrics_header(n), &body)
}

fn write_training_log(path: &Path, record: &IterationRecord) -> Result<()> {
    let header = strings(["model".into(), "phase".into(), "epoch".into(), "loss".into()]);
    let row = |model: String, e: &EpochLog| vec![model, e.phase.to_string(), e.epoch.to_string(), fmt_f64(e.loss)];
    let mut rows: Vec<Vec<String>> = record.margin_log.iter().map(|e| row("margin".into(), e)).collect();
    for ((w, _), log) in record.policies.iter().zip(&record.training_logs) {
        rows.extend(log.iter().map(|e| row(format!("w_{}", w.label()), e)));
    }
    io::write_csv(path, TRAINING_LOG_SCHEMA, &header, &rows)
}

fn axis_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
}

/// Writes `fronts_<a>_<b>.csv` for each axis pair. `points` hold scorer values
/// already oriented higher-better.
fn write_fronts(dir: &Path, points: &[ParetoPoint], directions: &[Direction], axes: &[(usize, usize)]) -> Result<()> {
    let n = points.first().map_or(0, |p| p.weight.len());
    for &(a, b) in axes {
        if a >= directions.len() || b >= directions.len() {
            return Err(Error::IndexOutOfRange {
                what: "pareto axis",
                index: a.max(b),
                len: directions.len(),
            });
        }
        let on_front = pipeline::pareto_front_indices(points, (a, b))?;
        let mut header = indexed("w", n);
        header.extend(strings([
            "metric_a".into(),
            "metric_b".into(),
            "direction_a".into(),
            "direction_b".into(),
            "on_front".into(),
        ]));
        let rows: Vec<Vec<String>> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut r: Vec<String> = p.weight.as_slice().iter().map(|v| fmt_f64(*v)).collect();
                r.extend([
                    fmt_f64(p.values[a]),
                    fmt_f64(p.values[b]),
                    directions[a].as_str().to_string(),
                    directions[b].as_str().to_string(),
                    on_front.contains(&i).to_string(),
                ]);
                r
            })
            .collect();
        io::write_csv(&dir.join(format!("fronts_{a}_{b}.csv")), FRONT_SCHEMA, &header, &rows)?;
    }
    Ok(())
}

fn write_iteration(dir: &Path, record: &IterationRecord, directions: &[Direction]) -> Result<()> {
    let n = directions.len();
    for ds in &record.datasets {
        io::write_dataset(&dir.join("datasets").join(format!("objective_{}.jsonl", ds.objective())), ds)?;
    }
    io::write_document(&dir.join("build_report.json"), BUILD_REPORT_SCHEMA, &record.build_reports)?;
    let policies = dir.join("policies");
    for (w, p) in &record.policies {
        let file = PolicyFile {
            weight: Some(w.clone()),
            policy: p.clone(),
        };
        io::write_document(&policies.join(format!("w_{}.json", w.label())), POLICY_SCHEMA, &file)?;
    }
    let next = PolicyFile {
        weight: None,
        policy: record.next_reference.clone(),
    };
    io::write_document(&policies.join("next_reference.json"), POLICY_SCHEMA, &next)?;
    let checkpoint = Checkpoint {
        iteration: record.iteration,
        reference: record.next_reference.clone(),
    };
    io::write_document(&dir.join("checkpoint.json"), CHECKPOINT_SCHEMA, &checkpoint)?;
    let mut rows: Vec<(&str, &WeightMetrics)> = record.metrics.iter().map(|m| ("trained", m)).collect();
    rows.extend(record.reference_metrics.iter().map(|m| ("reference", m)));
    write_metrics(&dir.join("metrics.csv"), n, directions, &rows)?;
    write_training_log(&dir.join("training_log.csv"), record)?;
    write_fronts(dir, &record.pareto_points(directions), directions, &axis_pairs(n))
}

fn summary_header(n: usize) -> Vec<String> {
    let mut h = strings(["iteration".into(), "weight".into()]);
    h.extend(indexed("reward", n));
    h.extend(strings(["subopt".into(), "subopt_sft".into(), "kl_to_reference".into()]));
    h
}

fn summary_row(iteration: usize, m: &WeightMetrics) -> Vec<String> {
    let mut r = strings([iteration.to_string(), m.weight.label()]);
    r.extend(m.expected_rewards.iter().map(|v| fmt_f64(*v)));
    r.extend([fmt_f64(m.subopt), fmt_f64(m.subopt_sft), fmt_f64(m.kl_to_reference)]);
    r
}

fn quantile_cells(q: Option<Quantiles>) -> Vec<String> {
    match q {
        Some(q) => [q.min, q.q1, q.median, q.q3, q.max].iter().map(|v| fmt_f64(*v)).collect(),
        None => vec![String::new(); 5],
    }
}

fn iterate(config: &RunConfig, env_path: Option<&Path>, resume: Option<&Path>) -> Result<Outcome> {
    let out = &config.output_dir;
    let loop_config: LoopConfig = config.loop_config();
    let env = match env_path {
        Some(p) => load_env(p)?,
        None => {
            let env = generate_environment(&config.env)?;
            io::write_json_raw(&out.join("env.json"), &env)?;
            env
        }
    };
    let scorers = scorers_for(config, &env)?;
    let directions: Vec<Direction> = scorers.iter().map(|s| s.direction()).collect();
    let n = env.num_objectives();
    let resolved = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    io::write_text(&out.join("config.toml"), &format!("# moalign.run_config v{}\n{resolved}", io::FORMAT_VERSION))?;

    let mut summary: Vec<Vec<String>> = Vec::new();
    let mut state = match resume {
        Some(dir) => {
            let path = dir.join("checkpoint.json");
            let cp: Checkpoint = io::read_document(&path, CHECKPOINT_SCHEMA)?;
            log::info!("resuming after iteration {}", cp.iteration);
            LoopState::resume(&env, &loop_config, cp.iteration, cp.reference)?
        }
        None => {
            let state = LoopState::initial(&env, &loop_config);
            let sft_rows = sft_metrics(&env, &scorers, &state, &loop_config)?;
            let base = out.join("baseline");
            let rows: Vec<(&str, &WeightMetrics)> = sft_rows.iter().map(|m| ("sft", m)).collect();
            write_metrics(&base.join("metrics.csv"), n, &directions, &rows)?;
            let file = PolicyFile {
                weight: None,
                policy: state.sft.policy().clone(),
            };
            io::write_document(&base.join("policies").join("sft.json"), POLICY_SCHEMA, &file)?;
            summary.extend(sft_rows.iter().map(|m| summary_row(0, m)));
            state
        }
    };
    if state.completed > loop_config.hyper.iterations {
        return Err(Error::Config(format!(
            "checkpoint is after iteration {} but hyper.iterations = {}",
            state.completed, loop_config.hyper.iterations
        )));
    }

    let mut quantile_rows = Vec::new();
    let mut fronts = Vec::new();
    while state.completed < loop_config.hyper.iterations {
        let (record, next) = pipeline::run_iteration(&state, &env, &scorers, &loop_config)?;
        let i = record.iteration;
        write_iteration(&out.join(format!("iter_{i}")), &record, &directions)?;
        summary.extend(record.standard.iter().map(|m| summary_row(i, m)));
        for (k, r) in record.build_reports.iter().enumerate() {
            let mut row = strings([i.to_string(), k.to_string(), r.scorer.clone(), r.direction.as_str().into(), r.produced.to_string()]);
            row.extend(quantile_cells(r.chosen_scores));
            quantile_rows.push(row);
        }
        if let Some(u) = record.standard.last() {
            println!("iteration {i}: SubOpt at w = {} is {:.6e}", u.weight.label(), u.subopt);
        }
        fronts.push(record.pareto_points(&directions));
        state = next;
    }

    io::write_csv(&out.join("summary.csv"), SUMMARY_SCHEMA, &summary_header(n), &summary)?;
    let qh = strings(
        ["iteration", "objective", "scorer", "direction", "pairs", "min", "q1", "median", "q3", "max"]
            .iter()
            .map(|s| s.to_string()),
    );
    io::write_csv(&out.join("chosen_quantiles.csv"), QUANTILES_SCHEMA, &qh, &quantile_rows)?;
    if fronts.len() >= 2 {
        let first = state.completed + 1 - fronts.len();
        let rows: Vec<Vec<String>> = pipeline::front_progression(&fronts)?
            .iter()
            .map(|p| {
                vec![
                    p.axes.0.to_string(),
                    p.axes.1.to_string(),
                    (p.from_iteration + first - 1).to_string(),
                    (p.to_iteration + first - 1).to_string(),
                    fmt_f64(p.fraction),
                ]
            })
            .collect();
        let ph = strings(["axis_a", "axis_b", "from_iteration", "to_iteration", "fraction"].iter().map(|s| s.to_string()));
        io::write_csv(&out.join("progression.csv"), PROGRESSION_SCHEMA, &ph, &rows)?;
    }
    Ok(Outcome::Success)
}

/// The SFT policy evaluated at each standard weight against itself.
fn sft_metrics(env: &Environment, scorers: &[Box<dyn Scorer>], state: &LoopState, config: &LoopConfig) -> Result<Vec<WeightMetrics>> {
    pipeline::standard_weights(env.num_objectives())?
        .iter()
        .map(|w| pipeline::evaluate_policy(env, scorers, state.sft.policy(), w, &state.sft, &state.sft, config, config.hyper.seed))
        .collect()
}

#[derive(Debug, Serialize)]
struct VerifySummary {
    bound: &'static str,
    c: f64,
    calibrated: bool,
    rho: f64,
    trials: usize,
    violations: usize,
    fraction: f64,
    threshold: f64,
    passed: bool,
    min_subopt: Option<f64>,
    coverage_rate: Option<f64>,
    ratio_quantiles: Option<Quantiles>,
}

fn verify(config: &RunConfig, which: Bound, calibrate: bool, dir: &Path) -> Result<Outcome> {
    let mut tc: TheoryConfig = config.theory.clone();
    if tc.trials < MIN_VERIFY_TRIALS {
        return Err(Error::Config(format!(
            "[theory] trials must be >= {MIN_VERIFY_TRIALS} for verify, got {}",
            tc.trials
        )));
    }
    if which == Bound::Theorem1 && tc.objectives < 1 {
        return Err(Error::Config("[theory] objectives must be >= 1".into()));
    }
    if calibrate {
        let cal = theory::calibrate_c(&tc)?;
        let rows: Vec<Vec<String>> = cal.ratios.iter().enumerate().map(|(i, r)| vec![i.to_string(), fmt_f64(*r)]).collect();
        io::write_csv(&dir.join("calibration.csv"), CALIBRATION_SCHEMA, &["index".into(), "ratio".into()], &rows)?;
        println!("calibrated C = {:.6} over {} trials", cal.c, cal.trials);
        tc.c = cal.c;
    }
    let summary = match which {
        Bound::Lemma1 => {
            let s = theory::verify_lemma1(&tc)?;
            let header = strings(
                ["trial", "seed", "K", "d", "rho", "error", "converged", "violated"].iter().map(|s| s.to_string()),
            );
            let rows: Vec<Vec<String>> = s
                .reports
                .iter()
                .map(|t| {
                    vec![
                        t.trial.to_string(),
                        t.seed.to_string(),
                        t.pairs.to_string(),
                        t.dim.to_string(),
                        fmt_f64(t.rho),
                        fmt_f64(t.error),
                        t.converged.to_string(),
                        t.violated.to_string(),
                    ]
                })
                .collect();
            io::write_csv(&dir.join("lemma1.csv"), LEMMA1_SCHEMA, &header, &rows)?;
            VerifySummary {
                bound: "lemma1",
                c: s.c,
                calibrated: calibrate,
                rho: s.rho,
                trials: s.trials,
                violations: s.violations,
                fraction: s.fraction,
                threshold: s.threshold,
                passed: s.fraction <= s.threshold,
                min_subopt: None,
                coverage_rate: None,
                ratio_quantiles: None,
            }
        }
        Bound::Theorem1 => {
            let s = theory::verify_theorem1(&tc)?;
            let header = strings(theory::BOUND_CSV_HEADER.iter().map(|s| s.to_string()));
            let rows: Vec<Vec<String>> = s.reports.iter().map(|r| r.csv_record().to_vec()).collect();
            io::write_csv(&dir.join("theorem1.csv"), THEOREM1_SCHEMA, &header, &rows)?;
            VerifySummary {
                bound: "theorem1",
                c: s.c,
                calibrated: calibrate,
                rho: s.rho,
                trials: s.trials,
                violations: s.violated_trials,
                fraction: s.fraction,
                threshold: s.threshold,
                passed: s.fraction <= s.threshold,
                min_subopt: Some(s.min_subopt),
                coverage_rate: Some(s.coverage_rate),
                ratio_quantiles: s.ratio_quantiles,
            }
        }
    };
    io::write_document(&dir.join("summary.json"), VERIFY_SUMMARY_SCHEMA, &summary)?;
    println!(
        "{}: {} of {} trials violated (fraction {:.4}, threshold {:.4}, C = {:.6}, rho = {:.6}) {}",
        summary.bound,
        summary.violations,
        summary.trials,
        summary.fraction,
        summary.threshold,
        summary.c,
        summary.rho,
        if summary.passed { "PASS" } else { "FAIL" }
    );
    Ok(if summary.passed {
        Outcome::Success
    } else {
        Outcome::VerificationFailed
    })
}

/// Rebuilds higher-better points and directions from a `metrics.csv` table.
pub fn points_from_metrics(table: &Table, path: &Path) -> Result<(Vec<ParetoPoint>, Vec<Direction>)> {
    let missing = |what: String| Error::Malformed {
        path: path.to_path_buf(),
        reason: what,
    };
    let col = |name: &str| table.column(name).ok_or_else(|| missing(format!("missing column {name}")));
    let n = (0..).take_while(|k| table.column(&format!("w_{k}")).is_some()).count();
    if n == 0 {
        return Err(missing("no weight columns".into()));
    }
    let kind = col("policy")?;
    let w_cols: Vec<usize> = (0..n).map(|k| col(&format!("w_{k}"))).collect::<Result<_>>()?;
    let s_cols: Vec<usize> = (0..n).map(|k| col(&format!("score_{k}"))).collect::<Result<_>>()?;
    let d_cols: Vec<usize> = (0..n).map(|k| col(&format!("direction_{k}"))).collect::<Result<_>>()?;
    let number = |s: &str| s.parse::<f64>().map_err(|_| missing(format!("bad number {s:?}")));
    let direction = |s: &str| match s {
        "higher-better" => Ok(Direction::HigherBetter),
        "lower-better" => Ok(Direction::LowerBetter),
        other => Err(missing(format!("bad direction {other:?}"))),
    };
    let mut directions: Option<Vec<Direction>> = None;
    let mut points = Vec::new();
    for row in table.rows.iter().filter(|r| r.get(kind).map(String::as_str) == Some("trained")) {
        let cell = |c: usize| row.get(c).map(String::as_str).ok_or_else(|| missing("short row".into()));
        let dirs: Vec<Direction> = d_cols.iter().map(|c| direction(cell(*c)?)).collect::<Result<_>>()?;
        match &directions {
            Some(d) if *d != dirs => return Err(missing("directions differ between rows".into())),
            _ => directions = Some(dirs.clone()),
        }
        let w: Vec<f64> = w_cols.iter().map(|c| number(cell(*c)?)).collect::<Result<_>>()?;
        let values = s_cols
            .iter()
            .zip(&dirs)
            .map(|(c, d)| Ok(d.orient(number(cell(*c)?)?)))
            .collect::<Result<_>>()?;
        points.push(ParetoPoint {
            weight: WeightVector::new(&w).map_err(|e| missing(e.to_string()))?,
            values,
        });
    }
    let directions = directions.ok_or_else(|| missing("no trained rows".into()))?;
    Ok((points, directions))
}

fn pareto(dir: &Path, axes: &[(usize, usize)], out: &Path) -> Result<Outcome> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "iteration directory not found")));
    }
    let path: PathBuf = dir.join("metrics.csv");
    let table = io::read_csv(&path, METRICS_SCHEMA)?;
    let (points, directions) = points_from_metrics(&table, &path)?;
    let axes = if axes.is_empty() { axis_pairs(directions.len()) } else { axes.to_vec() };
    write_fronts(out, &points, &directions, &axes)?;
    for (a, b) in &axes {
        let front = pipeline::pareto_front_indices(&points, (*a, *b))?;
        println!("axes ({a}, {b}): {} of {} points on the front", front.len(), points.len());
    }
    Ok(Outcome::Success)
}
