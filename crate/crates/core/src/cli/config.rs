//! Run configuration: one TOML file, dotted-path overrides, and a seed
//! override from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::pdc::PdcConfig;
use crate::pipeline::{LoopConfig, NextReference};
use crate::theory::TheoryConfig;
use crate::types::Hyperparameters;

/// Environment variable that replaces every seed in the configuration.
pub const SEED_ENV_VAR: &str = "MOALIGN_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    /// Objective whose scorer reports an error-style (lower-better) value.
    pub lower_better: Option<usize>,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            lower_better: Some(crate::env::LOWER_BETTER_SCORER),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    pub sft_steps: usize,
    pub sft_learning_rate: f64,
    pub next_reference: NextReference,
    pub eval_samples: usize,
}

impl Default for LoopSection {
    fn default() -> Self {
        let d = LoopConfig::default();
        Self {
            sft_steps: d.sft_steps,
            sft_learning_rate: d.sft_learning_rate,
            next_reference: d.next_reference,
            eval_samples: d.eval_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub hyper: Hyperparameters,
    pub pdc: PdcConfig,
    #[serde(rename = "loop")]
    pub loop_: LoopSection,
    pub scorers: ScorerConfig,
    pub theory: TheoryConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("moalign-out"),
            env: EnvConfig::default(),
            hyper: Hyperparameters::default(),
            pdc: PdcConfig::default(),
            loop_: LoopSection::default(),
            scorers: ScorerConfig::default(),
            theory: TheoryConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or defaults when `None`), applies `overrides` as
    /// `(dotted.path, value)` pairs, then the seed variable, then validates.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)], seed_var: Option<&str>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            set_path(&mut table, key, parse_value(value))?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(raw) = seed_var {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV_VAR} must be an unsigned integer, got {raw:?}")))?;
            config.env.seed = seed;
            config.hyper.seed = seed;
            config.theory.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        fn tag(section: &'static str) -> impl Fn(Error) -> Error {
            move |e| Error::Config(format!("[{section}] {e}"))
        }
        self.env.validate().map_err(tag("env"))?;
        self.loop_config().validate().map_err(tag("hyper/pdc/loop"))?;
        self.theory.validate().map_err(tag("theory"))?;
        if let Some(k) = self.scorers.lower_better {
            if k >= self.env.objectives {
                return Err(Error::Config(format!(
                    "[scorers] lower_better = {k} but there are only {} objectives",
                    self.env.objectives
                )));
            }
        }
        Ok(())
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            hyper: self.hyper.clone(),
            pdc: self.pdc.clone(),
            sft_steps: self.loop_.sft_steps,
            sft_learning_rate: self.loop_.sft_learning_rate,
            next_reference: self.loop_.next_reference.clone(),
            eval_samples: self.loop_.eval_samples,
        }
    }
}

/// Interprets an override as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is not a table")))?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, RunConfig::default());
    }

    #[test]
    fn overrides_and_seed_variable() {
        let overrides = vec![
            ("hyper.epochs".to_string(), "3".to_string()),
            ("env.dim".to_string(), "6".to_string()),
            ("output_dir".to_string(), "somewhere".to_string()),
        ];
        let c = RunConfig::load(None, &overrides, Some("42")).unwrap();
        assert_eq!(c.hyper.epochs, 3);
        assert_eq!(c.env.dim, 6);
        assert_eq!(c.output_dir, PathBuf::from("somewhere"));
        assert_eq!((c.env.seed, c.hyper.seed, c.theory.seed), (42, 42, 42));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let bad = vec![("hyper.epoch".to_string(), "3".to_string())];
        assert!(matches!(RunConfig::load(None, &bad, None), Err(Error::Config(_))));
        let bad = vec![("env.dim".to_string(), "1".to_string())];
        let err = RunConfig::load(None, &bad, None).unwrap_err().to_string();
        assert!(err.contains("centering constraint"), "{err}");
        assert!(RunConfig::load(None, &[], Some("x")).is_err());
    }

    #[test]
    fn file_values_are_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[hyper]\niterations = 1\n[loop]\nnext_reference = { weight = [1.0, 0.0, 0.0] }\n").unwrap();
        let c = RunConfig::load(Some(&path), &[], None).unwrap();
        assert_eq!(c.hyper.iterations, 1);
        assert_eq!(c.loop_.next_reference, NextReference::Weight(vec![1.0, 0.0, 0.0]));
    }
}
