//! Experiment description files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mqd::adaptation::{AdaptConfig, Strategy};
use mqd::{Algorithm, EnvConfig, RunConfig, TaskKind};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// `evolve` input. Everything in `run` overrides the reference defaults;
/// the algorithm, seed and environment are set per run from the fields
/// below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub task: TaskKind,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub run: RunConfig,
    /// Replaces the task's preset layout.
    #[serde(default)]
    pub env: Option<EnvConfig>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(task: TaskKind, algorithms: Vec<Algorithm>, seeds: Vec<u64>) -> Self {
        ExperimentSpec {
            schema_version: SCHEMA_VERSION,
            task,
            algorithms,
            seeds,
            run: RunConfig::default(),
            env: None,
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).context("parsing experiment spec")?;
        check_version(&value)?;
        if let Some(run) = value.get("run").and_then(|r| r.as_object()) {
            for key in ["algorithm", "seed", "env"] {
                if run.contains_key(key) {
                    bail!("'run.{key}' is not allowed; use the top-level algorithms, seeds and env fields");
                }
            }
        }
        let spec: ExperimentSpec = serde_json::from_value(value).context("parsing experiment spec")?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            bail!("at least one algorithm is required");
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if let Some(env) = &self.env {
            if env.task != self.task {
                bail!("env.task ({}) differs from task ({})", env.task.name(), self.task.name());
            }
        }
        self.run_config(self.algorithms[0], self.seeds[0]).validate()?;
        Ok(())
    }

    pub fn env(&self) -> EnvConfig {
        self.env.clone().unwrap_or_else(|| EnvConfig::preset(self.task))
    }

    pub fn run_config(&self, algorithm: Algorithm, seed: u64) -> RunConfig {
        RunConfig {
            algorithm,
            seed,
            env: self.env(),
            ..self.run.clone()
        }
    }
}

/// `adapt` input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSpec {
    pub schema_version: u32,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_goals")]
    pub num_goals: usize,
    #[serde(default)]
    pub goal_seed: u64,
    /// The `strategy` field inside is ignored; see `strategies`.
    #[serde(default)]
    pub adapt: AdaptConfig,
}

fn all_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn default_goals() -> usize {
    1000
}

impl Default for AdaptSpec {
    fn default() -> Self {
        AdaptSpec {
            schema_version: SCHEMA_VERSION,
            strategies: all_strategies(),
            num_goals: default_goals(),
            goal_seed: 0,
            adapt: AdaptConfig::default(),
        }
    }
}

impl AdaptSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).context("parsing adaptation spec")?;
        check_version(&value)?;
        let spec: AdaptSpec = serde_json::from_value(value).context("parsing adaptation spec")?;
        if spec.strategies.is_empty() {
            bail!("at least one strategy is required");
        }
        spec.adapt.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }
}

fn check_version(value: &serde_json::Value) -> Result<()> {
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => Ok(()),
        Some(v) => bail!("unsupported schema_version {v} (this build reads {SCHEMA_VERSION})"),
        None => bail!("missing integer field 'schema_version'"),
    }
}

/// Parses `1,2,5-8` into seeds.
pub fn parse_seeds(list: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
                if b < a {
                    bail!("empty seed range '{part}'");
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().with_context(|| format!("bad seed '{part}'"))?),
        }
    }
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_spec_uses_reference_defaults() {
        let spec = ExperimentSpec::from_json(
            r#"{"schema_version": 1, "task": "obstacle2d", "algorithms": ["qd"], "seeds": [3]}"#,
        )
        .unwrap();
        let cfg = spec.run_config(Algorithm::Qd, 3);
        assert_eq!(cfg.max_generations, 250);
        assert_eq!(cfg.population_size, 100);
        assert_eq!(cfg.env, EnvConfig::obstacle2d());
    }

    #[test]
    fn overrides_apply() {
        let spec = ExperimentSpec::from_json(
            r#"{"schema_version": 1, "task": "object2d", "algorithms": ["mqd", "qd"], "seeds": [1, 2],
                "run": {"max_generations": 7, "model": {"hidden_units": 8}}}"#,
        )
        .unwrap();
        let cfg = spec.run_config(Algorithm::Mqd, 2);
        assert_eq!(cfg.max_generations, 7);
        assert_eq!(cfg.model.hidden_units, 8);
        assert_eq!(cfg.model.batch_size, 16);
        assert_eq!(cfg.env.task, TaskKind::Object2d);
    }

    #[test]
    fn bad_specs_are_rejected() {
        for text in [
            r#"{"task": "obstacle2d", "algorithms": ["qd"], "seeds": [1]}"#,
            r#"{"schema_version": 2, "task": "obstacle2d", "algorithms": ["qd"], "seeds": [1]}"#,
            r#"{"schema_version": 1, "task": "obstacle2d", "algorithms": ["qd"], "seeds": [1], "sedes": [2]}"#,
            r#"{"schema_version": 1, "task": "obstacle2d", "algorithms": [], "seeds": [1]}"#,
            r#"{"schema_version": 1, "task": "obstacle2d", "algorithms": ["qd"], "seeds": []}"#,
            r#"{"schema_version": 1, "task": "obstacle2d", "algorithms": ["qd"], "seeds": [1], "run": {"seed": 4}}"#,
            r#"{"schema_version": 1, "task": "obstacle2d", "algorithms": ["qd"], "seeds": [1], "run": {"k": 0}}"#,
            r#"{"schema_version": 1, "task": "cube", "algorithms": ["qd"], "seeds": [1]}"#,
        ] {
            assert!(ExperimentSpec::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn adapt_spec_defaults() {
        let spec = AdaptSpec::from_json(r#"{"schema_version": 1}"#).unwrap();
        assert_eq!(spec, AdaptSpec::default());
        assert_eq!(spec.adapt.step_size, 0.1);
        assert_eq!(spec.adapt.max_steps, 10);
        assert!(AdaptSpec::from_json(r#"{"schema_version": 1, "lambda": 1}"#).is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1,2, 5-7").unwrap(), vec![1, 2, 5, 6, 7]);
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("4-2").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
