use std::path::Path;

use anyhow::{bail, Context, Result};
use mqd::adaptation::{adapt, AdaptConfig, Strategy};
use mqd::io::{repertoire_from_json, surrogate_from_json, write_atomic};
use mqd::repertoire::Repertoire;
use mqd::surrogate::Surrogate;
use mqd::{Behavior, EnvConfig, Rect};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evolve::csv_bytes;
use crate::spec::AdaptSpec;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptRow {
    pub goal_x: f64,
    pub goal_y: f64,
    pub strategy: Strategy,
    pub steps: usize,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptSummary {
    pub strategy: Strategy,
    pub goals: usize,
    pub mean_error: f64,
    pub mean_steps: f64,
}

#[derive(Deserialize)]
struct GoalRow {
    goal_x: f64,
    goal_y: f64,
}

/// Goals drawn uniformly from `bounds`.
pub fn uniform_goals(bounds: &Rect, count: usize, seed: u64) -> Vec<Behavior> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            Behavior([
                rng.random_range(bounds.min[0]..=bounds.max[0]),
                rng.random_range(bounds.min[1]..=bounds.max[1]),
            ])
        })
        .collect()
}

/// Reads a `goal_x,goal_y` CSV.
pub fn read_goals(path: &Path) -> Result<Vec<Behavior>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let goals = reader
        .deserialize::<GoalRow>()
        .map(|r| r.map(|g| Behavior([g.goal_x, g.goal_y])))
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(goals)
}

/// Every strategy on every goal; rows are grouped by strategy in the
/// requested order, goals in input order.
pub fn run_adaptation(
    rep: &Repertoire,
    env: &EnvConfig,
    model: Option<&Surrogate>,
    goals: &[Behavior],
    strategies: &[Strategy],
    base: &AdaptConfig,
) -> Result<Vec<AdaptRow>> {
    let mut rows = Vec::with_capacity(goals.len() * strategies.len());
    for &strategy in strategies {
        let cfg = AdaptConfig { strategy, ..base.clone() };
        let part: Vec<AdaptRow> = goals
            .par_iter()
            .map(|g| {
                let r = adapt(rep, env, model, g, &cfg)?;
                Ok(AdaptRow {
                    goal_x: g.x(),
                    goal_y: g.y(),
                    strategy,
                    steps: r.steps_executed,
                    error: r.behavioral_error,
                })
            })
            .collect::<Result<_>>()?;
        rows.extend(part);
    }
    Ok(rows)
}

pub fn summarize(rows: &[AdaptRow], strategies: &[Strategy]) -> Vec<AdaptSummary> {
    strategies
        .iter()
        .map(|&strategy| {
            let mine: Vec<&AdaptRow> = rows.iter().filter(|r| r.strategy == strategy).collect();
            let n = mine.len().max(1) as f64;
            AdaptSummary {
                strategy,
                goals: mine.len(),
                mean_error: mine.iter().map(|r| r.error).sum::<f64>() / n,
                mean_steps: mine.iter().map(|r| r.steps as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

pub struct AdaptInputs<'a> {
    pub repertoire: &'a Path,
    pub net: Option<&'a Path>,
    pub goals: Option<&'a Path>,
    pub env: Option<EnvConfig>,
}

/// Loads the inputs, adapts and writes `adapt.csv` and `adapt_summary.csv`
/// under `out`.
pub fn cmd_adapt(inputs: &AdaptInputs, spec: &AdaptSpec, out: &Path, jobs: usize) -> Result<Vec<AdaptSummary>> {
    let text = std::fs::read_to_string(inputs.repertoire)
        .with_context(|| format!("reading {}", inputs.repertoire.display()))?;
    let (rep, stored_env) =
        repertoire_from_json(&text).with_context(|| format!("loading {}", inputs.repertoire.display()))?;
    let env = match (&inputs.env, stored_env) {
        (Some(e), _) => e.clone(),
        (None, Some(e)) => e,
        (None, None) => bail!("the repertoire file records no environment; pass --task"),
    };
    let model = match inputs.net {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(surrogate_from_json(&text).with_context(|| format!("loading {}", path.display()))?)
        }
        None => None,
    };
    if spec.strategies.contains(&Strategy::ModelBased) && model.is_none() {
        bail!("model_based adaptation needs --net");
    }
    let goals = match inputs.goals {
        Some(path) => read_goals(path)?,
        None => uniform_goals(&env.bounds, spec.num_goals, spec.goal_seed),
    };

    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let rows = pool.install(|| run_adaptation(&rep, &env, model.as_ref(), &goals, &spec.strategies, &spec.adapt))?;
    let summary = summarize(&rows, &spec.strategies);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_atomic(&out.join("adapt.csv"), &csv_bytes(&rows)?)?;
    write_atomic(&out.join("adapt_summary.csv"), &csv_bytes(&summary)?)?;
    Ok(summary)
}
