//! Generation loops for plain quality-diversity search (QD), its
//! model-screened variant (M-QD), and the uniform random baseline.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::env::{evaluate, Action, EnvConfig};
use crate::error::{Error, Result};
use crate::metrics::{avg_quality, coverage, CoverageConfig};
use crate::repertoire::{Archive, InsertOutcome, Repertoire, Skill};
use crate::rng::Streams;
use crate::surrogate::{predicted_novelty, predicted_quality_improvement, ModelConfig, Surrogate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Qd,
    Mqd,
    Random,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Qd => "qd",
            Algorithm::Mqd => "mqd",
            Algorithm::Random => "random",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qd" => Ok(Algorithm::Qd),
            "mqd" => Ok(Algorithm::Mqd),
            "random" => Ok(Algorithm::Random),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Everything that determines a run. Defaults reproduce the reference
/// 2D protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub max_generations: usize,
    pub population_size: usize,
    pub k: usize,
    pub t_dist: f64,
    pub t_nov: f64,
    pub t_qua: f64,
    pub warmup_samples: usize,
    pub mutation_sigma: f64,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub seed: u64,
    pub coverage_resolution: usize,
    pub env: EnvConfig,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algorithm: Algorithm::Qd,
            max_generations: 250,
            population_size: 100,
            k: 5,
            t_dist: 0.02,
            t_nov: 0.04,
            t_qua: 0.0,
            warmup_samples: 1000,
            mutation_sigma: 0.05,
            mutation_rate: 0.3,
            crossover_rate: 0.5,
            seed: 0,
            coverage_resolution: CoverageConfig::DEFAULT_RESOLUTION,
            env: EnvConfig::obstacle2d(),
            model: ModelConfig::default(),
        }
    }
}

impl RunConfig {
    /// Checks hard constraints and returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_generations < 1 {
            return fail("max_generations must be at least 1");
        }
        if self.population_size < 1 {
            return fail("population_size must be at least 1");
        }
        if self.k < 1 {
            return fail("k must be at least 1");
        }
        if !(self.t_dist > 0.0) {
            return fail("t_dist must be positive");
        }
        for (name, v) in [
            ("mutation_rate", self.mutation_rate),
            ("crossover_rate", self.crossover_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.mutation_sigma >= 0.0) {
            return fail("mutation_sigma must be non-negative");
        }
        if self.t_nov.is_nan() || self.t_qua.is_nan() {
            return fail("screening thresholds must not be NaN");
        }
        self.env.validate()?;
        CoverageConfig {
            radius: self.t_dist,
            grid_resolution: self.coverage_resolution,
        }
        .validate()?;
        if self.algorithm == Algorithm::Mqd {
            self.model.validate()?;
        }
        let mut warnings = Vec::new();
        if self.t_nov < self.t_dist {
            warnings.push(format!(
                "t_nov ({}) is below t_dist ({}); screening will pass almost everything",
                self.t_nov, self.t_dist
            ));
        }
        Ok(warnings)
    }

    pub fn coverage_config(&self) -> CoverageConfig {
        CoverageConfig {
            radius: self.t_dist,
            grid_resolution: self.coverage_resolution,
        }
    }
}

/// Per-generation counters, one CSV row each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub evaluations: usize,
    pub screened_out: usize,
    pub repertoire_size: usize,
    pub coverage: f64,
    pub avg_quality: f64,
}

/// What happened to one proposed candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Screened,
    Added,
    Replaced,
    Rejected,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub repertoire: Repertoire,
    pub archive: Archive,
    pub stats: Vec<GenerationStats>,
    /// Trained forward model (M-QD only).
    pub surrogate: Option<Surrogate>,
    /// Fate of every candidate in proposal order.
    pub decisions: Vec<Decision>,
}

/// Draws `count` actions with replacement, each skill chosen with
/// probability proportional to its cached novelty (uniformly if all are 0).
pub fn select_parents<R: Rng + ?Sized>(rep: &Repertoire, count: usize, rng: &mut R) -> Result<Vec<Action>> {
    if rep.is_empty() {
        return Err(Error::EmptyRepertoire);
    }
    let skills = rep.skills();
    let total: f64 = skills.iter().map(|s| s.novelty).sum();
    if total > 0.0 {
        let dist = WeightedIndex::new(skills.iter().map(|s| s.novelty))
            .map_err(|e| Error::Config(format!("invalid novelty weights: {e}")))?;
        Ok((0..count).map(|_| skills[dist.sample(rng)].action.clone()).collect())
    } else {
        Ok((0..count)
            .map(|_| skills[rng.random_range(0..skills.len())].action.clone())
            .collect())
    }
}

/// One child per parent: uniform crossover with a random mate (with
/// probability `crossover_rate`), then per-gene Gaussian mutation, then
/// clipping to `[-1, 1]`.
pub fn vary<R: Rng + ?Sized>(parents: &[Action], cfg: &RunConfig, rng: &mut R) -> Vec<Action> {
    let normal = Normal::new(0.0, cfg.mutation_sigma.max(0.0)).expect("finite sigma");
    parents
        .iter()
        .map(|p| {
            let mut child = p.clone();
            if rng.random_bool(cfg.crossover_rate) {
                let mate = &parents[rng.random_range(0..parents.len())];
                for (g, m) in child.0.iter_mut().zip(mate.genes()) {
                    if rng.random_bool(0.5) {
                        *g = *m;
                    }
                }
            }
            for g in child.0.iter_mut() {
                if rng.random_bool(cfg.mutation_rate) {
                    *g += normal.sample(rng);
                }
            }
            child.clip();
            child
        })
        .collect()
}

pub fn random_actions<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Vec<Action> {
    (0..count)
        .map(|_| Action((0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()))
        .collect()
}

/// Runs the configured algorithm.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    Search::new(cfg)?.run()
}

pub fn run_qd(cfg: &RunConfig) -> Result<RunOutput> {
    run(&RunConfig { algorithm: Algorithm::Qd, ..cfg.clone() })
}

pub fn run_mqd(cfg: &RunConfig) -> Result<RunOutput> {
    run(&RunConfig { algorithm: Algorithm::Mqd, ..cfg.clone() })
}

pub fn run_random(cfg: &RunConfig) -> Result<RunOutput> {
    run(&RunConfig { algorithm: Algorithm::Random, ..cfg.clone() })
}

struct Search<'a> {
    cfg: &'a RunConfig,
    streams: Streams,
    rep: Repertoire,
    archive: Archive,
    surrogate: Option<Surrogate>,
    model_ready: bool,
    evaluations: usize,
    screened: usize,
    stats: Vec<GenerationStats>,
    decisions: Vec<Decision>,
}

impl<'a> Search<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        let mut streams = Streams::new(cfg.seed);
        let surrogate = (cfg.algorithm == Algorithm::Mqd).then(|| {
            Surrogate::new(cfg.env.action_dim(), cfg.env.bounds, &cfg.model, &mut streams.model_init)
        });
        Ok(Search {
            cfg,
            streams,
            rep: Repertoire::new(cfg.k, cfg.t_dist)?,
            archive: Archive::new(),
            surrogate,
            model_ready: false,
            evaluations: 0,
            screened: 0,
            stats: Vec::with_capacity(cfg.max_generations),
            decisions: Vec::new(),
        })
    }

    fn run(mut self) -> Result<RunOutput> {
        for generation in 0..self.cfg.max_generations {
            self.generation(generation)?;
            self.rep.refresh_novelties();
            if let Some(model) = self.surrogate.as_mut() {
                if self.evaluations >= self.cfg.warmup_samples && !self.rep.is_empty() {
                    model.train(&self.rep, &self.cfg.model, &mut self.streams.batches)?;
                    self.model_ready = true;
                }
            }
            self.record(generation);
        }
        Ok(RunOutput {
            repertoire: self.rep,
            archive: self.archive,
            stats: self.stats,
            surrogate: self.surrogate,
            decisions: self.decisions,
        })
    }

    fn propose(&mut self, count: usize) -> Result<Vec<Action>> {
        let dim = self.cfg.env.action_dim();
        if self.cfg.algorithm == Algorithm::Random || self.rep.is_empty() {
            return Ok(random_actions(count, dim, &mut self.streams.init));
        }
        let parents = select_parents(&self.rep, count, &mut self.streams.selection)?;
        Ok(vary(&parents, self.cfg, &mut self.streams.variation))
    }

    fn generation(&mut self, generation: usize) -> Result<()> {
        let pop = self.cfg.population_size;
        if generation == 0 || !self.model_ready {
            for a in self.propose(pop)? {
                self.evaluate_and_insert(a)?;
            }
            return Ok(());
        }

        for a in self.propose(pop)? {
            if self.passes_screening(&a)? {
                self.evaluate_and_insert(a)?;
            } else {
                self.screened += 1;
                self.decisions.push(Decision::Screened);
            }
        }
        Ok(())
    }

    /// Predicted novelty first, predicted quality improvement second.
    fn passes_screening(&self, a: &Action) -> Result<bool> {
        let model = self.surrogate.as_ref().expect("screening requires a model");
        let (b, q) = model.predict(a)?;
        if predicted_novelty(&self.rep, &b)? > self.cfg.t_nov {
            return Ok(true);
        }
        Ok(predicted_quality_improvement(&self.rep, q, &b)? > self.cfg.t_qua)
    }

    fn evaluate_and_insert(&mut self, a: Action) -> Result<()> {
        let (b, q) = evaluate(&a, &self.cfg.env)?;
        self.evaluations += 1;
        let d = match self.rep.try_insert(&mut self.archive, Skill::new(a, b, q)) {
            InsertOutcome::Added => Decision::Added,
            InsertOutcome::Replaced(_) => Decision::Replaced,
            InsertOutcome::Rejected => Decision::Rejected,
        };
        self.decisions.push(d);
        Ok(())
    }

    fn record(&mut self, generation: usize) {
        self.stats.push(GenerationStats {
            generation,
            evaluations: self.evaluations,
            screened_out: self.screened,
            repertoire_size: self.rep.len(),
            coverage: coverage(&self.rep, &self.cfg.env.bounds, &self.cfg.coverage_config()),
            avg_quality: avg_quality(&self.rep).unwrap_or(0.0),
        });
    }
}
