use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mqd::io::{repertoire_to_json, surrogate_to_json, write_atomic};
use mqd::{run, Algorithm, GenerationStats, RunOutput};
use rayon::prelude::*;
use serde::Serialize;

use crate::spec::ExperimentSpec;
use crate::svg;

/// Finished run, kept in memory until every file is rendered.
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub output: RunOutput,
}

/// One row of the across-seed summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub generation: usize,
    pub seeds: usize,
    pub evaluations_mean: f64,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub avg_quality_mean: f64,
    pub avg_quality_std: f64,
}

pub fn run_file_stem(spec: &ExperimentSpec, algorithm: Algorithm, seed: u64) -> String {
    format!("{}_{}_seed{}", spec.task.name(), algorithm.name(), seed)
}

pub fn aggregate_file_name(spec: &ExperimentSpec, algorithm: Algorithm) -> String {
    format!("{}_{}_aggregate.csv", spec.task.name(), algorithm.name())
}

/// Runs every (algorithm, seed) pair on up to `jobs` threads and writes
/// the results under `out`. Returns the finished runs in spec order.
pub fn cmd_evolve(spec: &ExperimentSpec, out: &Path, jobs: usize, emit_svg: bool) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let pairs: Vec<(Algorithm, u64)> = spec
        .algorithms
        .iter()
        .flat_map(|&a| spec.seeds.iter().map(move |&s| (a, s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let records: Vec<RunRecord> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(algorithm, seed)| {
                let output = run(&spec.run_config(algorithm, seed))
                    .with_context(|| format!("{} seed {seed}", algorithm.name()))?;
                write_run(spec, out, algorithm, seed, &output)?;
                Ok(RunRecord { algorithm, seed, output })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    for &algorithm in &spec.algorithms {
        let runs: Vec<&[GenerationStats]> = records
            .iter()
            .filter(|r| r.algorithm == algorithm)
            .map(|r| r.output.stats.as_slice())
            .collect();
        let rows = aggregate(&runs);
        write_atomic(&out.join(aggregate_file_name(spec, algorithm)), &csv_bytes(&rows)?)?;
    }
    if emit_svg {
        let series: Vec<(String, Vec<f64>)> = spec
            .algorithms
            .iter()
            .map(|&a| {
                let runs: Vec<&[GenerationStats]> =
                    records.iter().filter(|r| r.algorithm == a).map(|r| r.output.stats.as_slice()).collect();
                (a.name().to_string(), aggregate(&runs).iter().map(|r| r.coverage_mean).collect())
            })
            .collect();
        let title = format!("{}: mean coverage", spec.task.name());
        let path = out.join(format!("{}_coverage.svg", spec.task.name()));
        write_atomic(&path, svg::line_chart(&title, "generation", "coverage", &series).as_bytes())?;
    }
    Ok(records)
}

fn write_run(spec: &ExperimentSpec, out: &Path, algorithm: Algorithm, seed: u64, output: &RunOutput) -> Result<()> {
    let stem = run_file_stem(spec, algorithm, seed);
    let env = spec.env();
    let mut files: Vec<(PathBuf, Vec<u8>)> = vec![
        (out.join(format!("{stem}_stats.csv")), csv_bytes(&output.stats)?),
        (
            out.join(format!("{stem}_repertoire.json")),
            repertoire_to_json(&output.repertoire, Some(&env)).into_bytes(),
        ),
    ];
    if let Some(model) = &output.surrogate {
        files.push((out.join(format!("{stem}_net.json")), surrogate_to_json(model).into_bytes()));
    }
    for (path, bytes) in files {
        write_atomic(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

/// Mean and sample standard deviation per generation across runs. Runs
/// of unequal length are summarised over the generations they share.
pub fn aggregate(runs: &[&[GenerationStats]]) -> Vec<AggregateRow> {
    let generations = runs.iter().map(|r| r.len()).min().unwrap_or(0);
    (0..generations)
        .map(|g| {
            let col = |f: fn(&GenerationStats) -> f64| -> Vec<f64> { runs.iter().map(|r| f(&r[g])).collect() };
            let (cov_mean, cov_std) = mean_std(&col(|s| s.coverage));
            let (q_mean, q_std) = mean_std(&col(|s| s.avg_quality));
            AggregateRow {
                generation: runs[0][g].generation,
                seeds: runs.len(),
                evaluations_mean: mean_std(&col(|s| s.evaluations as f64)).0,
                coverage_mean: cov_mean,
                coverage_std: cov_std,
                avg_quality_mean: q_mean,
                avg_quality_std: q_std,
            }
        })
        .collect()
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
