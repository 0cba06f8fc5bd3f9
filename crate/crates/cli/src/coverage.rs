use std::path::Path;

use anyhow::{bail, Context, Result};
use mqd::io::repertoire_from_json;
use mqd::metrics::{avg_quality, coverage, CoverageConfig};
use mqd::EnvConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    pub coverage: f64,
    /// `None` for an empty repertoire.
    pub avg_quality: Option<f64>,
}

/// Coverage (disc radius = the repertoire's `t_dist`) and mean quality of
/// a saved repertoire. `env` overrides the environment stored in the file.
pub fn cmd_coverage(path: &Path, env: Option<EnvConfig>, resolution: usize) -> Result<CoverageReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (rep, stored) = repertoire_from_json(&text).with_context(|| format!("loading {}", path.display()))?;
    let Some(env) = env.or(stored) else {
        bail!("{} records no environment; pass --task", path.display());
    };
    let cfg = CoverageConfig { radius: rep.t_dist(), grid_resolution: resolution };
    cfg.validate()?;
    Ok(CoverageReport {
        coverage: coverage(&rep, &env.bounds, &cfg),
        avg_quality: avg_quality(&rep).ok(),
    })
}
