//! Repertoire quality measures: behavior-space coverage and mean quality.
//!
//! Coverage treats every stored behavior as a disc of radius `t_dist` and
//! reports the fraction of the bounded behavior space inside the union of
//! those discs. The union area is measured on a regular grid of cell
//! centres, which is deterministic and converges quickly with resolution.

use serde::{Deserialize, Serialize};

use crate::env::{Behavior, Rect};
use crate::error::{Error, Result};
use crate::repertoire::Repertoire;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageConfig {
    pub radius: f64,
    pub grid_resolution: usize,
}

impl CoverageConfig {
    pub const DEFAULT_RESOLUTION: usize = 1000;

    pub fn new(radius: f64) -> Self {
        CoverageConfig {
            radius,
            grid_resolution: Self::DEFAULT_RESOLUTION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Config("coverage radius must be positive".into()));
        }
        if self.grid_resolution < 64 {
            return Err(Error::Config("grid_resolution must be at least 64".into()));
        }
        Ok(())
    }
}

/// Fraction of grid cells in `bounds` whose centre lies within `radius` of
/// at least one of `points`.
pub fn coverage_of<'a>(
    points: impl IntoIterator<Item = &'a Behavior>,
    bounds: &Rect,
    cfg: &CoverageConfig,
) -> f64 {
    let res = cfg.grid_resolution;
    let (w, h) = (bounds.width() / res as f64, bounds.height() / res as f64);
    let r = cfg.radius;
    let r2 = r * r;
    let centre = |min: f64, step: f64, i: usize| min + (i as f64 + 0.5) * step;
    // first and last cell whose centre could lie in [lo, hi]
    let span = |lo: f64, hi: f64, min: f64, step: f64| -> Option<(usize, usize)> {
        let a = ((lo - min) / step - 0.5).floor() - 1.0;
        let b = ((hi - min) / step - 0.5).ceil() + 1.0;
        if b < 0.0 || a > (res - 1) as f64 {
            return None;
        }
        Some((a.max(0.0) as usize, (b as usize).min(res - 1)))
    };

    let mut covered = vec![false; res * res];
    for p in points {
        let Some((j0, j1)) = span(p.y() - r, p.y() + r, bounds.min[1], h) else {
            continue;
        };
        for j in j0..=j1 {
            let dy = centre(bounds.min[1], h, j) - p.y();
            let rest = r2 - dy * dy;
            if rest < 0.0 {
                continue;
            }
            let half = rest.sqrt();
            let Some((i0, i1)) = span(p.x() - half, p.x() + half, bounds.min[0], w) else {
                continue;
            };
            let row = &mut covered[j * res..(j + 1) * res];
            for (i, cell) in row.iter_mut().enumerate().take(i1 + 1).skip(i0) {
                let dx = centre(bounds.min[0], w, i) - p.x();
                if dx * dx + dy * dy <= r2 {
                    *cell = true;
                }
            }
        }
    }
    covered.iter().filter(|&&c| c).count() as f64 / (res * res) as f64
}

/// Coverage of a repertoire's behaviors inside `bounds`.
pub fn coverage(rep: &Repertoire, bounds: &Rect, cfg: &CoverageConfig) -> f64 {
    coverage_of(rep.iter().map(|s| &s.behavior), bounds, cfg)
}

/// Mean quality of the stored skills.
pub fn avg_quality(rep: &Repertoire) -> Result<f64> {
    if rep.is_empty() {
        return Err(Error::EmptyRepertoire);
    }
    Ok(rep.iter().map(|s| s.quality).sum::<f64>() / rep.len() as f64)
}
