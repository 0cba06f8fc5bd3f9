//! Experiment harness around the `mqd` library: JSON experiment specs,
//! multi-seed runs, CSV and SVG output.

pub mod adapt;
pub mod coverage;
pub mod evolve;
pub mod spec;
pub mod svg;

pub use adapt::{cmd_adapt, AdaptInputs};
pub use coverage::{cmd_coverage, CoverageReport};
pub use evolve::cmd_evolve;
pub use spec::{AdaptSpec, ExperimentSpec};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
