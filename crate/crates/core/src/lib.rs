//! Model-based quality-diversity skill discovery on two 2D tasks.

// `!(x > 0.0)` is how config checks reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod adaptation;
pub mod env;
pub mod error;
pub mod evolution;
pub mod io;
pub mod metrics;
pub mod repertoire;
pub mod rng;
pub mod surrogate;

pub use env::{evaluate, Action, Behavior, EnvConfig, Rect, TaskKind};
pub use error::{Error, Result};
pub use evolution::{run, Algorithm, GenerationStats, RunConfig, RunOutput};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/repertoire.md")]
    mod repertoire {}
    #[doc = include_str!("../../../book/src/evolution.md")]
    mod evolution {}
    #[doc = include_str!("../../../book/src/surrogate.md")]
    mod surrogate {}
    #[doc = include_str!("../../../book/src/adaptation.md")]
    mod adaptation {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
