//! Vital-sign extraction from FMCW radar.
//!
//! The crate simulates IF data for a breathing, beating chest, turns it into
//! per-bin phase, picks the bins that carry vital motion, combines them
//! coherently, and fits a parametric respiration and heartbeat template to the
//! result to obtain both rates.

pub mod binselect;
pub mod combine;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod fit;
pub mod pipeline;
pub mod preprocess;
pub mod series;
pub mod sim;
pub mod templates;

pub use error::{Error, Result};
pub use series::DisplacementSeries;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../book/src/phase.md")]
    struct Phase;
    #[doc = include_str!("../../../book/src/selection.md")]
    struct Selection;
    #[doc = include_str!("../../../book/src/combining.md")]
    struct Combining;
    #[doc = include_str!("../../../book/src/templates.md")]
    struct Templates;
    #[doc = include_str!("../../../book/src/fitting.md")]
    struct Fitting;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
