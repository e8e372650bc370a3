//! Soft-label multitask text classification toolkit.
//!
//! Turns raw per-annotator labels into soft/silver training targets and trains
//! a multitask classifier under a combined KL+NLL objective. The pipeline covers
//! tweet preprocessing, annotation aggregation, weighted losses, multitask
//! training, seed ensembling, and macro evaluation, and runs at desk scale on
//! synthetic or user-supplied corpora.

pub mod annotations;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod preprocess;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
