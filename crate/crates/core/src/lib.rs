//! Annotation-informed knockoff variable selection.
//!
//! Individual-level fits ([`annokn`]) and summary-statistics fits
//! ([`annogk`]) share the weighted Lasso solver in [`lasso`], the annotation
//! weight update in [`weights`] and the knockoff filter in [`filter`].
//! [`simulation`] reproduces AR(1) power/FDR experiments.

pub mod annogk;
pub mod annokn;
pub mod data;
pub mod error;
pub mod filter;
pub mod knockoff;
pub mod lasso;
pub mod linalg;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod simulation;
pub mod weights;

pub use error::{Error, Result};
pub use par::Execution;
pub use pipeline::{GridSpec, PipelineConfig, PipelineResult};
