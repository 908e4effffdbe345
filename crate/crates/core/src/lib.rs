//! Hedonic pricing toolkit for generative-art markets.
//!
//! The crate covers the whole modelling chain:
//!
//! - [`ingest`]: transactions, market controls, cycle tables and the modelling frame
//! - [`imgfeat`]: classic image descriptors and PCA reduction of external embeddings
//! - [`select`]: variance/redundancy screening, time-blocked Lasso stability,
//!   random-forest permutation importance and the family-quota gate
//! - [`mixedlm`]: REML fit of the static model with crossed random intercepts
//! - [`dyntvp`]: Bayesian dynamic model with cycle-indexed time-varying coefficients
//! - [`robust`]: Benjamini–Hochberg adjustment and the cycle-block bootstrap
//! - [`synth`]: synthetic generators with known ground truth
//! - [`report`] and [`pipeline`]: artifact tables, Markdown report and the end-to-end run
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the `parallel`
//! feature is enabled and falls back to plain iteration otherwise.

pub mod dyntvp;
pub mod error;
pub mod exec;
pub mod imgfeat;
pub mod ingest;
pub mod linalg;
pub mod mixedlm;
pub mod pipeline;
pub mod report;
pub mod robust;
pub mod select;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
