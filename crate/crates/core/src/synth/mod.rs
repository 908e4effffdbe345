//! Synthetic generators with known ground truth.
//!
//! Each generator is a pure function of its spec (seed included) and returns
//! a truth record next to the generated data. None of them reuse the
//! estimators' likelihood or feature code.

mod corpus;
mod dynamic;
mod images;
mod panel;

pub use corpus::{corpus_traits, write_corpus, CorpusSpec, NftTraits, CORPUS_FILES};
pub use dynamic::{gen_dynamic_cells, planted_path, DynamicTruth, SyntheticDynamicSpec};
pub use images::{
    gen_images, read_truth, write_images, ImageFixture, ImageSpec, TruthKind, TruthValue, DOMINANT_BAND,
    FIXTURE_SIZE,
};
pub use panel::{gen_static_panel, PanelTruth, SyntheticPanelSpec};
