//! Weak-supervision pipeline for classifying social-media posts into
//! solidarity (`S`), anti-solidarity (`A`) and other (`O`).
//!
//! The crate is organised along the data flow of the pipeline:
//!
//! - [`corpus`]: JSONL ingestion, hashtag extraction, co-occurrence expansion.
//! - [`annotation`]: fine/coarse label schemes, expert gold standard, crowd aggregation.
//! - [`metrics`]: Cohen's/Fleiss' kappa, confusion matrices, macro-F1.
//! - [`augment`]: minority oversampling and back-translation.
//! - [`model`]: hashed-feature logistic-regression baseline and external model endpoints.
//! - [`weak_supervision`]: top-k pool selection, agreement-based auto-labeling, ensembling.
//! - [`trends`]: daily label counts, S/A ratio, weekly averages, Spearman correlation.
//! - [`synth`]: deterministic synthetic corpora used by fixtures and tests.

pub mod annotation;
pub mod augment;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod trends;
pub mod weak_supervision;

pub use annotation::{LabelCoarse, LabelFine};
pub use augment::{LabeledDataset, LabeledExample, Provenance};
pub use corpus::{Corpus, Lang, Tweet};
pub use model::{BaselineModel, ClassProbs, ClassifierHandle, FeatureMode};

/// Version of this library, recorded in run reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
