//! tokmix infers the category composition (languages, code, domains) of a
//! BPE tokenizer's training data from its ordered merge list.
//!
//! The pipeline: sample corpora per candidate category
//! ([`corpus`]), split them into merge-bounded words ([`pretokenize`]),
//! replay the target merge list over each category while recording
//! delta-compressed pair counts ([`timeline`]), then solve a lazily
//! generated linear program whose constraints say "the merged pair was the
//! most frequent one at its step" ([`inference`]). [`bpe`] trains and
//! applies merge lists, [`merge_io`] parses published tokenizer formats and
//! normalizes them, [`baselines`] and [`harness`] hold the reference
//! estimators and the controlled-experiment machinery.

pub mod baselines;
pub mod bpe;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod inference;
pub mod merge_io;
pub mod pretokenize;
pub mod reference;
pub mod timeline;

pub use error::{Error, Result};
