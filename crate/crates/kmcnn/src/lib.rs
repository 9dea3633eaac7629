//! Literature triage for biomedical curation pipelines.
//!
//! The crate covers the full path from raw inputs to ranked predictions:
//!
//! * [`kg`]: typed concept graphs and random-walk corpus generation, with two
//!   walk strategies: plain neighbor walks and structural-equivalence walks
//!   that jump between nodes whose neighborhoods look alike.
//! * [`embed`]: skip-gram training with negative sampling over walk corpora,
//!   plus readers/writers for the common text and binary vector formats.
//! * [`text`]: document parsing, tokenization, vocabulary construction, and
//!   longest-match concept linking against a phrase lexicon.
//! * [`datasets`]: train/validation/test splitting (random or by publication
//!   date), keyword extraction, and negative-example sampling.
//! * [`nn`]: a small dense-tensor neural network core with finite-difference
//!   gradient checking.
//! * [`model`]: the triage classifier itself: a two-channel 1-D CNN over word
//!   vectors, with an optional third input of knowledge-graph vectors
//!   concatenated per token position.
//! * [`eval`]: precision/recall/F1 and ablation report tables.
//! * [`cli`]: the `kmcnn` command-line front end.
//!
//! [`demo`] generates small self-consistent fixtures (graphs, documents,
//! lexicons, vectors) used by the examples and tests; everything it produces
//! goes through the same file formats as real data.
//!
//! All randomized steps take explicit seeds and are reproducible byte for
//! byte, with one documented exception: multi-threaded skip-gram training
//! trades determinism for throughput and says so in its output.

pub mod cli;
pub mod datasets;
pub mod demo;
pub mod embed;
mod error;
pub mod eval;
pub mod kg;
pub mod model;
pub mod nn;
pub mod text;
mod util;

pub use error::{Error, Result};

pub use embed::EmbeddingMatrix;
pub use kg::KnowledgeGraph;
pub use model::ModelConfig;
pub use text::{Document, Label};
