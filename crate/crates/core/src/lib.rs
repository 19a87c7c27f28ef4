//! Tools for building and evaluating NER models on historical OCR corpora.
//!
//! The pipeline covers corpus filtering and statistics, wordpiece vocabulary
//! training and diagnostics, masked-LM instance generation, NER dataset
//! parsing, strict and fuzzy entity scoring, attribute-aided evaluation, a
//! hashed linear tagger and a fine-tuning harness around it.

pub mod attr;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod io;
pub mod mlm;
pub mod ner;
pub mod scorer;
pub mod tagger;
pub mod wordpiece;

pub use attr::{AttributeKind, BucketReport};
pub use corpus::{CorpusStats, Document, FilterReport};
pub use error::{Error, Result};
pub use harness::{Grid, RunRecord};
pub use mlm::{MlmConfig, MlmInstance};
pub use ner::{AnnotatedSentence, EntitySpan};
pub use scorer::{EvalReport, Metrics, Regime};
pub use tagger::{TaggerModel, TrainConfig};
pub use wordpiece::WordpieceVocab;
