//! Entry separation for OCR'd directory pages: layout-aware token streams,
//! subword tokenization, token classification and exact-match evaluation.

pub mod corpus;
pub mod error;
pub mod experiment;
pub mod labeling;
pub mod metrics;
pub mod model;
pub mod stream;
pub mod synth;
pub mod tokenizer;

pub use error::{Error, Result};

pub use corpus::{BBox, Corpus, EntitySpan, EntryAnnotation, LineRecord, PageId};
pub use experiment::{DocPrediction, ExperimentResult, ExperimentSettings};
pub use labeling::{Label, LabelScheme, LabeledStream, Mark, Tag};
pub use metrics::{ClassReport, EvalReport, SummaryRow};
pub use model::{Checkpoint, ModelConfig, TrainHyper};
pub use stream::{BoundaryPolicy, ExperimentConfig, LeftMode, RightMode, StreamToken, TokenStream};
pub use synth::SynthParams;
pub use tokenizer::{EncodedStream, SubwordVocab};
