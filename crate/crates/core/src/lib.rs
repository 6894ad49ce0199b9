//! Clinical named-entity recognition with pretrained contextual embeddings.
//!
//! The crate covers the whole pipeline: corpus ingestion and BIO handling
//! ([`corpus`]), a small numeric substrate ([`nn`]), a character-level
//! bidirectional language model ([`char_lm`]), a word-level bidirectional
//! language model with a character-CNN token encoder ([`word_lm`]), static
//! vectors and embedding stacks ([`embeddings`]), a BiLSTM-CRF tagger
//! ([`tagger`]) and exact-match span evaluation ([`eval`]). Models persist
//! through the shared binary [`container`] format.

pub mod char_lm;
pub mod container;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod nn;
pub mod tagger;
pub mod word_lm;

pub use char_lm::{CharLmConfig, CharLmModel};
pub use container::Checkpoint;
pub use corpus::{CharVocabulary, LabeledSentence, Sentence, TagSet};
pub use embeddings::{Embedder, EmbedderStack, StaticLexicon};
pub use error::{Error, Result};
pub use eval::{EvalReport, Span};
pub use nn::{DenseArray, SeededRng, TrainLog};
pub use tagger::{TaggerModel, TaggerTrainConfig};
pub use word_lm::{LayerMixing, WordLmConfig, WordLmModel};
