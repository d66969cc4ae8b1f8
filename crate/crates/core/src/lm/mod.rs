//! The frozen encoder-decoder surrogate summarizer and its training data.

pub mod checkpoint;
pub mod corpus;
pub mod model;
pub mod pretrain;
pub mod synthetic;
pub mod vocab;

pub use checkpoint::{load_model, save_model};
pub use corpus::CorpusRecord;
pub use model::{Encoded, FrozenLm, ModelConfig, WeightDigest};
pub use pretrain::{pretrain, PretrainConfig, PretrainReport};
pub use vocab::{TokenSequence, Vocabulary};
