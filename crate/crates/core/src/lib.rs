//! Sentiment analysis for code-mixed (Hinglish / Spanglish) tweets with a
//! from-scratch miniature BERT.
//!
//! Pipeline: [`preprocess`] raw text, read tagged tweets with [`corpus`],
//! build a TF-IDF pruned [`vocab`], pretrain the [`model`] with masked-token
//! prediction and fine-tune it on sentiment plus per-token language id with
//! [`trainer`], then score it with [`metrics`]. All math runs on the
//! [`tensor`] autodiff graph in `f64`.

pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod tensor;
pub mod trainer;
pub mod vocab;

pub use corpus::{LangTag, Sentiment, SyntheticSpec, TweetRecord};
pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, EvalReport};
pub use model::{ModelConfig, ModelWeights, ParamGroup};
pub use preprocess::{EmojiTable, FilterPolicy, Preprocessor};
pub use tensor::{Graph, Tensor, Var, IGNORE_INDEX};
pub use trainer::{AdamState, TrainConfig, TrainOutcome};
pub use vocab::Vocabulary;
