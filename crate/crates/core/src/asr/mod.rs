//! Character CTC recognizer, n-gram language model and scoring.

pub mod ctc;
pub mod decode;
pub mod lm;
pub mod model;
pub mod score;
pub mod train;
pub mod vocab;

pub use ctc::{ctc_loss, ctc_op};
pub use decode::{beam_decode, greedy_decode, BeamConfig, Transcript};
pub use lm::{LanguageModel, NgramLm};
pub use model::{AcousticModel, AsrConfig};
pub use score::{confidence, corpus_wer, wer, ConfidenceWeights};
pub use train::{greedy_wer, train_asr, AsrExample, AsrTrainConfig};
pub use vocab::{Vocabulary, BLANK};
