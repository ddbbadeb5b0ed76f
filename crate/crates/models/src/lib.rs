//! Model backends for instruction-style dialogue NLU: a T5 seq2seq model
//! (full or adapter fine-tuning), transformer sentence encoders, the CL-SE
//! classifier and a gold-answer oracle for tests.

pub mod backend;
pub mod clse;
pub mod encoder;
pub mod error;
pub mod layers;
pub mod oracle;
pub mod params;
pub mod position;
pub mod registry;
pub mod t5;
pub mod tokenizer;

pub use backend::{AdapterConfig, BackendKind, Seq2SeqBackend, TrainConfig, TrainReport, Trained};
pub use error::{ModelError, Result};
