//! T5 encoder-decoder with optional bottleneck adapters.

pub mod backend;
pub mod config;
pub mod model;

pub use backend::T5Backend;
pub use config::{adapter_width, FeedForward, T5Config};
pub use model::T5Model;
