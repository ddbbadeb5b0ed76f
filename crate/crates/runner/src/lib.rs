//! Configuration-driven experiment runs over NLU++ and CLINC-150: spec
//! parsing, data loading, protocol execution, manifests and result files.

pub mod backends;
pub mod data;
pub mod error;
pub mod manifest;
pub mod protocols;
pub mod reference;
pub mod results;
pub mod spec;

pub use error::{Result, RunError};
pub use manifest::{Manifest, RunStatus};
pub use protocols::{run, RunOptions, RunOutput};
pub use results::RunResults;
pub use spec::{Protocol, RunSpec};
