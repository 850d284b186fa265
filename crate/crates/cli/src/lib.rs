//! Pipeline wiring for the `stockformer` command: configuration, artifact
//! layout and one function per stage.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod synth;

pub use config::RunConfig;
pub use error::{error_code, MissingArtifact};
pub use pipeline::Layout;
