use std::fmt;
use std::path::PathBuf;

/// A stage input that an earlier command should have produced.
#[derive(Debug)]
pub struct MissingArtifact {
    pub path: PathBuf,
    pub command: &'static str,
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} not found; run `stockformer {}` first",
            self.path.display(),
            self.command
        )
    }
}

impl std::error::Error for MissingArtifact {}

/// Stable machine-readable code for an error chain.
pub fn error_code(err: &anyhow::Error) -> &'static str {
    use stockformer::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<MissingArtifact>().is_some() {
            return "E_MISSING_ARTIFACT";
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Parse { .. } | E::Csv(_) | E::Json(_) => "E_PARSE",
                E::Validation { .. } => "E_VALIDATION",
                E::DateOutOfRange(_) => "E_DATE_RANGE",
                E::Config(_) => "E_CONFIG",
                E::Argument(_) => "E_ARGUMENT",
                E::Shape { .. } => "E_SHAPE",
                E::Domain(_) => "E_DOMAIN",
                E::Alignment(_) => "E_ALIGNMENT",
                E::Compatibility(_) => "E_COMPATIBILITY",
                E::NonFiniteLoss { .. } => "E_NONFINITE_LOSS",
                E::Checkpoint(_) => "E_CHECKPOINT",
                E::Io(_) => "E_IO",
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "E_IO";
        }
    }
    "E_RUNTIME"
}

/// The whole chain on one line.
pub fn one_line(err: &anyhow::Error) -> String {
    format!("{err:#}").replace(['\n', '\r'], " ")
}
