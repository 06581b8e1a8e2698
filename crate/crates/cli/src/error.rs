use thiserror::Error;
use wayfinder_annotate::AnnotateError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact from stage `{stage}`: {path} (run `wayfinder {stage}` first)")]
    MissingArtifact { stage: &'static str, path: String },
    #[error(transparent)]
    Core(#[from] wayfinder_core::Error),
    #[error(transparent)]
    Service(#[from] AnnotateError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn missing(stage: &'static str, path: impl AsRef<std::path::Path>) -> Self {
        CliError::MissingArtifact {
            stage,
            path: path.as_ref().display().to_string(),
        }
    }

    /// Short machine-readable category.
    pub fn category(&self) -> &'static str {
        use wayfinder_core::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Core(E::Corpus(_) | E::Textprep(_) | E::Synth(_)) => "data",
            CliError::Core(E::Io { .. }) | CliError::Io { .. } => "io",
            CliError::Core(_) => "pipeline",
            CliError::Service(_) => "service",
        }
    }

    /// Process exit status; 0 is success and clap uses 2 for usage errors.
    pub fn exit_code(&self) -> u8 {
        match self.category() {
            "config" => 3,
            "missing_artifact" => 4,
            "data" => 5,
            "pipeline" => 6,
            "service" => 7,
            "io" => 8,
            _ => 1,
        }
    }
}

macro_rules! from_module_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

from_module_error!(
    wayfinder_core::corpus::CorpusError,
    wayfinder_core::textprep::TextprepError,
    wayfinder_core::features::FeatureError,
    wayfinder_core::models::ModelError,
    wayfinder_core::eval::EvalError,
    wayfinder_core::curve::CurveError,
    wayfinder_core::discover::DiscoverError,
    wayfinder_core::synth::SynthError
);
