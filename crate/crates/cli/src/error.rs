use weyl_ring::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 config, 2 domain, 3 convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Core(e) => core_exit_code(e),
        }
    }
}

pub fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::InvalidArgument(_) => 1,
        CoreError::Convergence { .. }
        | CoreError::FitQuality { .. }
        | CoreError::TrackingAmbiguity { .. }
        | CoreError::RefineGrid { .. } => 3,
        _ => 2,
    }
}
