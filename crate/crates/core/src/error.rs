use thiserror::Error;

/// Library-wide error type. Every variant maps to a stable machine-readable
/// category (see [`Error::category`]) used by the CLI exit status and the C ABI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("structural assumption violated: {0}")]
    Assumption(String),

    #[error("infeasible constraint system: {0}")]
    Infeasible(String),

    #[error("privacy threshold infeasible for agent {agent}: delta={delta} >= tr(W_kk)={trace}")]
    InfeasibleThreshold { agent: usize, delta: f64, trace: f64 },

    #[error("ill-conditioned projector system at agent {agent} (condition number {cond:.3e})")]
    Singular { agent: usize, cond: f64 },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("unstable recursion: spectral radius {rho:.6} >= 1")]
    Unstable { rho: f64 },

    #[error("dimension cap exceeded: M={dim} > cap={cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Dimension(_) => "dimension",
            Error::Assumption(_) => "assumption",
            Error::Infeasible(_) | Error::InfeasibleThreshold { .. } => "infeasible",
            Error::Singular { .. } | Error::SingularMatrix(_) => "numerical",
            Error::Unstable { .. } => "unstable",
            Error::DimensionCap { .. } => "dimension_cap",
            Error::Io { .. } => "io",
            Error::Serialization(_) => "serialization",
        }
    }

    /// Process exit status associated with the category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "dimension" => 3,
            "assumption" => 4,
            "infeasible" => 5,
            "numerical" => 6,
            "unstable" => 7,
            "dimension_cap" => 8,
            "io" => 9,
            _ => 10,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
