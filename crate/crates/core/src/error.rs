use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point outside the ball: kappa*|x|^2 = {0} (must be < 1)")]
    OutsideBall(f64),

    #[error("curvature mismatch: {0} vs {1}")]
    CurvatureMismatch(f64, f64),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("invalid curvature {0}: expected c <= 0")]
    InvalidCurvature(f64),

    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar output, got {0}x{1}")]
    NonScalarOutput(usize, usize),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("degenerate hyperplane normal: |a_k| = {0:e}")]
    DegenerateNormal(f64),

    #[error("input of {len} samples is shorter than one window ({window})")]
    TooShort { len: usize, window: usize },

    #[error("reference signal is silent")]
    SilentReference,

    #[error("scene has no active source")]
    EmptyScene,

    #[error("infeasible placement: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("checkpoint is Euclidean (c = 0); embedding norms need a hyperbolic model")]
    EuclideanCheckpoint,

    #[error("missing audio file {0}")]
    MissingAudio(PathBuf),

    #[error("sample rate mismatch in {path}: expected {expected} Hz, found {found} Hz")]
    SampleRate {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("unsupported WAV format in {path}: {detail}")]
    WavFormat { path: PathBuf, detail: String },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
