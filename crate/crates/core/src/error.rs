use thiserror::Error;

/// Errors produced by the screening pipeline.
#[derive(Debug, Error)]
pub enum PcgError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("unsupported sample rate {0} Hz (expected 4000 Hz)")]
    UnsupportedSampleRate(u32),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate signal: segment is identically zero")]
    DegenerateSignal,

    #[error("degenerate batch: training-mode batch needs at least 2 samples, got {0}")]
    DegenerateBatch(usize),

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("too few patients: {0}")]
    TooFewPatients(String),

    #[error("empty evaluation: no predictions to score")]
    EmptyEvaluation,

    #[error("missing metadata for patient {0}")]
    MissingMetadata(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PcgError>;
