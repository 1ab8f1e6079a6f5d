use thiserror::Error;

/// Crate-wide error type. Each variant maps to a stable machine-parsable
/// code used by the CLI (`error[<code>]: message`).
#[derive(Debug, Error)]
pub enum SluError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("infeasible CTC label: {0}")]
    InfeasibleLabel(String),

    #[error("unknown symbol {0:?} not in training alphabet")]
    UnknownSymbol(char),

    #[error("lexicon miss: word {0:?} has no pronunciation")]
    LexiconMiss(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dependency error: {0}")]
    Dependency(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl SluError {
    /// Stable error code for the CLI's single-line error prefix.
    pub fn code(&self) -> &'static str {
        match self {
            SluError::Shape { .. } => "shape",
            SluError::Contract(_) => "contract",
            SluError::InfeasibleLabel(_) => "infeasible-label",
            SluError::UnknownSymbol(_) => "unknown-symbol",
            SluError::LexiconMiss(_) => "lexicon-miss",
            SluError::Config(_) => "config",
            SluError::Data(_) => "data",
            SluError::Dependency(_) => "dependency",
            SluError::Format(_) => "format",
            SluError::Lookup(_) => "lookup",
            SluError::Generation(_) => "generation",
            SluError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, SluError>;
