use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("PLY schema error: missing required vertex properties: {}", .missing.join(", "))]
    Schema { missing: Vec<String> },

    #[error("parse error at element {index}: {message}")]
    Parse { index: usize, message: String },

    #[error(
        "projection produced a non-finite value at direction ({:.6}, {:.6}, {:.6})",
        .direction[0], .direction[1], .direction[2]
    )]
    Projection { direction: [f64; 3] },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),

    #[error("SH order mismatch: bundle has order {bundle}, light has order {light}")]
    OrderMismatch { bundle: u32, light: u32 },

    #[error("image error: {0}")]
    Image(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// True for errors caused by bad user input rather than I/O failures.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io(_) => false,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => true,
        }
    }

    /// Wraps an error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }
}
