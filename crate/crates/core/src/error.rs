use egat_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("inkml: {msg} (byte offset {offset})")]
    InkmlSyntax { offset: u64, msg: String },
    #[error("inkml: {0}")]
    Inkml(String),
    #[error("lg line {line}: {msg}")]
    LgLine { line: usize, msg: String },
    #[error("lg: {0}")]
    Lg(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("label: {0}")]
    Label(String),
    #[error("graph: {0}")]
    Graph(String),
    #[error("model: {0}")]
    Model(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
