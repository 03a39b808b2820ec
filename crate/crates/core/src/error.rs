use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed dataset JSON at byte {offset}: {message}")]
    DatasetParse { offset: usize, message: String },

    #[error("question has {question_len} tokens but at most {limit} fit in a sequence of {max_len}")]
    QuestionTooLong {
        question_len: usize,
        limit: usize,
        max_len: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("index {index} out of range for length {len} ({context})")]
    OutOfRange {
        context: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid encoder output: {0}")]
    InvalidEncoder(String),

    #[error("no valid span candidate")]
    NoValidSpan,

    #[error("expression has no signed number")]
    EmptyExpression,

    #[error("annotation is empty")]
    EmptyAnnotation,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("weight store {path}: {message}")]
    Store { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Error {
    Error::Shape {
        context: context.into(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
