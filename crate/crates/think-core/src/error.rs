use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty {0} after tokenization")]
    EmptyText(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: String,
        actual: String,
    },
    #[error("generator {position} expects {expected} input rows, got {actual}")]
    GeneratorInput {
        position: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("non-finite loss at batch {batch} (epoch {epoch})")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("probe dataset needs at least two labels, found {0}")]
    TooFewLabels(usize),
    #[error("empty training data")]
    EmptyData,
}

impl Error {
    pub(crate) fn shape(
        what: &'static str,
        expected: impl core::fmt::Display,
        actual: impl core::fmt::Display,
    ) -> Self {
        use alloc::string::ToString;
        Error::Shape {
            what,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
