use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward called on a value that does not depend on any parameter")]
    NoGraph,

    #[error("loss function is not deterministic: two evaluations gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("token id {token} out of range for vocabulary of size {vocab_size}")]
    Vocabulary { token: u32, vocab_size: usize },

    #[error("patching error: {0}")]
    Patching(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("aligned inputs differ in size: {0}")]
    Alignment(String),

    #[error("anchor {anchor} has no cross-class terms (batch labels: {labels:?})")]
    EmptyDenominator { anchor: usize, labels: Vec<usize> },

    #[error("parameter `{0}` has no gradient for this optimizer step")]
    UninitializedGradient(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("corpus spec error: {0}")]
    Spec(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(
        "non-finite {loss_name} loss at step {step} (lr {lr:e}, batch hash {batch_hash:016x})"
    )]
    NumericalAbort {
        step: usize,
        loss_name: &'static str,
        lr: f64,
        batch_hash: u64,
    },
}
