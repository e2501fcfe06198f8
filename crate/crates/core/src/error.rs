use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by `{op}` at node {node}")]
    NonFinite { op: &'static str, node: usize },
    #[error("backward already ran on this graph; run the forward pass again")]
    BackwardTwice,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate reference (zero variance)")]
    DegenerateReference,
    #[error("degenerate source (zero power)")]
    DegenerateSource,
    #[error("input length {len} is not a multiple of the hop {hop}; pad to multiple of hop first")]
    NotHopAligned { len: usize, hop: usize },
    #[error("codebooks are not initialized")]
    UninitializedCodebooks,
    #[error("{frames} frames exceed max_frames {max}; chunked evaluation is not supported")]
    TooManyFrames { frames: usize, max: usize },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {got:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("count mismatch: {estimates} estimates vs {references} references")]
    CountMismatch { estimates: usize, references: usize },
    #[error("empty baseline")]
    EmptyBaseline,
    #[error("unknown layer kind `{0}`")]
    UnknownLayer(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}
