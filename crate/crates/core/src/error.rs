use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: axis set is empty")]
    EmptyAxes { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(alloc::vec::Vec<usize>),
    #[error("non-finite gradient in parameter `{0}`; run diverged")]
    NonFiniteGradient(String),
    #[error("index {index:?} outside bounds {bounds:?}")]
    IndexOutOfBounds {
        index: alloc::vec::Vec<usize>,
        bounds: alloc::vec::Vec<usize>,
    },
    #[error("unknown semantic class id {0}")]
    UnknownClass(u8),
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("instruction has {len} tokens, limit is {max}")]
    InstructionTooLong { len: usize, max: usize },
    #[error("{what} = {value} outside valid range {range}")]
    OutOfRange {
        what: &'static str,
        value: i64,
        range: String,
    },
    #[error("pose ({x:.3}, {y:.3}) is not in free space")]
    PoseNotFree { x: f64, y: f64 },
    #[error("world config too small: {0}")]
    WorldTooSmall(String),
    #[error("viewpoints {from} and {to} are disconnected")]
    Disconnected { from: usize, to: usize },
    #[error("unknown viewpoint id {0}")]
    UnknownViewpoint(usize),
    #[error("episode sampling failed after {0} attempts")]
    EpisodeSampling(usize),
    #[error("degenerate observation update: remaining mass {0:e}")]
    DegenerateUpdate(f64),
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("target viewpoint {0} is not among the candidates")]
    TargetNotCandidate(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
