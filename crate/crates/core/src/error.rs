use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension count {0}")]
    InvalidDimension(usize),

    #[error("step {step} out of range 1..={max}")]
    StepOutOfRange { step: usize, max: usize },

    #[error("stage {stage} out of range {min}..={max}")]
    StageOutOfRange { stage: usize, min: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid transition parameters: classes={classes}, branching={branching}")]
    InvalidTransitions { classes: usize, branching: usize },

    #[error("model assigns zero mass to the observed branch (class {0})")]
    ZeroMass(u32),

    #[error("conditional row {row} is not normalized (sum {sum})")]
    Unnormalized { row: usize, sum: f64 },

    #[error("negative loss component {value} at index {index}")]
    NegativeComponent { index: usize, value: f64 },

    #[error("budget {budget} infeasible for {dims} steps")]
    InfeasibleBudget { budget: usize, dims: usize },

    #[error("problem too large for exhaustive oracle: {0}")]
    TooLarge(String),

    #[error("non-finite loss in batch element {0}")]
    NonFiniteLoss(usize),

    #[error("non-finite parameters after optimizer step")]
    NonFiniteParams,

    #[error("symbol {symbol} has zero frequency")]
    ZeroFrequency { symbol: usize },

    #[error("cannot quantize {classes} symbols at {precision} bits")]
    Precision { classes: usize, precision: u32 },

    #[error("corrupt stream: {0}")]
    Corrupt(String),

    #[error("model hash mismatch: file {file:016x}, model {model:016x}")]
    ModelMismatch { file: u64, model: u64 },

    #[error("invalid format: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteLoss(_) | Error::NonFiniteParams | Error::Unnormalized { .. } => 3,
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}
