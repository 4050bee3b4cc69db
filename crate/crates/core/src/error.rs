use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("shape {shape:?} holds {expected} elements but {actual} values were supplied")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("cannot contract axis {axis_a} of a (dim {dim_a}) with axis {axis_b} of b (dim {dim_b})")]
    AxisDimMismatch {
        axis_a: usize,
        dim_a: usize,
        axis_b: usize,
        dim_b: usize,
    },

    #[error("axis {axis} out of range for a rank-{rank} tensor")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("axis {axis} listed more than once")]
    DuplicateAxis { axis: usize },

    #[error("matrix is not Hermitian: max |M - M^dag| = {deviation:e}")]
    NotHermitian { deviation: f64 },

    #[error("trace has imaginary part {imag:e}")]
    ComplexTrace { imag: f64 },

    #[error("state has trace {trace}; normalize it first (divide by its trace) before taking a Renyi entropy")]
    NotNormalized { trace: f64 },

    #[error("{what}: requested {requested} exceeds the cap of {cap}; use the transfer-matrix path or shrink the system")]
    CapExceeded {
        what: &'static str,
        requested: usize,
        cap: usize,
    },

    #[error("{0} is singular for these parameters")]
    Singular(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("spectrum violates the non-degenerate gap condition after {attempts} attempts")]
    GapConditionFailed { attempts: usize },
}

impl LabError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LabError::InvalidArgument(msg.into())
    }
}
