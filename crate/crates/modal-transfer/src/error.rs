//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model assembly, numerics, data handling and the study
/// harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A structural description is unusable (non-positive mass or stiffness,
    /// inconsistent element counts, out-of-range attachment).
    #[error("invalid structure: {0}")]
    InvalidSpec(String),

    /// A damped mode degenerated into a real (overdamped or defective)
    /// eigenvalue pair, so no oscillatory frequency exists for it.
    #[error("mode {mode} is overdamped or defective; no damped natural frequency")]
    DegenerateDamping { mode: usize },

    /// Two modal models do not share the same sensor (row) dimension.
    #[error("incompatible sensor dimensions: {left} vs {right}")]
    IncompatibleSensors { left: usize, right: usize },

    /// MAC is undefined for a zero-norm mode shape.
    #[error("MAC undefined: mode shape {side} has zero norm")]
    UndefinedMac { side: &'static str },

    /// A mode pairing is structurally invalid (length mismatch, index out of
    /// range, or empty).
    #[error("invalid mode pairing: {0}")]
    InvalidPairing(String),

    /// The kernel length scale degenerated (all pooled points identical).
    #[error("degenerate kernel scale: all pairwise distances are zero")]
    DegenerateScale,

    /// A feature has zero variance over the rows used to fit a transform.
    #[error("feature {index} has zero variance over the normal-condition rows")]
    DegenerateFeature { index: usize },

    /// A dataset is missing rows needed by an operation.
    #[error("missing data: {0}")]
    MissingData(String),

    /// A class label is absent where the operation requires it.
    #[error("class {class} is missing from {context}")]
    MissingClass { class: usize, context: String },

    /// Requested latent dimension exceeds what the data can support.
    #[error("requested dimension {requested} exceeds available rank {available}")]
    RankError { requested: usize, available: usize },

    /// Every candidate feature subset collided onto duplicate target modes.
    #[error("no feasible feature subset: all {candidates} candidates produced duplicate target pairings")]
    NoFeasibleSubset { candidates: usize },

    /// A configuration value is out of range or internally inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A damage description cannot be applied to the structure.
    #[error("invalid damage: {0}")]
    InvalidDamage(String),

    /// Rejection sampling failed to produce an admissible draw.
    #[error("redraw limit exceeded for {quantity} after {attempts} attempts")]
    RedrawLimit { quantity: String, attempts: usize },

    /// Numerical routine failed to converge or produced non-finite output.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Arrays passed to an operation do not agree in shape.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A file violated the documented schema. Line is 1-based where known.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// An inner failure annotated with where it happened (structure, class,
    /// sample, file, ...).
    #[error("{location}: {source}")]
    Context {
        location: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Wraps the error with a location annotation.
    pub fn with_context(self, location: impl Into<String>) -> Self {
        Error::Context {
            location: location.into(),
            source: Box::new(self),
        }
    }
}
