//! Transfer learning toolkit for vibration-based structural monitoring.
//!
//! The crate covers the full pipeline from lumped-parameter structural models
//! to cross-structure damage classification:
//!
//! * [`spectral`] — mass/stiffness/damping assembly for spring-mass chains,
//!   undamped and damped modal analysis, and receptance FRF magnitudes.
//! * [`population`] — sampling of heterogeneous structure populations,
//!   damage states, and transfer-task construction.
//! * [`modal`] — modal assurance criterion (MAC), mode pairing, and the
//!   MAC-discrepancy between two modal models.
//! * [`divergence`] — kernel two-sample statistics (MMD, joint MMD) and the
//!   proxy A-distance.
//! * [`adaptation`] — normal-condition alignment, PCA, and the kernelised
//!   transfer-component / balanced distribution adaptation maps.
//! * [`tfc`] — physics-informed feature selection driven by a trade-off
//!   between source-domain classification loss and modal similarity.
//! * [`study`] — the benchmark harness: task execution, metric correlation,
//!   FRF ingestion/windowing, and report serialisation.

pub mod adaptation;
pub mod dataset;
pub mod divergence;
pub mod error;
pub(crate) mod linalg;
pub mod modal;
pub mod population;
pub mod spectral;
pub mod study;
pub mod tfc;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
