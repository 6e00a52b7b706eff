//! Analysis toolkit for finite quasimetric measure spaces.
//!
//! A space here is a finite set of atoms with a symmetric positive distance
//! table and strictly positive masses. The crate measures the structure
//! constants of such spaces (quasitriangle and doubling constants, Ahlfors
//! regularity, annulus nonemptiness), builds metrizations of snowflaked
//! distances, constructs randomized dyadic cube systems, classifies weights
//! (Muckenhoupt, reverse Holder, bounded mean oscillation), runs dyadic
//! Calderon-Zygmund decompositions and covering arguments, and analyzes
//! quasisymmetric point bijections and their generalized Jacobians.
//!
//! Every "for all radii" statement is discharged over a finite critical set
//! of radii; ball membership is piecewise constant in the radius, so these
//! scans are exact rather than sampled. Randomized constructions take
//! explicit seeds and are bit-for-bit reproducible.

pub mod czd;
pub mod dyadic;
pub mod metrization;
pub mod num;
pub mod quasisym;
pub mod report;
pub mod space;
pub mod weights;

/// Crate-wide error type.
///
/// `BoundViolation` is reserved for checked inequalities that fail beyond
/// tolerance: it means a measured quantity escaped a bound that the theory
/// says must hold, not a bad input.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("{op}: {detail}")]
    Precondition { op: &'static str, detail: String },
    #[error("{step}: measured {measured} exceeds bound {bound}")]
    BoundViolation {
        step: String,
        measured: f64,
        bound: f64,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn pre(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Precondition {
            op,
            detail: detail.into(),
        }
    }
}
