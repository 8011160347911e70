//! Distance-based group segmentation for categorical survey data.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the pipeline and CLI use.

pub mod clustering;
pub mod distance;
pub mod diversity;
pub mod error;
pub mod factor;
pub mod inference;
pub mod ingest;
pub mod linalg;
pub mod npstats;
pub mod ordination;
pub mod permanova;
pub mod report;
pub mod scalar;

pub use error::{Error, ErrorKind, Result};
pub use factor::Factor;
pub use scalar::Scalar;

pub type DistanceMatrix = distance::DistanceMatrix<f64>;
pub type DistanceMatrixF32 = distance::DistanceMatrix<f32>;
pub type PermanovaTable = permanova::PermanovaTable<f64>;
pub type PermanovaTableF32 = permanova::PermanovaTable<f32>;
pub type Ordination = ordination::Ordination<f64>;
pub type OrdinationF32 = ordination::Ordination<f32>;
pub type Dendrogram = clustering::Dendrogram<f64>;
pub type DiversityFrame = diversity::DiversityFrame<f64>;
pub type RankTestResult = npstats::RankTestResult<f64>;
