pub mod asymptotics;
pub mod error;
pub mod fastica;
pub mod metrics;
pub mod montecarlo;
pub mod nonlinearity;
pub mod preprocess;
pub mod quadrature;
pub mod rng;
pub mod rows;
pub mod sources;

pub use error::{Error, Result};
pub use nonlinearity::{Nonlinearity, NonlinearityKind};
pub use preprocess::{standardize, Centering, StandardizedData};
pub use sources::{SourceBatch, SourceSpec};
