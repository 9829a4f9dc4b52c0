//! Numerical laboratory for periodic Lugiato–Lefever waves under
//! co-periodic plus localized ("tooth") perturbations.

pub mod bloch;
pub mod config;
pub mod cutoff;
pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod model;
pub mod modulation;
pub mod pipeline;
pub mod plot;
pub mod spectral;
pub mod steady;

pub use error::{Error, Result};
pub use grid::{PeriodicGrid, RealPairField, ScalarField};
pub use model::WaveParameters;
pub use spectral::NormKind;
pub use steady::WaveProfile;
