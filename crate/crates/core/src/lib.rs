//! Adversarial training of Gaussian mixture models with a quadratic-plus-softmax
//! discriminator, along with the EM baseline, optimal-transport utilities and
//! the numerical checks used to validate the method.

pub mod checks;
pub mod datagen;
pub mod em;
pub mod experiment;
pub mod error;
pub mod gausscore;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod transport;

pub use error::{Error, Result};
pub use gausscore::{Matrix, SeededRng, Stream, SymMatrix, Vector};
