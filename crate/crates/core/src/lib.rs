//! Discrete reversible Langevin reference kernels, the static Schrödinger
//! problem, and numerical checks of entropic transport-entropy inequalities
//! together with their dual, contraction and concentration forms.

pub mod concentration;
pub mod error;
pub mod inequalities;
pub mod logspace;
pub mod matrix;
pub mod measures;
pub mod oracle;
pub mod reference;
pub mod sampling;
pub mod schrodinger;
pub mod semigroup;
pub mod transport;

pub use error::{Error, Result};

pub use matrix::Matrix;
pub use measures::{DiscreteMeasure, GridSpace, ScalarField};
pub use reference::{Generator, PotentialSpec, ReferenceKernel};

pub use concentration::BorelSubset;
pub use inequalities::{EtiParams, InequalityReport};
pub use schrodinger::{CouplingSolution, IpfpOptions};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
