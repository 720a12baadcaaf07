//! Classical simulation toolkit for contextual recurrent networks.

pub mod autodiff;
pub mod cells;
pub mod error;
pub mod gaussian;
pub mod gkp;
pub mod linalg;
pub mod pauli;
pub mod scalar;
pub mod separation;
pub mod seq2seq;
pub mod tableau;
pub mod taskgen;

pub use cells::{Cell, CellKind};
pub use error::{Error, Result};
pub use pauli::{MagicSquare, PauliWord};
pub use scalar::{Backend, Coeff, Rational, Scalar, Unit, UnitSystem};
pub use tableau::{MeasurementOutcome, StabilizerTableau};
