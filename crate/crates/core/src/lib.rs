//! Spectral theory of quasi-periodic CMV matrices: operators, Szegő cocycles,
//! density of states, KAM almost reducibility and spectral-measure bounds.

pub mod error;
pub mod mat2;
pub mod cmv;
pub mod model;
pub mod cocycle;
pub mod dos;
pub mod measures;
pub mod gordon;
pub mod kam;

pub use error::{Error, Result};
pub use mat2::{Mat2, Su11Matrix, C64};
pub use model::{Frequency, TrigPolynomial, VerblunskyModel};
