//! Two-layer Kolmogorov-Arnold networks for binary logistic classification,
//! trained by full-batch gradient descent and by differentially private
//! projected gradient descent, with the diagnostics needed to check their
//! optimization and generalization behaviour empirically.

pub mod basis;
pub mod data;
pub mod dpgd;
pub mod error;
pub mod gd;
pub mod harness;
pub mod idx;
pub mod loss;
pub mod model;
pub mod ntk;
pub mod objective;
pub mod params;
pub mod trajectory;

pub use error::{KanError, Result};
