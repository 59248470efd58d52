//! Multiscale sequential adaptive functional estimation (MSAFE) for
//! historical functional linear models.
//!
//! The crate discretizes the integral operator of the model with a
//! multiscale piecewise-polynomial basis in the lag variable and cubic
//! B-splines in position, assembles sparse design blocks with level
//! truncation and magnitude sparsification, selects sensors with a
//! multistage adaptive group LASSO and estimates the kernels of the selected
//! sensors by penalized ridge regression.

pub mod assembly;
pub mod basis;
pub mod bench;
pub mod cv;
pub mod error;
pub mod io;
pub mod lasso;
pub mod linalg;
pub mod penalty;
pub mod pipeline;
pub mod poly;
pub mod quadrature;
pub mod signal;
pub mod sim;
pub mod smoother;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};
