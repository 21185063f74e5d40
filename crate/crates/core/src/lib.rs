//! Subspace reconstruction of multi-contrast inversion-recovery MRI with a
//! learned multi-scale energy prior.

pub mod energy;
pub mod error;
mod fft;
pub mod forward;
pub mod harness;
pub mod io;
pub mod quant;
pub mod seqsim;
pub mod solver;

pub use error::{Error, Result};
