//! Pricing and robust deep hedging for generalized affine diffusions
//! `dX = (b0 + b1 X) dt + (a0 + a1 X^+)^γ dW` whose parameters are only
//! known to lie in a box.

pub mod error;
pub mod estimation;
pub mod harness;
pub mod hedge;
pub mod payoffs;
pub mod pde;
pub mod process;

pub use error::{Error, ErrorKind, Result};
