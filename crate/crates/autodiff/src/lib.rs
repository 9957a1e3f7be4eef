//! Minimal tape-based reverse-mode automatic differentiation.
//!
//! Provides exactly the tensor operations a small residual CNN with
//! squeeze-and-excitation blocks needs, a finite-difference checker, and
//! Adam/SGD optimizers. Everything is generic over [`Real`] so the same
//! code runs in `f32` for training and `f64` for gradient verification.
//!
//! ```
//! use sslse_autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::from_f64([3], &[1.0, -2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

mod check;
mod conv;
mod error;
mod optim;
mod params;
mod real;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_many, relative_error, GradCheckReport, DEFAULT_EPS};
pub use conv::Conv2dSpec;
pub use error::{AutodiffError, Result};
pub use optim::{adam_update, Adam, AdamConfig, Sgd};
pub use params::{Bound, Params};
pub use real::Real;
pub use tape::{BackwardRule, Tape, Var, MIN_NORM};
pub use tensor::Tensor;
