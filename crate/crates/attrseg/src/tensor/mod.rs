//! Minimal dense-matrix numerics with reverse-mode autodiff. Everything is
//! `f64`; determinism comes from single-threaded evaluation and seeded
//! initialization, never from tolerance fudging.

pub mod gradcheck;
mod mat;
mod tape;

pub use mat::Mat;
pub use tape::{linear, sigmoid_scalar, Grads, Tape, Var};
