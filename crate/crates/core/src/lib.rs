//! Desk-scale adversarial training laboratory.
//!
//! The crate is organised around a small dense-`f64` reverse-mode autodiff
//! engine ([`tape`]) on top of which everything else is built:
//!
//! - [`net`] — feed-forward networks, parameter init and serialization
//! - [`simplex`] — probability-simplex math: softmax, entropy, Bregman
//!   divergences and their KL / squared-error specializations
//! - [`attack`] — l-infinity PGD adversary generation with interpolation
//!   sampling, plus robust-accuracy evaluation
//! - [`objective`] — the outer-minimization loss family (PGD-AT, TRADES,
//!   FAIT, and their maximum-entropy-regularized variants)
//! - [`theory`] — brute-force numerical verification of the divergence
//!   inequalities the loss family relies on
//! - [`data`] — synthetic binary datasets and an IDX-format loader
//! - [`train`] — SGD training loop with warmup/milestone LR schedule and
//!   per-epoch metrics capture

pub mod attack;
pub mod data;
pub mod error;
pub mod net;
pub mod objective;
pub mod rng;
pub mod simplex;
pub mod tape;
pub mod tensor;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
