//! Core of a federated content-based image retrieval engine.
//!
//! Everything here is pure computation over `alloc` collections:
//!
//! - [`numerics`]: tensors, convolution operators, a reverse-mode tape and optimizers.
//! - [`cae`]: the convolutional autoencoder used as an unsupervised feature extractor.
//! - [`fed`]: FedAvg / FedAdagrad aggregation, the synchronous round state machine,
//!   the client-side local training step and the weight file codec.
//! - [`transport`]: the length-prefixed federation message codec.
//! - [`retrieval`]: the feature dictionary, Euclidean ranking and the index codec.
//! - [`eval`]: retrieval-as-classification scoring.
//! - [`patch`]: tissue-filtered non-overlapping tiling.
//!
//! IO, networking, the CLI and the HTTP service live in the `fedcbmir` crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cae;
pub mod codec;
pub mod error;
pub mod eval;
pub mod fed;
pub mod label;
pub mod numerics;
pub mod patch;
pub mod retrieval;
pub mod transport;

pub use error::{DecodeError, Error, Result};
pub use label::{Label, Magnification, Split};

/// Source of wall-clock readings, supplied by the host environment.
pub trait Clock {
    /// Monotonic seconds since an arbitrary origin.
    fn now_secs(&self) -> f64;
}

/// A clock that never advances. Used where timing is irrelevant.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_secs(&self) -> f64 {
        0.0
    }
}
