//! Compression and expansion of state-indexed waveforms.
//!
//! The crate turns a grid of time-series records (each tagged with a
//! two-component state) into low-dimensional latent coordinates, maps those
//! latents to states, and lifts requested states back to full waveforms.
//! Three compressors are available: diffusion maps with a Laplacian-pyramid
//! inverse, a convolutional autoencoder, and a variational autoencoder.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, reports and
//! the command-line front end live in the `wavelatent` companion crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod dmaps;
pub mod error;
pub mod linalg;
pub mod models;
pub mod pipeline;
pub mod pyramid;
pub mod rng;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
pub use signal::{DatasetGrid, SignalRecord, StateVector};
