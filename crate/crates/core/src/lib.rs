//! Hierarchical near/far speech separation with Poincaré-ball embeddings.
//!
//! The crate is organised bottom-up: [`manifold`] and [`diffkit`] provide
//! the geometry and the autodiff tape, [`nn`] and [`optim`] the model and its
//! optimizers, [`signal`] and [`scene`] the audio side, and [`train`] and
//! [`analyze`] the experiments built on top.

pub mod analyze;
pub mod config;
pub mod diffkit;
pub mod error;
pub mod manifold;
pub mod nn;
pub mod optim;
pub mod par;
pub mod scene;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
