//! Joint 3D multi-object association with spatial-temporal attention.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: boxes, corners, projection and frame changes
//! - [`autodiff`]: dense tensors and reverse-mode differentiation
//! - [`net`]: cue embedding, spatial/temporal information flow, affinity and heads
//! - [`losses`]: tracking, temporal-consistency and auxiliary losses
//! - [`sim`]: deterministic synthetic driving scenes with noisy detections
//! - [`tracker`]: Hungarian assignment and the online tracker
//! - [`metrics`]: CLEAR-MOT and recall-averaged tracking metrics
//! - [`train`]: optimisation, checkpoints and evaluation
//! - [`io`] and [`cli`]: file formats and command implementations

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod scene;
pub mod sim;
pub mod tracker;
pub mod train;

pub use error::{Error, Result};
