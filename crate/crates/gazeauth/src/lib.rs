//! Gaze-based biometric authentication toolkit.
//!
//! The pipeline: binocular optical/visual-axis gaze recordings are
//! differentiated into normalized velocity windows ([`signal`]), embedded
//! by a densely connected dilated-convolution network ([`model`]) trained
//! with multi-similarity loss ([`training`]), and evaluated for
//! verification ([`verify`]), closed-set identification and gallery
//! scaling ([`identify`]), and embedding permanence ([`permanence`]).
//! A deterministic synthetic gaze generator ([`synth`]) provides
//! desk-scale datasets, and [`harness`] orchestrates the experiment grid.
//!
//! See the crate examples for runnable walkthroughs of each capability.

pub mod error;
pub mod harness;
pub mod identify;
pub mod model;
pub mod permanence;
pub mod signal;
pub mod stats;
pub mod synth;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
