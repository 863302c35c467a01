//! Per-orientation generalization analysis for object classifiers.
//!
//! Evaluation records are binned into an accuracy cube over Euler angles,
//! a four-component geometric model is fitted to it, and penultimate-layer
//! activations are scored for invariance between the seen orientations and
//! the regions the model predicts to generalize.

pub mod cli;
pub mod error;
pub mod grid;
pub mod invariance;
pub mod io;
pub mod model;
pub mod render;
pub mod rotation;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{aggregate, project, AccuracyCube, GridSpec, InstanceSet, ProjectionAxis, SeedBox, SeedRegion};
pub use rotation::{Orientation, RotationMatrix, CONVENTION};
