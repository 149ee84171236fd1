//! Stabilization with a prescribed external gain for linear MIMO systems and
//! robust output synchronization of heterogeneous uncertain agents.
//!
//! Modules build on each other in order: [`linalg`] supplies the dense
//! numerics, [`normal_form`] computes the SVD reduction, [`synthesis`] designs
//! gamma-stabilizing controllers, [`sync`] assembles the distributed
//! synchronization controller and [`sim`] simulates the result.

pub mod benchmark;
pub mod error;
pub mod generate;
pub mod linalg;
pub mod normal_form;
pub mod sim;
pub mod sync;
pub mod synthesis;

pub use error::{Assumption, Error, Result};
pub use linalg::{Mat, Tolerance, Vector};
