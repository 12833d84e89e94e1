//! Transferable physics-informed embeddings with closed-form head adaptation.
//!
//! A trunk network maps coordinates to a wide feature vector. New PDE
//! instances are solved by fitting only the linear output head: PDE, boundary
//! and initial constraints evaluated on the features form a weighted linear
//! system, solved through regularized normal equations. Nonlinear operators
//! are handled by Picard linearization.

pub mod autodiff;
pub mod error;
pub mod linalg;
pub mod network;
pub mod pinv;
pub mod problems;
pub mod training;

pub use error::{Error, Result};
