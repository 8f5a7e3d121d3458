//! Desk-scale single-/multi-view 3D reconstruction: Euclidean-structure
//! preserving feature lifting, a hybrid occupancy + folding decoder, training
//! harness, and a point-cloud evaluation suite, all on a self-contained
//! tensor/autodiff engine.

pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod net;
pub mod par;
pub mod rng;
pub mod scenes;
pub mod tensor;
