//! Layers built on the [`autodiff`](crate::autodiff) tape.
//!
//! Layers are plain descriptions (names and sizes). Their values live in a
//! [`ParamStore`] and are bound onto a tape through a [`Session`] for each
//! forward pass.

pub mod adam;
pub mod batchnorm;
pub mod cnn;
pub mod gcn;
pub mod gradcheck;
pub mod linear;
pub mod mlp;
pub mod params;

pub use adam::Adam;
pub use batchnorm::BatchNorm;
pub use cnn::{Cnn, CnnConfig};
pub use gcn::{Gcn, GcnConfig, GraphBatch};
pub use gradcheck::{finite_difference_check, Evaluation, GradCheckReport};
pub use linear::Linear;
pub use mlp::Mlp;
pub use params::{Mode, ParamStore, Session};
