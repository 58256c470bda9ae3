//! Topological and tensor-view graph contrastive learning.
//!
//! Graphs are encoded through two channels. A graph convolution stack produces
//! per-layer node embeddings that are stacked into a tensor, and extended
//! persistence diagrams under several vertex filtrations are rasterized into
//! persistence images and encoded by a small CNN. Both channels pass through
//! low-rank tensor transformation layers, are pretrained with a contrastive
//! objective, and are then fine-tuned for graph classification.
//!
//! The crate is organized bottom-up:
//!
//! - [`graph`]: the graph model and TUDataset ingestion.
//! - [`augment`]: stochastic views for contrastive training.
//! - [`filtration`]: vertex functions driving persistence.
//! - [`eph`]: extended persistence diagrams.
//! - [`pimage`]: persistence images and the stacked image tensor.
//! - [`tensor`]: dense tensors, CP/Tucker/TT weights and the transformation layer.
//! - [`autodiff`] and [`nn`]: a reverse-mode tape and the layers built on it.
//! - [`contrastive`]: NT-Xent losses and the pretraining epoch.
//! - [`pipeline`]: configuration, pretraining, cross-validated fine-tuning and reports.

pub mod augment;
pub mod autodiff;
pub mod contrastive;
pub mod eph;
pub mod error;
pub mod filtration;
pub mod graph;
pub mod model;
pub mod nn;
pub mod pimage;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, GraphDataset};
pub use tensor::DenseTensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/persistence.md")]
    mod persistence {}
    #[doc = include_str!("../../../book/src/images.md")]
    mod images {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
}
