//! Dense tensors, low-rank weight formats and the tensor transformation layer.

pub mod checkpoint;
pub mod dense;
pub mod lowrank;
pub mod ttl;

pub use dense::{concatenate, DenseTensor};
pub use lowrank::{
    cp_reconstruct, low_rank_inner_product, tt_reconstruct, tucker_reconstruct, CpWeight, LowRankWeight, TtWeight,
    TuckerWeight,
};
pub use ttl::{Ttl, TtlConfig, TtlFormat, TtlModule};
