//! Module-to-module passes and dispatch-region formation.

mod conv;
mod cse;
mod dce;
mod dimexpr;
mod dispatch;
mod fusion;
mod host;

use thiserror::Error;

pub use conv::rewrite_conv1x1_to_matmul;
pub use cse::cse;
pub use dce::dce;
pub use dimexpr::{ceil_div, DimExpr};
pub use dispatch::{
    form_dispatch_regions, value_dims, Access, Binding, ChainOperand, ConstantEntry, DispatchRegion, FusedConsumer,
    GenericRegion, Partitioned, RegionBody, RootInit, TileConfig, TileSpec, DEFAULT_TILE,
};
pub use fusion::{fuse_elementwise, generic_count};
pub use host::{HostOp, HostProgram, HostProgramError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransformError {
    #[error("invalid tile spec: {0}")]
    InvalidTileSpec(String),
    #[error("not supported: {0}")]
    NotSupported(String),
    #[error("module has no @main")]
    NoMain,
}
