//! Dispatch regions to loop-nest kernels, and both halves of the program to
//! their serialized forms.

mod emitc;
mod host_bc;
mod kernel;
mod kernel_bc;
mod vectorize;
mod words;

use thiserror::Error;

pub use emitc::{api_call_count, c_identifier, emit_host_c, parse_host_c};
pub use host_bc::{decode_host_bytecode, generate_host_bytecode, HostBytecodeReader, HOST_MAGIC, MAX_HOST_REGS};
pub use kernel::{interchange, lower_dispatch_to_loops, Extent, Index, KDim, KOp, LoopNestKernel, Reg, Stage, MAX_REGS, VECTOR_WIDTH};
pub use kernel_bc::{deserialize_kernel, serialize_kernel, KERNEL_MAGIC};
pub use vectorize::vectorize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodegenError {
    #[error("malformed bytecode: {0}")]
    MalformedBytecode(String),
    #[error("malformed host C source near `{0}`")]
    MalformedHostSource(String),
    #[error("program needs more registers than an operand byte can address")]
    TooManyRegisters,
    #[error("block argument {0} is used but never bound")]
    UnboundArgument(u32),
    #[error("invalid loop interchange: {0}")]
    InvalidInterchange(String),
    #[error("iteration dim {0} is not constrained by any operand")]
    UnconstrainedDim(usize),
}
