//! Runtime: buffers with visibility flags, a transient pool, a simulated
//! device, the dispatch schedulers and the VM that drives them.

mod buffer;
mod device;
mod pool;
mod sched;
mod vm;

use thiserror::Error;

use crate::module_file::ModuleError;

pub use buffer::{Arena, Buffer, BufferFlags, BufferOrigin, DEFAULT_ARENA_CAP};
pub use device::{Device, DispatchRecord, Instrumentation, Prepared, SimDevice, TensorRef, WorkerState};
pub use pool::{PoolHandle, TransientPool};
pub use sched::{dispatch_async, dispatch_sync, TaskGraph};
pub use vm::{
    load_kernel_library, vm_run, HostMode, KernelTable, LoadedModule, RunOptions, RunOutput, RunStats, Runtime,
    Scheduler,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuntimeError {
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("out of memory: {requested} bytes requested, {in_use} of {cap} in use")]
    OutOfMemory { requested: usize, in_use: usize, cap: usize },
    #[error("buffer must be visible to the host or the device")]
    InvalidFlags,
    #[error("expected {expected} bytes, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("kernel trap: {0}")]
    KernelTrap(String),
    #[error("host program fault: {0}")]
    HostFault(String),
    #[error("released a pool block that is not live")]
    DoubleRelease,
    #[error("task graph has a cycle")]
    CycleDetected,
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),
    #[error("malformed bytecode: {0}")]
    MalformedBytecode(String),
    #[error("no kernel with ordinal {0}")]
    MissingKernel(u32),
    #[error(transparent)]
    Module(#[from] ModuleError),
}
