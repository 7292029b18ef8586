//! A small tensor-program compiler and embedded runtime.
//!
//! Programs are written against a frontend tensor dialect, lowered to
//! `linalg.generic` loop nests, fused, tiled into dispatch regions and split
//! into a host program plus device kernels. Both are serialized into a
//! sectioned binary module that the runtime loads and executes on a
//! simulated device.

#![allow(clippy::needless_range_loop)]

pub mod codegen;
pub mod ir;
pub mod linalg;
pub mod module_file;
pub mod pipeline;
pub mod refinterp;
pub mod runtime;
pub mod tensor;
pub mod text;
pub mod transforms;
