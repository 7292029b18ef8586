//! The fixed compilation flow from a verified frontend module to a `.tirm`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::codegen::{
    emit_host_c, generate_host_bytecode, interchange, lower_dispatch_to_loops, serialize_kernel, vectorize, CodegenError,
    LoopNestKernel, VECTOR_WIDTH,
};
use crate::ir::{verify_module, Diagnostic, ProgramModule};
use crate::linalg::{lower_to_linalg, LinalgError};
use crate::module_file::{HostCode, ModuleContents, Signature};
use crate::transforms::{
    cse, dce, form_dispatch_regions, fuse_elementwise, rewrite_conv1x1_to_matmul, Partitioned, TileConfig,
    TransformError,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HostFormat {
    #[default]
    Bytecode,
    EmitC,
}

#[derive(Clone, Debug)]
pub struct CompileOptions {
    pub host: HostFormat,
    pub debug: bool,
    pub tiles: TileConfig,
    pub vectorize: bool,
    /// Loop order per region ordinal, outermost first (see [`interchange`]).
    pub interchange: BTreeMap<u32, Vec<u8>>,
    /// Prefix of the emitted `<name>_run` C entry point.
    pub module_name: String,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            host: HostFormat::Bytecode,
            debug: true,
            tiles: TileConfig::default(),
            vectorize: true,
            interchange: BTreeMap::new(),
            module_name: "module".into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("verification failed: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Verification(Vec<Diagnostic>),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
}

/// Every intermediate artifact of one compile.
#[derive(Clone, Debug)]
pub struct Compiled {
    pub linalg: ProgramModule,
    pub partitioned: Partitioned,
    pub kernels: Vec<LoopNestKernel>,
    /// Emitted C when the host format is `EmitC`.
    pub c_source: Option<String>,
    pub contents: ModuleContents,
    pub debug: bool,
}

impl Compiled {
    pub fn module_bytes(&self) -> Vec<u8> {
        crate::module_file::write_module(&self.contents, self.debug)
    }
}

/// verify → 1x1-conv rewrite → lower to linalg → cse → dce → fuse →
/// dispatch regions → kernels and host code.
pub fn compile(module: &ProgramModule, options: &CompileOptions) -> Result<Compiled, CompileError> {
    let diags = verify_module(module);
    if !diags.is_empty() {
        return Err(CompileError::Verification(diags));
    }
    let main = module.main().ok_or(LinalgError::NoMain)?;
    let signature = Signature {
        args: main.arg_types().to_vec(),
        results: main.returned_values().iter().map(|v| main.ty(*v).clone()).collect(),
    };
    let m = rewrite_conv1x1_to_matmul(module);
    let m = lower_to_linalg(&m)?;
    let m = fuse_elementwise(&dce(&cse(&m)));
    let partitioned = form_dispatch_regions(&m, &options.tiles)?;
    let mut kernels = Vec::with_capacity(partitioned.regions.len());
    for (i, r) in partitioned.regions.iter().enumerate() {
        let mut k = lower_dispatch_to_loops(r)?;
        if let Some(order) = options.interchange.get(&(i as u32)) {
            k = interchange(&k, order)?;
        }
        kernels.push(if options.vectorize { vectorize(&k, VECTOR_WIDTH) } else { k });
    }
    let (host, c_source) = match options.host {
        HostFormat::Bytecode => (HostCode::Bytecode(generate_host_bytecode(&partitioned.host)?), None),
        HostFormat::EmitC => {
            let c = emit_host_c(&partitioned.host, &options.module_name);
            (HostCode::CSource(c.clone()), Some(c))
        }
    };
    let contents = ModuleContents {
        host,
        kernels: kernels.iter().map(serialize_kernel).collect(),
        constants: partitioned.constants.clone(),
        signature,
        kernel_names: kernels.iter().map(|k| k.name.clone()).collect(),
    };
    Ok(Compiled { linalg: m, partitioned, kernels, c_source, contents, debug: options.debug })
}
