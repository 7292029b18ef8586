//! Host program execution: a bytecode interpreter and a direct-call path
//! over the same eight-call runtime API.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

use crate::codegen::{decode_host_bytecode, deserialize_kernel, parse_host_c, CodegenError, HostBytecodeReader, LoopNestKernel};
use crate::ir::ElementType;
use crate::module_file::{HostCode, ModuleFile, Signature};
use crate::tensor::{num_elements, TensorData};
use crate::transforms::{ceil_div, HostOp, HostProgram};

use super::buffer::{Arena, Buffer, BufferFlags, BufferOrigin, DEFAULT_ARENA_CAP};
use super::device::{DispatchRecord, Instrumentation, SimDevice, TensorRef, WorkerState};
use super::pool::{PoolHandle, TransientPool};
use super::sched::{dispatch_async, dispatch_sync, TaskGraph};
use super::RuntimeError;

fn malformed(e: CodegenError) -> RuntimeError {
    RuntimeError::MalformedBytecode(e.to_string())
}

fn fault(msg: impl Into<String>) -> RuntimeError {
    RuntimeError::HostFault(msg.into())
}

/// Kernels by ordinal. Lookup never consults debug names.
#[derive(Clone, Debug, Default)]
pub struct KernelTable {
    kernels: Vec<LoopNestKernel>,
}

impl KernelTable {
    pub fn new(kernels: Vec<LoopNestKernel>) -> Self {
        Self { kernels }
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn get(&self, ordinal: u32) -> Result<&LoopNestKernel, RuntimeError> {
        self.kernels.get(ordinal as usize).ok_or(RuntimeError::MissingKernel(ordinal))
    }
}

/// Decodes every kernel of the module. Names come from the debug section
/// when present and default to `kernel_<ordinal>`.
pub fn load_kernel_library(file: &ModuleFile) -> Result<KernelTable, RuntimeError> {
    let names = file.debug_names()?;
    let mut kernels = Vec::new();
    for (i, bytes) in file.kernels()?.iter().enumerate() {
        let mut k = deserialize_kernel(bytes).map_err(malformed)?;
        k.name = names.as_ref().and_then(|n| n.get(i).cloned()).unwrap_or_else(|| format!("kernel_{i}"));
        kernels.push(k);
    }
    Ok(KernelTable { kernels })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HostMode {
    /// Decode and execute host bytecode one instruction at a time.
    Interpret,
    /// Call the runtime API from a pre-bound call list, as emitted C does.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheduler {
    #[default]
    Sync,
    Async { workers: usize },
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub scheduler: Scheduler,
    /// `None` interprets bytecode modules and runs C modules directly.
    pub host: Option<HostMode>,
    pub instrumentation: Instrumentation,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    pub dispatches: u64,
    pub work_items: u64,
    pub vector_iterations: u64,
    pub scalar_iterations: u64,
    /// Pool high-water mark of this run, in requested bytes.
    pub peak_pool_bytes: usize,
    pub host_ops: u64,
    /// Instructions decoded by the bytecode interpreter.
    pub interpreter_decodes: u64,
    /// Live bytes left in the arena once the run has cleaned up.
    pub at_rest_bytes: usize,
    /// One record per dispatch, in program order.
    pub records: Vec<DispatchRecord>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub outputs: Vec<TensorData>,
    pub stats: RunStats,
}

type DirectCall = Box<dyn Fn(&mut Vm<'_, '_>) -> Result<(), RuntimeError> + Send + Sync>;

/// A module ready to run: kernels decoded, constants resident, host code
/// validated and its transient lifetimes computed.
pub struct LoadedModule {
    pub signature: Signature,
    pub kernels: KernelTable,
    pub program: HostProgram,
    constants: Vec<TensorRef>,
    bytecode: Option<Vec<u8>>,
    direct: Vec<DirectCall>,
    /// Buffer registers whose transient dies after each op.
    dying: Vec<Vec<u32>>,
    /// Ops whose allocation is returned to the caller.
    output_allocs: HashSet<usize>,
}

impl std::fmt::Debug for LoadedModule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoadedModule")
            .field("signature", &self.signature)
            .field("kernels", &self.kernels.len())
            .field("host_ops", &self.program.ops.len())
            .finish()
    }
}

impl LoadedModule {
    /// Bytes held by the constant pool.
    pub fn constant_bytes(&self) -> usize {
        self.constants.iter().map(|c| c.buffer.len()).sum()
    }

    pub fn has_bytecode(&self) -> bool {
        self.bytecode.is_some()
    }
}

fn bind_call(op: &HostOp) -> DirectCall {
    match op.clone() {
        HostOp::ConstI64 { dst, value } => Box::new(move |vm| vm.const_i64(dst, value)),
        HostOp::Dim { dst, buf, axis } => Box::new(move |vm| vm.dim(dst, buf, axis)),
        HostOp::Mul { dst, a, b } => Box::new(move |vm| vm.mul(dst, a, b)),
        HostOp::CeilDiv { dst, a, b } => Box::new(move |vm| vm.ceildiv(dst, a, b)),
        HostOp::AllocTransient { dst, elem, dims } => Box::new(move |vm| vm.alloc_transient(dst, elem, &dims)),
        HostOp::BindConstant { dst, ordinal } => Box::new(move |vm| vm.bind_const(dst, ordinal)),
        HostOp::Dispatch { region, grid, bindings } => Box::new(move |vm| vm.dispatch(region, grid, &bindings)),
        HostOp::Return { results } => Box::new(move |vm| vm.ret(&results)),
    }
}

/// Last-use analysis over the straight-line program. Each transient dies
/// after the op that last reads it; returned allocations never die.
fn lifetimes(p: &HostProgram) -> (Vec<Vec<u32>>, HashSet<usize>) {
    let mut dying = vec![Vec::new(); p.ops.len()];
    let mut outputs = HashSet::new();
    let mut live: HashMap<u32, usize> = HashMap::new();
    let mut last: HashMap<u32, usize> = HashMap::new();
    for (i, op) in p.ops.iter().enumerate() {
        for b in op.reads().1 {
            last.insert(b, i);
        }
        if let HostOp::Return { results } = op {
            for r in results {
                if let Some(def) = live.remove(r) {
                    outputs.insert(def);
                }
            }
        }
        if let Some(w) = op.writes().1 {
            if let Some(def) = live.remove(&w) {
                let end = last.get(&w).copied().filter(|&l| l > def).unwrap_or(def);
                dying[end].push(w);
            }
            last.remove(&w);
            if matches!(op, HostOp::AllocTransient { .. }) {
                live.insert(w, i);
            }
        }
    }
    for (w, def) in live {
        let end = last.get(&w).copied().filter(|&l| l > def).unwrap_or(def);
        dying[end].push(w);
    }
    for d in &mut dying {
        d.sort_unstable();
    }
    (dying, outputs)
}

/// Owns the memory a program runs in: one arena and one transient pool.
#[derive(Debug)]
pub struct Runtime {
    arena: Arc<Arena>,
    pool: Mutex<TransientPool>,
}

impl Default for Runtime {
    fn default() -> Self {
        Self::new(DEFAULT_ARENA_CAP)
    }
}

impl Runtime {
    pub fn new(arena_cap: usize) -> Self {
        let arena = Arena::new(arena_cap);
        Self { pool: Mutex::new(TransientPool::new(Arc::clone(&arena))), arena }
    }

    pub fn arena(&self) -> &Arc<Arena> {
        &self.arena
    }

    /// Requested bytes of every buffer alive in this runtime's arena.
    pub fn resident_bytes(&self) -> usize {
        self.arena.live_bytes()
    }

    pub fn pool_live_count(&self) -> usize {
        self.pool.lock().expect("pool lock").live_count()
    }

    pub fn load(&self, file: &ModuleFile) -> Result<LoadedModule, RuntimeError> {
        let signature = file.signature()?;
        let kernels = load_kernel_library(file)?;
        let (program, bytecode) = match file.host()? {
            HostCode::Bytecode(b) => (decode_host_bytecode(&b).map_err(malformed)?, Some(b)),
            HostCode::CSource(c) => (parse_host_c(&c).map_err(malformed)?, None),
        };
        if program.num_args as usize != signature.args.len() {
            return Err(RuntimeError::MalformedBytecode(format!(
                "host program takes {} arguments, signature declares {}",
                program.num_args,
                signature.args.len()
            )));
        }
        let mut constants = Vec::new();
        for c in file.constants()? {
            let buffer = self.arena.allocate_init(BufferFlags::CONSTANT, BufferOrigin::Constant, &c.bytes)?;
            constants.push(TensorRef { buffer, elem: c.elem, shape: c.shape });
        }
        let direct = program.ops.iter().map(bind_call).collect();
        let (dying, output_allocs) = lifetimes(&program);
        Ok(LoadedModule { signature, kernels, program, constants, bytecode, direct, dying, output_allocs })
    }

    pub fn run(&self, module: &LoadedModule, inputs: &[TensorData], options: &RunOptions) -> Result<RunOutput, RuntimeError> {
        check_signature(&module.signature, inputs)?;
        let mode = match options.host {
            Some(m) => m,
            None if module.bytecode.is_some() => HostMode::Interpret,
            None => HostMode::Direct,
        };
        if mode == HostMode::Interpret && module.bytecode.is_none() {
            return Err(RuntimeError::MalformedBytecode("module carries no host bytecode to interpret".into()));
        }
        self.pool.lock().expect("pool lock").reset_high_water();
        let exec = Exec {
            rt: self,
            module,
            device: SimDevice { instrumentation: options.instrumentation },
            instances: Mutex::new(Vec::new()),
            records: Mutex::new(Vec::new()),
        };
        let result = exec.run_program(inputs, mode, options.scheduler);
        // Whatever happened, hand every pooled block back and drop the rest.
        let leftovers: Vec<_> = exec.instances.lock().expect("instance lock").drain(..).collect();
        let mut pool = self.pool.lock().expect("pool lock");
        for (_, handle) in leftovers.into_iter().flatten() {
            if let Some(h) = handle {
                let _ = pool.release(h);
            }
        }
        pool.trim();
        let peak = pool.high_water();
        drop(pool);
        let (outputs, mut stats) = result?;
        stats.peak_pool_bytes = peak;
        let mut records = exec.records.into_inner().expect("record lock");
        records.sort_by_key(|(i, _)| *i);
        for (_, r) in &records {
            stats.work_items += r.work_items;
            stats.vector_iterations += r.vector_iterations;
            stats.scalar_iterations += r.scalar_iterations;
        }
        stats.records = records.into_iter().map(|(_, r)| r).collect();
        stats.at_rest_bytes = self.arena.live_bytes();
        Ok(RunOutput { outputs, stats })
    }
}

/// Loads `file` into a fresh default runtime and runs it once.
pub fn vm_run(file: &ModuleFile, inputs: &[TensorData], options: &RunOptions) -> Result<RunOutput, RuntimeError> {
    let rt = Runtime::default();
    let module = rt.load(file)?;
    rt.run(&module, inputs, options)
}

fn check_signature(sig: &Signature, inputs: &[TensorData]) -> Result<(), RuntimeError> {
    if inputs.len() != sig.args.len() {
        return Err(RuntimeError::SignatureMismatch(format!("expected {} inputs, got {}", sig.args.len(), inputs.len())));
    }
    for (i, (t, x)) in sig.args.iter().zip(inputs).enumerate() {
        if t.elem != x.elem || t.shape.len() != x.shape.len() {
            return Err(RuntimeError::SignatureMismatch(format!("input {i}: expected {t}, got {}", x.tensor_type())));
        }
        for (axis, (d, &n)) in t.shape.iter().zip(&x.shape).enumerate() {
            if let Some(s) = d.as_static() {
                if s as usize != n {
                    return Err(RuntimeError::SignatureMismatch(format!("input {i} axis {axis}: expected {s}, got {n}")));
                }
            }
        }
        let bytes = num_elements(&x.shape) * x.elem.byte_width();
        if x.bytes.len() != bytes {
            return Err(RuntimeError::SignatureMismatch(format!("input {i}: payload is {} bytes, expected {bytes}", x.bytes.len())));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct RegBuf {
    inst: usize,
    elem: ElementType,
    shape: Vec<usize>,
}

/// Device-side work issued by the host program.
enum Command {
    Alloc { inst: usize, elem: ElementType, shape: Vec<usize>, output: bool },
    Dispatch { index: usize, region: u32, cnt: [u32; 3], bindings: Vec<RegBuf> },
    Release { inst: usize },
}

type Instance = Option<(Arc<Buffer>, Option<PoolHandle>)>;

/// Shared state of one run; commands execute against it from any thread.
struct Exec<'m> {
    rt: &'m Runtime,
    module: &'m LoadedModule,
    device: SimDevice,
    instances: Mutex<Vec<Instance>>,
    records: Mutex<Vec<(usize, DispatchRecord)>>,
}

impl Exec<'_> {
    fn new_instance(&self, value: Instance) -> usize {
        let mut inst = self.instances.lock().expect("instance lock");
        inst.push(value);
        inst.len() - 1
    }

    fn buffer(&self, inst: usize) -> Result<Arc<Buffer>, RuntimeError> {
        self.instances.lock().expect("instance lock")[inst]
            .as_ref()
            .map(|(b, _)| Arc::clone(b))
            .ok_or_else(|| fault(format!("buffer instance {inst} used after release")))
    }

    fn run(&self, cmd: &Command) -> Result<(), RuntimeError> {
        match cmd {
            Command::Alloc { inst, elem, shape, output } => {
                let bytes = num_elements(shape) * elem.byte_width();
                let value = if *output {
                    (self.rt.arena.allocate(BufferFlags::OUTPUT, BufferOrigin::DeviceAlloc, bytes)?, None)
                } else {
                    let mut pool = self.rt.pool.lock().expect("pool lock");
                    let h = pool.acquire(bytes)?;
                    (pool.buffer(h), Some(h))
                };
                self.instances.lock().expect("instance lock")[*inst] = Some(value);
            }
            Command::Dispatch { index, region, cnt, bindings } => {
                let kernel = self.module.kernels.get(*region)?;
                let refs = bindings
                    .iter()
                    .map(|b| Ok(TensorRef { buffer: self.buffer(b.inst)?, elem: b.elem, shape: b.shape.clone() }))
                    .collect::<Result<Vec<_>, RuntimeError>>()?;
                let worker = WorkerState::new(kernel, *cnt, refs);
                let record = dispatch_sync(&self.device, kernel, &worker)?;
                self.records.lock().expect("record lock").push((*index, record));
            }
            Command::Release { inst } => {
                let taken = self.instances.lock().expect("instance lock")[*inst].take();
                if let Some((_, Some(h))) = taken {
                    self.rt.pool.lock().expect("pool lock").release(h)?;
                }
            }
        }
        Ok(())
    }

    fn run_program(&self, inputs: &[TensorData], mode: HostMode, scheduler: Scheduler) -> Result<(Vec<TensorData>, RunStats), RuntimeError> {
        let program = &self.module.program;
        let mut bregs = vec![None; program.num_buffer_regs() as usize];
        for (i, x) in inputs.iter().enumerate() {
            let buffer = self.rt.arena.allocate_init(BufferFlags::INPUT, BufferOrigin::HostAlloc, &x.bytes)?;
            bregs[i] = Some(RegBuf { inst: self.new_instance(Some((buffer, None))), elem: x.elem, shape: x.shape.clone() });
        }
        let mut vm = Vm {
            exec: self,
            sregs: vec![None; program.num_scalar_regs() as usize],
            bregs,
            op_index: 0,
            dispatches: 0,
            deferred: matches!(scheduler, Scheduler::Async { .. }).then(Vec::new),
            results: None,
            stats: RunStats::default(),
        };
        match mode {
            HostMode::Interpret => {
                let bytes = self.module.bytecode.as_deref().expect("checked by the caller");
                let mut r = HostBytecodeReader::new(bytes).map_err(malformed)?;
                for _ in 0..r.num_ops {
                    let op = r.next_op().map_err(malformed)?;
                    vm.stats.interpreter_decodes += 1;
                    vm.execute(&op)?;
                    vm.end_op()?;
                }
            }
            HostMode::Direct => {
                for call in &self.module.direct {
                    call(&mut vm)?;
                    vm.end_op()?;
                }
            }
        }
        if let (Some(cmds), Scheduler::Async { workers }) = (vm.deferred.take(), scheduler) {
            self.run_graph(&cmds, workers)?;
        }
        let results = vm.results.take().ok_or_else(|| fault("program finished without RETURN"))?;
        let mut outputs = Vec::with_capacity(results.len());
        for r in results {
            let bytes = num_elements(&r.shape) * r.elem.byte_width();
            let mut data = self.buffer(r.inst)?.host_read()?;
            data.truncate(bytes);
            outputs.push(TensorData { elem: r.elem, shape: r.shape, bytes: data });
        }
        Ok((outputs, vm.stats))
    }

    /// Orders deferred commands by their buffer dependencies and runs them
    /// on `workers` threads.
    fn run_graph(&self, cmds: &[Command], workers: usize) -> Result<(), RuntimeError> {
        #[derive(Default)]
        struct Deps {
            alloc: Option<usize>,
            writer: Option<usize>,
            readers: Vec<usize>,
        }
        let mut g = TaskGraph::new();
        let mut deps: HashMap<usize, Deps> = HashMap::new();
        for cmd in cmds {
            let node = g.add_node(move || self.run(cmd));
            match cmd {
                Command::Alloc { inst, .. } => deps.entry(*inst).or_default().alloc = Some(node),
                Command::Dispatch { region, bindings, .. } => {
                    let kernel = self.module.kernels.get(*region).ok();
                    for (i, b) in bindings.iter().enumerate() {
                        let write = kernel.and_then(|k| k.bindings.get(i)).is_none_or(|kb| kb.access.can_write());
                        let d = deps.entry(b.inst).or_default();
                        for p in d.alloc.iter().chain(&d.writer) {
                            g.add_edge(*p, node);
                        }
                        if write {
                            for p in d.readers.drain(..) {
                                if p != node {
                                    g.add_edge(p, node);
                                }
                            }
                            d.writer = Some(node);
                        } else {
                            d.readers.push(node);
                        }
                    }
                }
                Command::Release { inst } => {
                    let d = deps.entry(*inst).or_default();
                    for p in d.alloc.iter().chain(&d.writer).chain(&d.readers) {
                        g.add_edge(*p, node);
                    }
                }
            }
        }
        dispatch_async(g, workers)
    }
}

/// Register state of one host program execution; its methods are the
/// runtime API that both host modes call.
pub struct Vm<'e, 'm> {
    exec: &'e Exec<'m>,
    sregs: Vec<Option<i64>>,
    bregs: Vec<Option<RegBuf>>,
    op_index: usize,
    dispatches: usize,
    /// Commands held back for the async scheduler.
    deferred: Option<Vec<Command>>,
    results: Option<Vec<RegBuf>>,
    stats: RunStats,
}

impl Vm<'_, '_> {
    fn issue(&mut self, cmd: Command) -> Result<(), RuntimeError> {
        match &mut self.deferred {
            Some(cmds) => {
                cmds.push(cmd);
                Ok(())
            }
            None => self.exec.run(&cmd),
        }
    }

    fn s(&self, r: u32) -> Result<i64, RuntimeError> {
        self.sregs.get(r as usize).copied().flatten().ok_or_else(|| fault(format!("scalar register {r} is unset")))
    }

    fn set_s(&mut self, r: u32, v: i64) -> Result<(), RuntimeError> {
        *self.sregs.get_mut(r as usize).ok_or_else(|| fault(format!("scalar register {r} out of range")))? = Some(v);
        Ok(())
    }

    fn b(&self, r: u32) -> Result<&RegBuf, RuntimeError> {
        self.bregs.get(r as usize).and_then(Option::as_ref).ok_or_else(|| fault(format!("buffer register {r} is unset")))
    }

    fn set_b(&mut self, r: u32, v: RegBuf) -> Result<(), RuntimeError> {
        *self.bregs.get_mut(r as usize).ok_or_else(|| fault(format!("buffer register {r} out of range")))? = Some(v);
        Ok(())
    }

    fn execute(&mut self, op: &HostOp) -> Result<(), RuntimeError> {
        match op {
            HostOp::ConstI64 { dst, value } => self.const_i64(*dst, *value),
            HostOp::Dim { dst, buf, axis } => self.dim(*dst, *buf, *axis),
            HostOp::Mul { dst, a, b } => self.mul(*dst, *a, *b),
            HostOp::CeilDiv { dst, a, b } => self.ceildiv(*dst, *a, *b),
            HostOp::AllocTransient { dst, elem, dims } => self.alloc_transient(*dst, *elem, dims),
            HostOp::BindConstant { dst, ordinal } => self.bind_const(*dst, *ordinal),
            HostOp::Dispatch { region, grid, bindings } => self.dispatch(*region, *grid, bindings),
            HostOp::Return { results } => self.ret(results),
        }
    }

    /// Releases the transients whose last use was the op just executed.
    fn end_op(&mut self) -> Result<(), RuntimeError> {
        self.stats.host_ops += 1;
        let dying = self.exec.module.dying.get(self.op_index).cloned().unwrap_or_default();
        for r in dying {
            let inst = self.b(r)?.inst;
            self.issue(Command::Release { inst })?;
        }
        self.op_index += 1;
        Ok(())
    }

    pub fn const_i64(&mut self, dst: u32, value: i64) -> Result<(), RuntimeError> {
        self.set_s(dst, value)
    }

    pub fn dim(&mut self, dst: u32, buf: u32, axis: u32) -> Result<(), RuntimeError> {
        let b = self.b(buf)?;
        let n = *b.shape.get(axis as usize).ok_or_else(|| fault(format!("axis {axis} of a rank-{} buffer", b.shape.len())))?;
        self.set_s(dst, n as i64)
    }

    pub fn mul(&mut self, dst: u32, a: u32, b: u32) -> Result<(), RuntimeError> {
        let v = self.s(a)?.checked_mul(self.s(b)?).ok_or_else(|| fault("multiplication overflow"))?;
        self.set_s(dst, v)
    }

    pub fn ceildiv(&mut self, dst: u32, a: u32, b: u32) -> Result<(), RuntimeError> {
        let (x, y) = (self.s(a)?, self.s(b)?);
        let v = ceil_div(x, y).ok_or_else(|| fault(format!("ceildiv({x}, {y})")))?;
        self.set_s(dst, v)
    }

    pub fn alloc_transient(&mut self, dst: u32, elem: ElementType, dims: &[u32]) -> Result<(), RuntimeError> {
        let shape = dims
            .iter()
            .map(|&r| usize::try_from(self.s(r)?).map_err(|_| fault("negative extent")))
            .collect::<Result<Vec<_>, _>>()?;
        shape
            .iter()
            .try_fold(elem.byte_width(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| fault("allocation size overflows"))?;
        let output = self.exec.module.output_allocs.contains(&self.op_index);
        let inst = self.exec.new_instance(None);
        self.issue(Command::Alloc { inst, elem, shape: shape.clone(), output })?;
        self.set_b(dst, RegBuf { inst, elem, shape })
    }

    pub fn bind_const(&mut self, dst: u32, ordinal: u32) -> Result<(), RuntimeError> {
        let c = self.exec.module.constants.get(ordinal as usize).ok_or_else(|| fault(format!("no constant {ordinal}")))?;
        let inst = self.exec.new_instance(Some((Arc::clone(&c.buffer), None)));
        let reg = RegBuf { inst, elem: c.elem, shape: c.shape.clone() };
        self.set_b(dst, reg)
    }

    pub fn dispatch(&mut self, region: u32, grid: [u32; 3], bindings: &[u32]) -> Result<(), RuntimeError> {
        let mut cnt = [0u32; 3];
        for (c, &r) in cnt.iter_mut().zip(&grid) {
            *c = u32::try_from(self.s(r)?).map_err(|_| fault("grid count out of range"))?;
        }
        let bindings = bindings.iter().map(|&r| self.b(r).cloned()).collect::<Result<Vec<_>, _>>()?;
        let index = self.dispatches;
        self.dispatches += 1;
        self.stats.dispatches += 1;
        self.issue(Command::Dispatch { index, region, cnt, bindings })
    }

    pub fn ret(&mut self, results: &[u32]) -> Result<(), RuntimeError> {
        self.results = Some(results.iter().map(|&r| self.b(r).cloned()).collect::<Result<Vec<_>, _>>()?);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::module_file::read_module;
    use crate::pipeline::{compile, CompileOptions, HostFormat};
    use crate::refinterp::interpret;
    use crate::text::parse_module;

    const MATMUL_BIAS: &str = "module { func @main(%a: tensor<7x5xf32>, %b: tensor<5x70xf32>, %c: tensor<70xf32>) -> (tensor<7x70xf32>) {
        %0 = fe.matmul(%a, %b) : (tensor<7x5xf32>, tensor<5x70xf32>) -> tensor<7x70xf32>
        %1 = fe.broadcast(%c, %0) {dims = [1]} : (tensor<70xf32>, tensor<7x70xf32>) -> tensor<7x70xf32>
        %2 = fe.add(%0, %1) : (tensor<7x70xf32>, tensor<7x70xf32>) -> tensor<7x70xf32>
        return %2 : tensor<7x70xf32>
    } }";

    fn inputs() -> Vec<TensorData> {
        let v = |n: usize, k: f32| (0..n).map(|i| ((i * 7 % 13) as f32 - 6.0) * k).collect::<Vec<_>>();
        vec![
            TensorData::from_f32(&[7, 5], &v(35, 0.25)),
            TensorData::from_f32(&[5, 70], &v(350, 0.5)),
            TensorData::from_f32(&[70], &v(70, 1.5)),
        ]
    }

    fn module(host: HostFormat) -> ModuleFile {
        let m = parse_module(MATMUL_BIAS).unwrap();
        let c = compile(&m, &CompileOptions { host, ..Default::default() }).unwrap();
        read_module(&c.module_bytes()).unwrap()
    }

    #[test]
    fn matches_reference_in_every_mode() {
        let expected = interpret(&parse_module(MATMUL_BIAS).unwrap(), &inputs()).unwrap();
        for host in [HostFormat::Bytecode, HostFormat::EmitC] {
            let file = module(host);
            for scheduler in [Scheduler::Sync, Scheduler::Async { workers: 3 }] {
                let out = vm_run(&file, &inputs(), &RunOptions { scheduler, ..Default::default() }).unwrap();
                assert_eq!(out.outputs, expected);
                assert_eq!(out.stats.dispatches, 1);
                assert_eq!(out.stats.interpreter_decodes > 0, host == HostFormat::Bytecode);
            }
        }
    }

    #[test]
    fn direct_mode_never_decodes() {
        let file = module(HostFormat::Bytecode);
        let opts = RunOptions { host: Some(HostMode::Direct), ..Default::default() };
        let out = vm_run(&file, &inputs(), &opts).unwrap();
        assert_eq!(out.stats.interpreter_decodes, 0);
        assert!(out.stats.host_ops > 0);
    }

    #[test]
    fn signature_is_checked() {
        let file = module(HostFormat::Bytecode);
        let mut bad = inputs();
        bad[2] = TensorData::from_f32(&[71], &[0.0; 71]);
        assert!(matches!(vm_run(&file, &bad, &RunOptions::default()), Err(RuntimeError::SignatureMismatch(_))));
        assert!(matches!(vm_run(&file, &bad[..2], &RunOptions::default()), Err(RuntimeError::SignatureMismatch(_))));
    }

    #[test]
    fn nothing_but_constants_stays_resident() {
        let rt = Runtime::default();
        let file = module(HostFormat::Bytecode);
        let loaded = rt.load(&file).unwrap();
        let out = rt.run(&loaded, &inputs(), &RunOptions::default()).unwrap();
        assert_eq!(out.stats.at_rest_bytes, loaded.constant_bytes());
        assert_eq!(rt.pool_live_count(), 0);
    }

    #[test]
    fn lifetimes_end_at_last_read() {
        let p = HostProgram {
            num_args: 1,
            ops: vec![
                HostOp::ConstI64 { dst: 0, value: 4 },
                HostOp::AllocTransient { dst: 1, elem: ElementType::F32, dims: vec![0] },
                HostOp::AllocTransient { dst: 2, elem: ElementType::F32, dims: vec![0] },
                HostOp::Dispatch { region: 0, grid: [0, 0, 0], bindings: vec![0, 1] },
                HostOp::Dispatch { region: 0, grid: [0, 0, 0], bindings: vec![1, 2] },
                HostOp::AllocTransient { dst: 3, elem: ElementType::F32, dims: vec![0] },
                HostOp::Return { results: vec![2] },
            ],
        };
        let (dying, outputs) = lifetimes(&p);
        assert_eq!(dying[4], vec![1]);
        assert_eq!(dying[5], vec![3]);
        assert_eq!(outputs, HashSet::from([2]));
    }
}
