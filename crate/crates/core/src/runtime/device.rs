//! The simulated device: a bounds-checked interpreter for loop-nest kernels.

use std::sync::Arc;

use crate::codegen::{Extent, Index, KOp, LoopNestKernel, VECTOR_WIDTH};
use crate::ir::{load_bits, store_bits, ElementType};
use crate::tensor::{num_elements, row_major_strides};

use super::buffer::{Buffer, ReadView, WriteView};
use super::RuntimeError;

/// A buffer viewed as a typed tensor.
#[derive(Clone, Debug)]
pub struct TensorRef {
    pub buffer: Arc<Buffer>,
    pub elem: ElementType,
    pub shape: Vec<usize>,
}

impl TensorRef {
    pub fn byte_len(&self) -> usize {
        num_elements(&self.shape) * self.elem.byte_width()
    }
}

/// Everything one dispatch needs: grid counts, bound buffers and the
/// scalars pushed alongside them (binding extents, then tile sizes).
#[derive(Clone, Debug)]
pub struct WorkerState {
    pub cnt: [u32; 3],
    pub bindings: Vec<TensorRef>,
    pub push_constants: Vec<i64>,
}

impl WorkerState {
    pub fn new(kernel: &LoopNestKernel, cnt: [u32; 3], bindings: Vec<TensorRef>) -> Self {
        let mut push_constants: Vec<i64> = bindings.iter().flat_map(|b| b.shape.iter().map(|d| *d as i64)).collect();
        push_constants.extend(kernel.dims.iter().map(|d| d.tile as i64));
        Self { cnt, bindings, push_constants }
    }
}

/// What the device can be asked to observe.
#[derive(Clone, Copy, Debug, Default)]
pub struct Instrumentation {
    pub record_work_ids: bool,
    pub count_writes: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DispatchRecord {
    pub work_items: u64,
    pub vector_iterations: u64,
    pub scalar_iterations: u64,
    pub work_ids: Vec<[u32; 3]>,
    /// Per binding, per element store count (written bindings only).
    pub write_counts: Vec<Option<Vec<u32>>>,
    /// Per binding, per element number of distinct work items that stored to it.
    pub writer_counts: Vec<Option<Vec<u32>>>,
    last_writer: Vec<Option<Vec<u64>>>,
}

/// Device interface: kernels are prepared against their bindings once per
/// dispatch, then run one work item at a time.
pub trait Device: Sync {
    fn name(&self) -> &'static str;
    fn prepare<'a>(&self, kernel: &'a LoopNestKernel, worker: &'a WorkerState) -> Result<Prepared<'a>, RuntimeError>;
}

/// In-process simulator; the only device shipped.
#[derive(Clone, Copy, Debug, Default)]
pub struct SimDevice {
    pub instrumentation: Instrumentation,
}

enum Slot<'a> {
    R(ReadView<'a>),
    W(WriteView<'a>),
}

impl Slot<'_> {
    fn bytes(&self) -> &[u8] {
        match self {
            Slot::R(v) => v,
            Slot::W(v) => v,
        }
    }
}

/// Address of an access: offset = sum of point[d] * stride over `terms`.
struct Addr {
    slot: usize,
    binding: usize,
    elem: ElementType,
    terms: Vec<(usize, usize)>,
    /// Per accessed axis: (iteration dim, axis extent), for the bounds check.
    bounds: Vec<(usize, usize)>,
}

impl Addr {
    #[inline]
    fn offset(&self, pt: &[usize]) -> usize {
        self.terms.iter().map(|&(d, s)| pt[d] * s).sum()
    }
}

enum Op {
    Load(u8, Addr),
    VLoad(u8, Addr),
    Store(u8, Addr),
    VStore(u8, Addr),
    Const(u8, u32),
    Bin(u8, crate::ir::BinaryOp, ElementType, u8, u8),
    VBin(u8, crate::ir::BinaryOp, ElementType, u8, u8),
    Splat(u8, u8),
}

struct CompiledStage {
    loops: Vec<usize>,
    body: Vec<Op>,
    epilogue: Option<Vec<Op>>,
}

/// A kernel bound to locked buffers, ready to run work items.
pub struct Prepared<'a> {
    kernel: &'a LoopNestKernel,
    worker: &'a WorkerState,
    slots: Vec<Slot<'a>>,
    extents: Vec<usize>,
    stages: Vec<CompiledStage>,
    instrumentation: Instrumentation,
    pub record: DispatchRecord,
}

fn trap(msg: impl Into<String>) -> RuntimeError {
    RuntimeError::KernelTrap(msg.into())
}

impl Device for SimDevice {
    fn name(&self) -> &'static str {
        "sim"
    }

    fn prepare<'a>(&self, kernel: &'a LoopNestKernel, worker: &'a WorkerState) -> Result<Prepared<'a>, RuntimeError> {
        if worker.bindings.len() != kernel.bindings.len() {
            return Err(trap(format!("{} bindings supplied, kernel declares {}", worker.bindings.len(), kernel.bindings.len())));
        }
        // Permissions first, so a refused dispatch touches nothing.
        for (b, t) in kernel.bindings.iter().zip(&worker.bindings) {
            t.buffer.check_device(b.access.can_read(), b.access.can_write())?;
            if b.elem != t.elem || b.rank != t.shape.len() {
                return Err(trap(format!("binding type mismatch: kernel wants {} rank {}", b.elem, b.rank)));
            }
            if t.byte_len() > t.buffer.len() {
                return Err(trap("tensor view is larger than its buffer"));
            }
        }
        for op in kernel.stages.iter().flat_map(|s| s.body.iter().chain(s.epilogue.iter().flatten())) {
            if let Some((b, _)) = op.access() {
                let access = kernel.bindings.get(b as usize).ok_or_else(|| trap("binding out of range"))?.access;
                let ok = if op.is_store() { access.can_write() } else { access.can_read() };
                if !ok {
                    return Err(RuntimeError::PermissionDenied(format!("kernel accesses binding {b} against its {} declaration", access.name())));
                }
            }
        }

        // Lock each distinct buffer once; a written buffer must not alias.
        let mut slot_of = Vec::with_capacity(worker.bindings.len());
        let mut ids: Vec<(u64, bool)> = Vec::new();
        let mut slots = Vec::new();
        for (b, t) in kernel.bindings.iter().zip(&worker.bindings) {
            let write = b.access.can_write();
            if let Some(i) = ids.iter().position(|(id, _)| *id == t.buffer.id()) {
                if write || ids[i].1 {
                    return Err(trap("a written buffer is bound more than once"));
                }
                slot_of.push(i);
                continue;
            }
            ids.push((t.buffer.id(), write));
            slot_of.push(slots.len());
            slots.push(if write { Slot::W(t.buffer.write_unchecked()) } else { Slot::R(t.buffer.read_unchecked()) });
        }

        let ext = |e: &Extent| -> Result<usize, RuntimeError> {
            match *e {
                Extent::Axis { binding, axis } => worker
                    .bindings
                    .get(binding as usize)
                    .and_then(|t| t.shape.get(axis as usize))
                    .copied()
                    .ok_or_else(|| trap("extent refers to a missing axis")),
                Extent::Numel { binding } => worker
                    .bindings
                    .get(binding as usize)
                    .map(|t| num_elements(&t.shape))
                    .ok_or_else(|| trap("extent refers to a missing binding")),
            }
        };
        for (a, b) in &kernel.checks {
            let (x, y) = (ext(a)?, ext(b)?);
            if x != y {
                return Err(trap(format!("shape check failed: {a} = {x} but {b} = {y}")));
            }
        }
        let extents = kernel.dims.iter().map(|d| ext(&d.extent)).collect::<Result<Vec<_>, _>>()?;

        let strides: Vec<Vec<usize>> = worker.bindings.iter().map(|t| row_major_strides(&t.shape)).collect();
        let addr = |binding: u8, index: &Index| -> Result<Addr, RuntimeError> {
            let b = binding as usize;
            let t = &worker.bindings[b];
            let (terms, bounds) = match index {
                Index::Map(m) => {
                    if m.len() != t.shape.len() {
                        return Err(trap("index rank differs from binding rank"));
                    }
                    let mut terms: Vec<(usize, usize)> = Vec::new();
                    for (a, &d) in m.iter().enumerate() {
                        let d = d as usize;
                        if d >= extents.len() {
                            return Err(trap("index names a missing iteration dim"));
                        }
                        match terms.iter_mut().find(|(x, _)| *x == d) {
                            Some(t) => t.1 += strides[b][a],
                            None => terms.push((d, strides[b][a])),
                        }
                    }
                    let bounds = m.iter().enumerate().map(|(a, &d)| (d as usize, t.shape[a])).collect();
                    (terms, bounds)
                }
                Index::Flat(d) => {
                    let d = *d as usize;
                    if d >= extents.len() {
                        return Err(trap("index names a missing iteration dim"));
                    }
                    (vec![(d, 1)], vec![(d, num_elements(&t.shape))])
                }
            };
            Ok(Addr { slot: slot_of[b], binding: b, elem: t.elem, terms, bounds })
        };
        let compile = |ops: &[KOp]| -> Result<Vec<Op>, RuntimeError> {
            ops.iter()
                .map(|op| {
                    Ok(match op {
                        KOp::Load { dst, binding, index } => Op::Load(*dst, addr(*binding, index)?),
                        KOp::VLoad { dst, binding, index } => Op::VLoad(*dst, addr(*binding, index)?),
                        KOp::Store { src, binding, index } => Op::Store(*src, addr(*binding, index)?),
                        KOp::VStore { src, binding, index } => Op::VStore(*src, addr(*binding, index)?),
                        KOp::Const { dst, bits, .. } => Op::Const(*dst, *bits),
                        KOp::Bin { dst, op, ty, a, b } => Op::Bin(*dst, *op, *ty, *a, *b),
                        KOp::VBin { dst, op, ty, a, b } => Op::VBin(*dst, *op, *ty, *a, *b),
                        KOp::Splat { dst, src } => Op::Splat(*dst, *src),
                    })
                })
                .collect()
        };
        let mut stages = Vec::with_capacity(kernel.stages.len());
        for s in &kernel.stages {
            let loops: Vec<usize> = s.loops.iter().map(|d| *d as usize).collect();
            if loops.is_empty() || loops.iter().any(|d| *d >= extents.len()) {
                return Err(trap("loop over a missing iteration dim"));
            }
            let is_vector = |op: &KOp| matches!(op, KOp::VLoad { .. } | KOp::VStore { .. } | KOp::VBin { .. } | KOp::Splat { .. });
            let inner = *s.loops.last().expect("non-empty");
            let lanes_ok = match &s.epilogue {
                None => !s.body.iter().any(is_vector),
                Some(ep) => {
                    !ep.iter().any(is_vector)
                        && s.body.iter().all(|op| match op {
                            KOp::VLoad { index, .. } | KOp::VStore { index, .. } => index.unit_stride_in(inner),
                            _ => true,
                        })
                }
            };
            if !lanes_ok {
                return Err(trap("vector op outside a unit-stride vector loop"));
            }
            stages.push(CompiledStage {
                loops,
                body: compile(&s.body)?,
                epilogue: s.epilogue.as_deref().map(compile).transpose()?,
            });
        }

        let on = self.instrumentation.count_writes;
        let record = DispatchRecord {
            write_counts: per_written(kernel, worker, on, 0),
            writer_counts: per_written(kernel, worker, on, 0),
            last_writer: per_written(kernel, worker, on, u64::MAX),
            ..Default::default()
        };
        Ok(Prepared { kernel, worker, slots, extents, stages, instrumentation: self.instrumentation, record })
    }
}

fn per_written<T: Clone>(kernel: &LoopNestKernel, worker: &WorkerState, on: bool, init: T) -> Vec<Option<Vec<T>>> {
    if !on {
        return vec![];
    }
    kernel
        .bindings
        .iter()
        .zip(&worker.bindings)
        .map(|(b, t)| b.access.can_write().then(|| vec![init.clone(); num_elements(&t.shape)]))
        .collect()
}

type Regs = [[u32; VECTOR_WIDTH]; 256];

impl Prepared<'_> {
    pub fn grid(&self) -> [u32; 3] {
        self.worker.cnt
    }

    pub fn kernel(&self) -> &LoopNestKernel {
        self.kernel
    }

    /// Runs every stage over the tile of `work_id`.
    pub fn run_work_item(&mut self, work_id: [u32; 3]) -> Result<(), RuntimeError> {
        for a in 0..3 {
            if work_id[a] >= self.worker.cnt[a] {
                return Err(trap(format!("work id {work_id:?} outside grid {:?}", self.worker.cnt)));
            }
        }
        self.record.work_items += 1;
        if self.instrumentation.record_work_ids {
            self.record.work_ids.push(work_id);
        }
        let ranges: Vec<(usize, usize)> = self
            .kernel
            .dims
            .iter()
            .zip(&self.extents)
            .map(|(d, &n)| match d.grid_axis {
                Some(a) if d.tile > 0 => {
                    let lo = (work_id[a as usize] as usize).saturating_mul(d.tile as usize).min(n);
                    (lo, lo.saturating_add(d.tile as usize).min(n))
                }
                _ => (0, n),
            })
            .collect();
        let mut regs: Regs = [[0; VECTOR_WIDTH]; 256];
        let mut pt = vec![0usize; ranges.len()];
        for s in 0..self.stages.len() {
            let stage = &self.stages[s];
            if stage.loops.iter().any(|&d| ranges[d].0 >= ranges[d].1) {
                continue;
            }
            // Every coordinate stays inside its axis for the whole tile, so
            // the per-point accesses below cannot leave their buffers.
            for op in stage.body.iter().chain(stage.epilogue.iter().flatten()) {
                let (Op::Load(_, a) | Op::VLoad(_, a) | Op::Store(_, a) | Op::VStore(_, a)) = op else { continue };
                for &(d, size) in &a.bounds {
                    if !stage.loops.contains(&d) {
                        return Err(trap(format!("access uses dim d{d} outside the stage's loops")));
                    }
                    if ranges[d].1 > size {
                        return Err(trap(format!("index d{d} reaches {} on an axis of {size}", ranges[d].1 - 1)));
                    }
                }
            }
            self.run_stage(s, &ranges, &mut pt, &mut regs, 0);
        }
        Ok(())
    }

    fn run_stage(&mut self, s: usize, ranges: &[(usize, usize)], pt: &mut [usize], regs: &mut Regs, level: usize) {
        let stage = &self.stages[s];
        let d = stage.loops[level];
        let (lo, hi) = ranges[d];
        if level + 1 < stage.loops.len() {
            for x in lo..hi {
                pt[d] = x;
                self.run_stage(s, ranges, pt, regs, level + 1);
            }
            return;
        }
        let mut x = lo;
        if stage.epilogue.is_some() {
            while x + VECTOR_WIDTH <= hi {
                pt[d] = x;
                exec(&self.stages[s].body, &mut self.slots, &mut self.record, pt, regs);
                self.record.vector_iterations += 1;
                x += VECTOR_WIDTH;
            }
        }
        let scalar = self.stages[s].epilogue.as_ref().unwrap_or(&self.stages[s].body);
        while x < hi {
            pt[d] = x;
            exec(scalar, &mut self.slots, &mut self.record, pt, regs);
            self.record.scalar_iterations += 1;
            x += 1;
        }
    }

    pub fn into_record(self) -> DispatchRecord {
        self.record
    }
}

#[inline]
fn load(slots: &[Slot<'_>], a: &Addr, off: usize) -> u32 {
    let w = a.elem.byte_width();
    load_bits(a.elem, &slots[a.slot].bytes()[off * w..off * w + w])
}

#[inline]
fn store(slots: &mut [Slot<'_>], record: &mut DispatchRecord, a: &Addr, off: usize, bits: u32) {
    let w = a.elem.byte_width();
    let Slot::W(v) = &mut slots[a.slot] else { unreachable!("stores are checked against binding access") };
    store_bits(a.elem, bits, &mut v[off * w..off * w + w]);
    if let Some(Some(c)) = record.write_counts.get_mut(a.binding) {
        c[off] += 1;
        let item = record.work_items;
        if let Some(Some(last)) = record.last_writer.get_mut(a.binding) {
            if last[off] != item {
                last[off] = item;
                if let Some(Some(w)) = record.writer_counts.get_mut(a.binding) {
                    w[off] += 1;
                }
            }
        }
    }
}

fn exec(ops: &[Op], slots: &mut [Slot<'_>], record: &mut DispatchRecord, pt: &[usize], regs: &mut Regs) {
    for op in ops {
        match op {
            Op::Load(dst, a) => regs[*dst as usize][0] = load(slots, a, a.offset(pt)),
            Op::VLoad(dst, a) => {
                let off = a.offset(pt);
                for lane in 0..VECTOR_WIDTH {
                    regs[*dst as usize][lane] = load(slots, a, off + lane);
                }
            }
            Op::Store(src, a) => store(slots, record, a, a.offset(pt), regs[*src as usize][0]),
            Op::VStore(src, a) => {
                let off = a.offset(pt);
                for lane in 0..VECTOR_WIDTH {
                    store(slots, record, a, off + lane, regs[*src as usize][lane]);
                }
            }
            Op::Const(dst, bits) => regs[*dst as usize] = [*bits; VECTOR_WIDTH],
            Op::Bin(dst, op, ty, a, b) => regs[*dst as usize][0] = op.eval_bits(*ty, regs[*a as usize][0], regs[*b as usize][0]),
            Op::VBin(dst, op, ty, a, b) => {
                let (x, y) = (regs[*a as usize], regs[*b as usize]);
                for lane in 0..VECTOR_WIDTH {
                    regs[*dst as usize][lane] = op.eval_bits(*ty, x[lane], y[lane]);
                }
            }
            Op::Splat(dst, src) => regs[*dst as usize] = [regs[*src as usize][0]; VECTOR_WIDTH],
        }
    }
}
