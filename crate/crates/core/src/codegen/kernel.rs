use std::fmt;

use crate::ir::{AffineMap, BinaryOp, ElementType, IteratorKind, ScalarBody, ScalarOp};
use crate::transforms::{Binding, ChainOperand, DispatchRegion, GenericRegion, RegionBody, RootInit};

use super::CodegenError;

pub type Reg = u8;

/// Register file size of one kernel.
pub const MAX_REGS: usize = 256;

/// Where a loop's extent comes from at run time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Extent {
    /// Runtime size of `axis` of a bound buffer.
    Axis { binding: u8, axis: u8 },
    /// Element count of a bound buffer.
    Numel { binding: u8 },
}

/// One iteration dim of the kernel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct KDim {
    pub kind: IteratorKind,
    pub extent: Extent,
    /// 0 = full extent in every work item.
    pub tile: u32,
    /// Grid axis (0 = x) supplying this dim's tile offset.
    pub grid_axis: Option<u8>,
}

/// How a load/store addresses a binding.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Index {
    /// Coordinate of each binding axis is the named iteration dim; the
    /// element is found through row-major strides of the runtime shape.
    Map(Vec<u8>),
    /// Row-major linear offset equals the iteration dim.
    Flat(u8),
}

impl Index {
    pub fn uses(&self, d: u8) -> bool {
        match self {
            Index::Map(m) => m.contains(&d),
            Index::Flat(x) => *x == d,
        }
    }

    /// Consecutive values of `d` touch consecutive elements.
    pub fn unit_stride_in(&self, d: u8) -> bool {
        match self {
            Index::Map(m) => m.last() == Some(&d) && m.iter().filter(|x| **x == d).count() == 1,
            Index::Flat(x) => *x == d,
        }
    }
}

/// Kernel instructions. Each register holds four lanes; scalar ops use lane
/// 0 except `Const`, which fills every lane.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum KOp {
    Load { dst: Reg, binding: u8, index: Index },
    Store { src: Reg, binding: u8, index: Index },
    Const { dst: Reg, ty: ElementType, bits: u32 },
    Bin { dst: Reg, op: BinaryOp, ty: ElementType, a: Reg, b: Reg },
    /// Four consecutive elements along the innermost loop.
    VLoad { dst: Reg, binding: u8, index: Index },
    VStore { src: Reg, binding: u8, index: Index },
    /// Copies lane 0 of `src` to every lane of `dst`.
    Splat { dst: Reg, src: Reg },
    VBin { dst: Reg, op: BinaryOp, ty: ElementType, a: Reg, b: Reg },
}

impl KOp {
    pub fn regs(&self) -> Vec<Reg> {
        match self {
            KOp::Load { dst, .. } | KOp::VLoad { dst, .. } | KOp::Const { dst, .. } => vec![*dst],
            KOp::Store { src, .. } | KOp::VStore { src, .. } => vec![*src],
            KOp::Splat { dst, src } => vec![*dst, *src],
            KOp::Bin { dst, a, b, .. } | KOp::VBin { dst, a, b, .. } => vec![*dst, *a, *b],
        }
    }

    pub fn access(&self) -> Option<(u8, &Index)> {
        match self {
            KOp::Load { binding, index, .. }
            | KOp::Store { binding, index, .. }
            | KOp::VLoad { binding, index, .. }
            | KOp::VStore { binding, index, .. } => Some((*binding, index)),
            _ => None,
        }
    }

    pub fn is_store(&self) -> bool {
        matches!(self, KOp::Store { .. } | KOp::VStore { .. })
    }
}

/// A perfect loop nest; `loops` lists iteration dims outermost first.
/// With an `epilogue`, the innermost loop steps by [`VECTOR_WIDTH`] through
/// `body` and finishes the remainder one element at a time with `epilogue`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Stage {
    pub loops: Vec<u8>,
    pub body: Vec<KOp>,
    pub epilogue: Option<Vec<KOp>>,
}

pub const VECTOR_WIDTH: usize = 4;

/// Device program for one dispatch region. Every work item runs the stages
/// in order over its tile.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LoopNestKernel {
    pub name: String,
    pub bindings: Vec<Binding>,
    pub dims: Vec<KDim>,
    /// Runtime shape agreements; a mismatch traps before any work item runs.
    pub checks: Vec<(Extent, Extent)>,
    pub stages: Vec<Stage>,
    pub num_regs: u16,
}

impl LoopNestKernel {
    pub fn is_vectorized(&self) -> bool {
        self.stages.iter().any(|s| s.epilogue.is_some())
    }

    /// Whether every dim is parallel, so each output element is written once.
    pub fn is_all_parallel(&self) -> bool {
        self.dims.iter().all(|d| d.kind == IteratorKind::Parallel)
    }
}

struct Emitter {
    ops: Vec<KOp>,
    next: usize,
}

impl Emitter {
    fn new() -> Self {
        Self { ops: vec![], next: 0 }
    }

    fn reg(&mut self) -> Result<Reg, CodegenError> {
        let r = self.next;
        if r >= MAX_REGS {
            return Err(CodegenError::TooManyRegisters);
        }
        self.next += 1;
        Ok(r as Reg)
    }

    fn load(&mut self, binding: usize, map: &AffineMap) -> Result<Reg, CodegenError> {
        let dst = self.reg()?;
        self.ops.push(KOp::Load { dst, binding: binding as u8, index: map_index(map) });
        Ok(dst)
    }

    /// Emits `body` with its block arguments bound to `args`; returns the
    /// register holding the yielded value.
    fn body(&mut self, body: &ScalarBody, args: &[Option<Reg>]) -> Result<Reg, CodegenError> {
        let mut vals: Vec<Option<Reg>> = args.to_vec();
        for op in &body.ops {
            let dst = self.reg()?;
            match *op {
                ScalarOp::Const { ty, bits } => self.ops.push(KOp::Const { dst, ty, bits }),
                ScalarOp::Binary { op, ty, lhs, rhs } => {
                    let get = |v: u32| vals[v as usize].ok_or(CodegenError::UnboundArgument(v));
                    let (a, b) = (get(lhs)?, get(rhs)?);
                    self.ops.push(KOp::Bin { dst, op, ty, a, b });
                }
            }
            vals.push(Some(dst));
        }
        vals[body.yields[0] as usize].ok_or(CodegenError::UnboundArgument(body.yields[0]))
    }
}

fn map_index(map: &AffineMap) -> Index {
    Index::Map(map.results.iter().map(|&d| d as u8).collect())
}

/// Lowers a region to the loop nest each work item runs: tiled dims cover
/// `[work_id * tile, min((work_id + 1) * tile, extent))`, everything else
/// (reduction dims in particular) runs its full extent.
pub fn lower_dispatch_to_loops(region: &DispatchRegion) -> Result<LoopNestKernel, CodegenError> {
    let tile = &region.tile;
    let grid_axis = |d: usize| tile.grid_mapping.iter().position(|&m| m == d).map(|a| a as u8);
    let (dims, checks, stages, num_regs) = match &region.body {
        RegionBody::Copy { src, dst } => {
            let (src, dst) = (*src as u8, *dst as u8);
            let dims = vec![KDim {
                kind: IteratorKind::Parallel,
                extent: Extent::Numel { binding: dst },
                tile: tile.tile_sizes[0] as u32,
                grid_axis: grid_axis(0),
            }];
            let body = vec![
                KOp::Load { dst: 0, binding: src, index: Index::Flat(0) },
                KOp::Store { src: 0, binding: dst, index: Index::Flat(0) },
            ];
            let checks = vec![(Extent::Numel { binding: src }, Extent::Numel { binding: dst })];
            (dims, checks, vec![Stage { loops: vec![0], body, epilogue: None }], 1)
        }
        RegionBody::Generic(g) => lower_generic(g, &tile.tile_sizes, grid_axis)?,
    };
    Ok(LoopNestKernel { name: region.name.clone(), bindings: region.bindings.clone(), dims, checks, stages, num_regs })
}

type Lowered = (Vec<KDim>, Vec<(Extent, Extent)>, Vec<Stage>, u16);

fn lower_generic(
    g: &GenericRegion,
    tiles: &[u64],
    grid_axis: impl Fn(usize) -> Option<u8>,
) -> Result<Lowered, CodegenError> {
    let root = &g.root;
    let n = root.num_dims();
    let out_map = root.out_map();

    // Consumer dims renamed into the root's iteration space.
    let consumer_maps: Vec<Vec<AffineMap>> = g
        .consumers
        .iter()
        .map(|c| {
            let c_out = c.op.out_map();
            let rename: Vec<usize> = (0..c.op.num_dims())
                .map(|d| out_map.results[c_out.position_of(d).expect("consumer out map is a permutation")])
                .collect();
            c.op.indexing_maps.iter().map(|m| m.rename_dims(&rename, n)).collect()
        })
        .collect();

    // Every (binding, map) access, used for extents and shape checks.
    let mut accesses: Vec<(usize, &AffineMap)> = root.indexing_maps[..root.num_ins]
        .iter()
        .enumerate()
        .map(|(k, m)| (g.ins[k], m))
        .collect();
    accesses.push((g.output, out_map));
    if let RootInit::Copy(b) = g.init {
        accesses.push((b, out_map));
    }
    for (c, maps) in g.consumers.iter().zip(&consumer_maps) {
        for (k, operand) in c.operands.iter().enumerate() {
            if let ChainOperand::Binding(b) = operand {
                accesses.push((*b, &maps[k]));
            }
        }
    }
    let mut extents: Vec<Option<Extent>> = vec![None; n];
    let mut checks = Vec::new();
    for (b, map) in &accesses {
        for (axis, &d) in map.results.iter().enumerate() {
            let here = Extent::Axis { binding: *b as u8, axis: axis as u8 };
            match extents[d] {
                None => extents[d] = Some(here),
                Some(e) if e != here && !checks.contains(&(e, here)) => checks.push((e, here)),
                Some(_) => {}
            }
        }
    }
    let dims = (0..n)
        .map(|d| {
            Ok(KDim {
                kind: root.iterator_types[d],
                extent: extents[d].ok_or(CodegenError::UnconstrainedDim(d))?,
                tile: tiles[d] as u32,
                grid_axis: grid_axis(d),
            })
        })
        .collect::<Result<Vec<_>, CodegenError>>()?;

    let all_dims: Vec<u8> = (0..n as u8).collect();
    let parallel: Vec<u8> = root.parallel_dims().into_iter().map(|d| d as u8).collect();
    let out = g.output;
    let mut stages = Vec::new();
    let mut num_regs = 0;
    let mut finish = |e: Emitter, loops: Vec<u8>, stages: &mut Vec<Stage>| {
        num_regs = num_regs.max(e.next);
        stages.push(Stage { loops, body: e.ops, epilogue: None });
    };

    let init_reg = |e: &mut Emitter| -> Result<Option<Reg>, CodegenError> {
        Ok(match g.init {
            RootInit::None => None,
            RootInit::Fill(bits) => {
                let dst = e.reg()?;
                e.ops.push(KOp::Const { dst, ty: root.out_elem(), bits });
                Some(dst)
            }
            RootInit::Copy(b) => Some(e.load(b, out_map)?),
        })
    };
    let root_args = |e: &mut Emitter, acc: Option<Reg>| -> Result<Vec<Option<Reg>>, CodegenError> {
        let mut args = Vec::with_capacity(root.num_ins + 1);
        for k in 0..root.num_ins {
            args.push(if root.body.reads_arg(k) { Some(e.load(g.ins[k], &root.indexing_maps[k])?) } else { None });
        }
        args.push(acc);
        Ok(args)
    };
    let consumers = |e: &mut Emitter, mut cur: Reg| -> Result<Reg, CodegenError> {
        for (c, maps) in g.consumers.iter().zip(&consumer_maps) {
            let mut args = Vec::with_capacity(c.operands.len());
            for (k, operand) in c.operands.iter().enumerate() {
                let read = c.op.body.reads_arg(k);
                args.push(match operand {
                    _ if !read => None,
                    ChainOperand::Intermediate => Some(cur),
                    ChainOperand::Binding(b) => Some(e.load(*b, &maps[k])?),
                });
            }
            cur = e.body(&c.op.body, &args)?;
        }
        Ok(cur)
    };

    if root.is_all_parallel() {
        // One pass: each output element is computed and stored once.
        let mut e = Emitter::new();
        let acc = if root.reads_init() { init_reg(&mut e)? } else { None };
        let args = root_args(&mut e, acc)?;
        let y = e.body(&root.body, &args)?;
        let y = consumers(&mut e, y)?;
        e.ops.push(KOp::Store { src: y, binding: out as u8, index: map_index(out_map) });
        finish(e, all_dims, &mut stages);
    } else {
        if root.reads_init() {
            let mut e = Emitter::new();
            let v = init_reg(&mut e)?.expect("reads init");
            e.ops.push(KOp::Store { src: v, binding: out as u8, index: map_index(out_map) });
            finish(e, parallel.clone(), &mut stages);
        }
        let mut e = Emitter::new();
        let acc = if root.reads_init() { Some(e.load(out, out_map)?) } else { None };
        let args = root_args(&mut e, acc)?;
        let y = e.body(&root.body, &args)?;
        e.ops.push(KOp::Store { src: y, binding: out as u8, index: map_index(out_map) });
        finish(e, all_dims, &mut stages);
        if !g.consumers.is_empty() {
            let mut e = Emitter::new();
            let cur = e.load(out, out_map)?;
            let y = consumers(&mut e, cur)?;
            e.ops.push(KOp::Store { src: y, binding: out as u8, index: map_index(out_map) });
            finish(e, parallel, &mut stages);
        }
    }
    Ok((dims, checks, stages, num_regs as u16))
}

fn idx(f: &mut fmt::Formatter<'_>, binding: u8, index: &Index) -> fmt::Result {
    match index {
        Index::Map(m) => {
            let ds: Vec<String> = m.iter().map(|d| format!("d{d}")).collect();
            write!(f, "b{binding}[{}]", ds.join(", "))
        }
        Index::Flat(d) => write!(f, "b{binding}[flat d{d}]"),
    }
}

impl fmt::Display for KOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KOp::Load { dst, binding, index } => {
                write!(f, "r{dst} = load ")?;
                idx(f, *binding, index)
            }
            KOp::VLoad { dst, binding, index } => {
                write!(f, "r{dst} = vload ")?;
                idx(f, *binding, index)
            }
            KOp::Store { src, binding, index } => {
                f.write_str("store ")?;
                idx(f, *binding, index)?;
                write!(f, ", r{src}")
            }
            KOp::VStore { src, binding, index } => {
                f.write_str("vstore ")?;
                idx(f, *binding, index)?;
                write!(f, ", r{src}")
            }
            KOp::Const { dst, ty, bits } => write!(f, "r{dst} = const {ty} 0x{bits:08X}"),
            KOp::Bin { dst, op, ty, a, b } => write!(f, "r{dst} = {}{} r{a}, r{b}", op.stem(), ty),
            KOp::VBin { dst, op, ty, a, b } => write!(f, "r{dst} = v{}{} r{a}, r{b}", op.stem(), ty),
            KOp::Splat { dst, src } => write!(f, "r{dst} = splat r{src}"),
        }
    }
}

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extent::Axis { binding, axis } => write!(f, "dim(b{binding}, {axis})"),
            Extent::Numel { binding } => write!(f, "numel(b{binding})"),
        }
    }
}

/// Reorders the loops of every stage to follow `order`, a permutation of the
/// kernel's dims listed outermost first. Reduction dims must keep their
/// relative order so every output element accumulates in the same sequence.
/// Applies to scalar kernels; vectorize afterwards.
pub fn interchange(kernel: &LoopNestKernel, order: &[u8]) -> Result<LoopNestKernel, CodegenError> {
    let n = kernel.dims.len();
    let mut seen = vec![false; n];
    for &d in order {
        match seen.get_mut(d as usize) {
            Some(s) if !*s => *s = true,
            _ => return Err(CodegenError::InvalidInterchange(format!("{order:?} is not a permutation of {n} dims"))),
        }
    }
    if order.len() != n {
        return Err(CodegenError::InvalidInterchange(format!("{order:?} is not a permutation of {n} dims")));
    }
    if kernel.is_vectorized() {
        return Err(CodegenError::InvalidInterchange("kernel is already vectorized".into()));
    }
    let rank = |d: &u8| order.iter().position(|x| x == d).expect("checked permutation");
    let reductions = |loops: &[u8]| -> Vec<u8> {
        loops.iter().copied().filter(|&d| kernel.dims[d as usize].kind == IteratorKind::Reduction).collect()
    };
    let mut out = kernel.clone();
    for stage in &mut out.stages {
        let before = reductions(&stage.loops);
        stage.loops.sort_by_key(rank);
        if reductions(&stage.loops) != before {
            return Err(CodegenError::InvalidInterchange(format!("{order:?} reorders reduction dims {before:?}")));
        }
    }
    Ok(out)
}

impl fmt::Display for LoopNestKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kernel @{} regs={}", self.name, self.num_regs)?;
        for (i, b) in self.bindings.iter().enumerate() {
            writeln!(f, "  binding b{i}: {} rank {} {}", b.elem, b.rank, b.access.name())?;
        }
        for (d, k) in self.dims.iter().enumerate() {
            write!(f, "  dim d{d}: {} extent {}", k.kind.name(), k.extent)?;
            if let Some(a) = k.grid_axis {
                write!(f, " tile {} on {}", k.tile, ["x", "y", "z"][a as usize])?;
            }
            writeln!(f)?;
        }
        for (a, b) in &self.checks {
            writeln!(f, "  check {a} == {b}")?;
        }
        for (s, stage) in self.stages.iter().enumerate() {
            let loops: Vec<String> = stage.loops.iter().map(|d| format!("d{d}")).collect();
            writeln!(f, "  stage {s} loops({}){}", loops.join(", "), if stage.epilogue.is_some() { " vector 4" } else { "" })?;
            for op in &stage.body {
                writeln!(f, "    {op}")?;
            }
            if let Some(ep) = &stage.epilogue {
                writeln!(f, "  epilogue")?;
                for op in ep {
                    writeln!(f, "    {op}")?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::linalg::lower_to_linalg;
    use crate::text::parse_module;
    use crate::transforms::{form_dispatch_regions, fuse_elementwise, TileConfig};

    pub(crate) fn kernels(src: &str, tiles: &TileConfig) -> Vec<LoopNestKernel> {
        let m = fuse_elementwise(&lower_to_linalg(&parse_module(src).unwrap()).unwrap());
        let p = form_dispatch_regions(&m, tiles).unwrap();
        p.regions.iter().map(|r| lower_dispatch_to_loops(r).unwrap()).collect()
    }

    #[test]
    fn interchange_keeps_reduction_order() {
        let src = r#"module { func @main(%x: tensor<5x4x3xf32>, %z: tensor<5xf32>) -> (tensor<5xf32>) {
            %0 = linalg.generic {iterator_types = ["parallel", "reduction", "reduction"], indexing_maps = [affine_map<(i, j, k) -> (i, j, k)>, affine_map<(i, j, k) -> (i)>]} ins(%x : tensor<5x4x3xf32>) outs(%z : tensor<5xf32>) {
            ^bb0(%a: f32, %o: f32):
              %s = arith.addf %o, %a : f32
              linalg.yield %s : f32
            } -> tensor<5xf32>
            return %0 : tensor<5xf32>
        } }"#;
        let k = &kernels(src, &TileConfig::default())[0];
        // Parallel dim 0 may move anywhere; reduction dims 1 and 2 keep their order.
        let moved = interchange(k, &[1, 0, 2]).unwrap();
        assert_eq!(moved.stages.last().unwrap().loops, vec![1, 0, 2]);
        assert_eq!(interchange(k, &[1, 2, 0]).unwrap().stages.last().unwrap().loops, vec![1, 2, 0]);
        assert!(matches!(interchange(k, &[0, 2, 1]), Err(CodegenError::InvalidInterchange(_))));
        assert!(matches!(interchange(k, &[0, 1]), Err(CodegenError::InvalidInterchange(_))));
        assert!(matches!(interchange(k, &[0, 0, 2]), Err(CodegenError::InvalidInterchange(_))));
    }

    #[test]
    fn matmul_loop_nest() {
        let src = "module { func @main(%a: tensor<100x100xf32>, %b: tensor<100x100xf32>) -> (tensor<100x100xf32>) {
            %0 = fe.matmul(%a, %b) : (tensor<100x100xf32>, tensor<100x100xf32>) -> tensor<100x100xf32>
            return %0 : tensor<100x100xf32>
        } }";
        let k = &kernels(src, &TileConfig::default())[0];
        assert_eq!(k.dims.iter().map(|d| (d.tile, d.grid_axis)).collect::<Vec<_>>(), vec![(32, Some(1)), (32, Some(0)), (0, None)]);
        // init stage over (i, j), then the multiply-add over (i, j, k)
        assert_eq!(k.stages.len(), 2);
        assert_eq!(k.stages[1].loops, vec![0, 1, 2]);
        let bins: Vec<BinaryOp> = k.stages[1]
            .body
            .iter()
            .filter_map(|op| match op {
                KOp::Bin { op, .. } => Some(*op),
                _ => None,
            })
            .collect();
        assert_eq!(bins, vec![BinaryOp::Mul, BinaryOp::Add]);
        assert!(k.stages.iter().all(|s| s.body.iter().filter(|op| op.is_store()).count() == 1));
    }

    #[test]
    fn untiled_add_has_single_stage() {
        let src = "module { func @main(%a: tensor<3x5xi32>, %b: tensor<3x5xi32>) -> (tensor<3x5xi32>) {
            %0 = fe.add(%a, %b) : (tensor<3x5xi32>, tensor<3x5xi32>) -> tensor<3x5xi32>
            return %0 : tensor<3x5xi32>
        } }";
        let tiles = TileConfig { outer: Some(vec![0, 0]), ..Default::default() };
        let k = &kernels(src, &tiles)[0];
        assert!(k.dims.iter().all(|d| d.grid_axis.is_none() && d.tile == 0));
        assert_eq!(k.stages.len(), 1);
        assert_eq!(k.stages[0].body.len(), 4);
    }
}
