use std::collections::{BTreeMap, HashMap};

use crate::ir::{Dim, ElementType, FuncOp, IteratorKind, Opcode, ProgramModule, ScalarBody, ScalarOp, ValueId};
use crate::ir::AffineMap;
use crate::linalg::GenericOp;

use super::{DimExpr, HostOp, HostProgram, TransformError};

pub const DEFAULT_TILE: u64 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Access {
    Read,
    Write,
    ReadWrite,
}

impl Access {
    pub fn can_read(self) -> bool {
        self != Access::Write
    }

    pub fn can_write(self) -> bool {
        self != Access::Read
    }

    pub fn code(self) -> u8 {
        match self {
            Access::Read => 0,
            Access::Write => 1,
            Access::ReadWrite => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Access::Read, Access::Write, Access::ReadWrite].into_iter().find(|a| a.code() == c)
    }

    pub fn name(self) -> &'static str {
        match self {
            Access::Read => "read",
            Access::Write => "write",
            Access::ReadWrite => "readwrite",
        }
    }
}

/// A kernel operand slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Binding {
    pub elem: ElementType,
    pub rank: usize,
    pub access: Access,
}

/// Per-iteration-dim tile sizes (0 = untiled) and the dims distributed over
/// the workgroup grid, listed x first. A dim is tiled exactly when it is
/// mapped to a grid axis.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TileSpec {
    pub tile_sizes: Vec<u64>,
    pub grid_mapping: Vec<usize>,
}

impl TileSpec {
    pub fn untiled(num_dims: usize) -> Self {
        Self { tile_sizes: vec![0; num_dims], grid_mapping: vec![] }
    }

    /// Tiles the two outermost parallel dims by 32, outer one on y, inner on x.
    pub fn default_for(iters: &[IteratorKind]) -> Self {
        Self::from_outer_tiles(iters, &[DEFAULT_TILE, DEFAULT_TILE])
    }

    /// Tiles the outermost parallel dims by `tiles` (0 leaves a dim untiled).
    /// The innermost tiled dim goes on x, the next on y, then z.
    pub fn from_outer_tiles(iters: &[IteratorKind], tiles: &[u64]) -> Self {
        let mut spec = Self::untiled(iters.len());
        let parallel = (0..iters.len()).filter(|&d| iters[d] == IteratorKind::Parallel);
        let mut tiled = Vec::new();
        for (d, &t) in parallel.zip(tiles) {
            if t > 0 {
                spec.tile_sizes[d] = t;
                tiled.push(d);
            }
        }
        spec.grid_mapping = tiled.into_iter().rev().take(3).collect();
        for d in 0..iters.len() {
            if !spec.grid_mapping.contains(&d) {
                spec.tile_sizes[d] = 0;
            }
        }
        spec
    }

    pub fn validate(&self, iters: &[IteratorKind]) -> Result<(), TransformError> {
        let bad = |m: String| Err(TransformError::InvalidTileSpec(m));
        if self.tile_sizes.len() != iters.len() {
            return bad(format!("{} tile sizes for {} iteration dims", self.tile_sizes.len(), iters.len()));
        }
        if self.grid_mapping.len() > 3 {
            return bad(format!("{} dims mapped onto a 3-D grid", self.grid_mapping.len()));
        }
        for (k, &d) in self.grid_mapping.iter().enumerate() {
            if d >= iters.len() || self.grid_mapping[..k].contains(&d) {
                return bad(format!("grid mapping names dim {d} twice or out of range"));
            }
        }
        for (d, &t) in self.tile_sizes.iter().enumerate() {
            if t > 0 && iters[d] == IteratorKind::Reduction {
                return bad(format!("dim {d} is a reduction and cannot be tiled"));
            }
            if (t > 0) != self.grid_mapping.contains(&d) {
                return bad(format!("dim {d} must be both tiled and mapped, or neither"));
            }
        }
        Ok(())
    }
}

/// How the root's accumulator is initialized inside the kernel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RootInit {
    /// The body never reads the init.
    None,
    /// Folded `linalg.fill`: every output element starts as these bits.
    Fill(u32),
    /// Copy the init tensor from this binding.
    Copy(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ChainOperand {
    /// The value produced by the previous op of the region.
    Intermediate,
    Binding(usize),
}

/// An all-parallel op grouped after the root. It reads the intermediate at
/// the point it writes, so it updates the output buffer in place.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FusedConsumer {
    pub op: GenericOp,
    /// One entry per consumer operand (`ins` then `outs`).
    pub operands: Vec<ChainOperand>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GenericRegion {
    pub root: GenericOp,
    /// Binding for each root `ins` operand.
    pub ins: Vec<usize>,
    pub init: RootInit,
    pub consumers: Vec<FusedConsumer>,
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RegionBody {
    Generic(GenericRegion),
    /// Row-major element copy between bindings of equal element count.
    Copy { src: usize, dst: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DispatchRegion {
    pub id: u32,
    pub name: String,
    pub body: RegionBody,
    pub tile: TileSpec,
    pub bindings: Vec<Binding>,
    /// Workgroup count per axis (x, y, z).
    pub grid: [DimExpr; 3],
}

impl DispatchRegion {
    /// Iterator kinds of the dims the tile spec refers to.
    pub fn iterator_types(&self) -> Vec<IteratorKind> {
        match &self.body {
            RegionBody::Generic(g) => g.root.iterator_types.clone(),
            RegionBody::Copy { .. } => vec![IteratorKind::Parallel],
        }
    }
}

/// Tile choices for `form_dispatch_regions`.
#[derive(Clone, Debug, Default)]
pub struct TileConfig {
    /// Outer-parallel-dim tiles applied to every region (see
    /// [`TileSpec::from_outer_tiles`]); `None` selects the defaults.
    pub outer: Option<Vec<u64>>,
    /// Explicit outer tiles for individual regions, by ordinal.
    pub per_region: BTreeMap<u32, Vec<u64>>,
}

impl TileConfig {
    fn spec(&self, id: u32, iters: &[IteratorKind]) -> TileSpec {
        match self.per_region.get(&id).or(self.outer.as_ref()) {
            Some(t) => TileSpec::from_outer_tiles(iters, t),
            None => TileSpec::default_for(iters),
        }
    }
}

/// Compiled entry point: host program plus its device regions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partitioned {
    pub host: HostProgram,
    pub regions: Vec<DispatchRegion>,
    pub constants: Vec<ConstantEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ConstantEntry {
    pub elem: ElementType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

/// Symbolic extents of every value of `f`.
pub fn value_dims(f: &FuncOp) -> Vec<Vec<DimExpr>> {
    let mut dims: Vec<Vec<DimExpr>> = vec![vec![]; f.value_types.len()];
    let static_or = |d: Dim, e: DimExpr| d.as_static().map(|n| DimExpr::Const(n as i64)).unwrap_or(e);
    for a in 0..f.num_args {
        dims[a] = f.value_types[a]
            .shape
            .iter()
            .enumerate()
            .map(|(axis, d)| static_or(*d, DimExpr::ArgDim { arg: a as u32, axis: axis as u32 }))
            .collect();
    }
    for op in &f.body {
        let Some(&r) = op.results.first() else { continue };
        let ty = f.ty(r);
        let derived: Vec<DimExpr> = match op.opcode {
            Opcode::LinalgGeneric => dims[op.operands.last().expect("outs").index()].clone(),
            Opcode::LinalgFill => op
                .ints_attr("dims")
                .unwrap_or_default()
                .chunks(2)
                .map(|p| dims[op.operands[p[0] as usize].index()][p[1] as usize].clone())
                .collect(),
            Opcode::TensorReshape => {
                let known: i64 = ty.shape.iter().filter_map(|d| d.as_static()).product::<u64>() as i64;
                let numel = DimExpr::product(&dims[op.operands[0].index()]);
                ty.shape
                    .iter()
                    .map(|_| DimExpr::ceil_div(numel.clone(), DimExpr::Const(known.max(1))))
                    .collect()
            }
            Opcode::FeAdd | Opcode::FeSub | Opcode::FeMul | Opcode::FeMax => dims[op.operands[0].index()].clone(),
            Opcode::FeBroadcast => dims[op.operands[1].index()].clone(),
            _ => ty.shape.iter().map(|_| DimExpr::Const(0)).collect(),
        };
        dims[r.index()] = ty
            .shape
            .iter()
            .zip(derived)
            .map(|(d, e)| static_or(*d, e))
            .collect();
    }
    dims
}

/// Extent of each iteration dim of `g`, given the result's extents.
fn parallel_extents(g: &GenericOp, result_dims: &[DimExpr]) -> Vec<Option<DimExpr>> {
    let mut out = vec![None; g.num_dims()];
    for (p, &d) in g.out_map().results.iter().enumerate() {
        out[d] = Some(result_dims[p].clone());
    }
    out
}

struct Builder<'a> {
    f: &'a FuncOp,
    dims: Vec<Vec<DimExpr>>,
    host: Vec<HostOp>,
    memo: HashMap<DimExpr, u32>,
    next_sreg: u32,
    next_breg: u32,
    bufs: Vec<Option<u32>>,
}

impl Builder<'_> {
    fn scalar(&mut self, e: &DimExpr) -> u32 {
        if let Some(&r) = self.memo.get(e) {
            return r;
        }
        let op = match e {
            DimExpr::Const(c) => HostOp::ConstI64 { dst: 0, value: *c },
            DimExpr::ArgDim { arg, axis } => HostOp::Dim { dst: 0, buf: *arg, axis: *axis },
            DimExpr::Mul(a, b) => {
                let (a, b) = (self.scalar(a), self.scalar(b));
                HostOp::Mul { dst: 0, a, b }
            }
            DimExpr::CeilDiv(a, b) => {
                let (a, b) = (self.scalar(a), self.scalar(b));
                HostOp::CeilDiv { dst: 0, a, b }
            }
        };
        let dst = self.next_sreg;
        self.next_sreg += 1;
        self.host.push(match op {
            HostOp::ConstI64 { value, .. } => HostOp::ConstI64 { dst, value },
            HostOp::Dim { buf, axis, .. } => HostOp::Dim { dst, buf, axis },
            HostOp::Mul { a, b, .. } => HostOp::Mul { dst, a, b },
            HostOp::CeilDiv { a, b, .. } => HostOp::CeilDiv { dst, a, b },
            _ => unreachable!(),
        });
        self.memo.insert(e.clone(), dst);
        dst
    }

    fn buffer(&self, v: ValueId) -> Result<u32, TransformError> {
        self.bufs[v.index()]
            .ok_or_else(|| TransformError::NotSupported(format!("value %{} has no materialized buffer", v.0)))
    }

    fn alloc(&mut self, v: ValueId) -> u32 {
        let dims: Vec<DimExpr> = self.dims[v.index()].clone();
        let regs = dims.iter().map(|e| self.scalar(e)).collect();
        let dst = self.next_breg;
        self.next_breg += 1;
        self.host.push(HostOp::AllocTransient { dst, elem: self.f.ty(v).elem, dims: regs });
        self.bufs[v.index()] = Some(dst);
        dst
    }
}

/// A generic root plus the op indices of its grouped consumers.
struct Chain {
    root: usize,
    consumers: Vec<usize>,
}

/// Users of each value as distinct op indices, plus whether it is returned.
fn users(f: &FuncOp) -> (Vec<Vec<usize>>, Vec<bool>) {
    let mut users = vec![vec![]; f.value_types.len()];
    let mut returned = vec![false; f.value_types.len()];
    for (i, op) in f.body.iter().enumerate() {
        for v in &op.operands {
            if op.opcode == Opcode::Return {
                returned[v.index()] = true;
            } else if users[v.index()].last() != Some(&i) {
                users[v.index()].push(i);
            }
        }
    }
    (users, returned)
}

/// Whether op `i` reads value `v`'s data (not just its shape).
fn reads_data(f: &FuncOp, i: usize, v: ValueId) -> bool {
    let op = &f.body[i];
    match op.opcode {
        Opcode::LinalgGeneric => {
            let g = GenericOp::from_op(op).expect("generic");
            op.operands[..g.num_ins].contains(&v) || (g.reads_init() && op.operands[g.num_ins] == v)
        }
        Opcode::LinalgFill => false,
        _ => op.operands.contains(&v),
    }
}

fn chain_consumer(f: &FuncOp, users: &[Vec<usize>], returned: &[bool], cur: ValueId) -> Option<usize> {
    if returned[cur.index()] || users[cur.index()].len() != 1 {
        return None;
    }
    let u = users[cur.index()][0];
    let op = &f.body[u];
    let g = GenericOp::from_op(op).filter(GenericOp::is_all_parallel)?;
    if g.out_elem() != f.ty(cur).elem || f.ty(op.result()).shape.len() != f.ty(cur).shape.len() {
        return None;
    }
    let out_map = g.out_map();
    let mut reads = false;
    for (k, v) in op.operands.iter().enumerate() {
        let is_read = k < g.num_ins || g.reads_init();
        if *v == cur && is_read {
            if &g.indexing_maps[k] != out_map {
                return None;
            }
            reads = true;
        }
    }
    reads.then_some(u)
}

fn fill_value_bits(f: &FuncOp, v: ValueId) -> Option<u32> {
    let i = f.defining_op(v)?;
    let op = &f.body[i];
    (op.opcode == Opcode::LinalgFill)
        .then(|| crate::linalg::fill_bits(f.ty(v).elem, op.int_attr("value").unwrap_or(0)))
}

/// Splits `@main` of a fused linalg module into dispatch regions and the host
/// program that sizes, allocates and dispatches them in program order.
pub fn form_dispatch_regions(module: &ProgramModule, tiles: &TileConfig) -> Result<Partitioned, TransformError> {
    let f = module.main().ok_or(TransformError::NoMain)?;
    let (users, returned) = users(f);

    // Group generic roots with their in-place consumers.
    let mut absorbed = vec![false; f.body.len()];
    let mut chains_by_last: BTreeMap<usize, Chain> = BTreeMap::new();
    for (i, op) in f.body.iter().enumerate() {
        if op.opcode != Opcode::LinalgGeneric || absorbed[i] {
            continue;
        }
        let mut chain = Chain { root: i, consumers: vec![] };
        let mut cur = op.result();
        // A consumer joins at most one chain.
        while let Some(u) = chain_consumer(f, &users, &returned, cur).filter(|&u| !absorbed[u]) {
            absorbed[u] = true;
            chain.consumers.push(u);
            cur = f.body[u].result();
        }
        let last = chain.consumers.last().copied().unwrap_or(i);
        chains_by_last.insert(last, chain);
    }

    let mut b = Builder {
        f,
        dims: value_dims(f),
        host: vec![],
        memo: HashMap::new(),
        next_sreg: 0,
        next_breg: f.num_args as u32,
        bufs: vec![None; f.value_types.len()],
    };
    for a in 0..f.num_args {
        b.bufs[a] = Some(a as u32);
    }
    let mut regions: Vec<DispatchRegion> = Vec::new();
    let mut constants = Vec::new();

    for (i, op) in f.body.iter().enumerate() {
        let id = regions.len() as u32;
        match op.opcode {
            Opcode::Return => {
                let results = op.operands.iter().map(|v| b.buffer(*v)).collect::<Result<_, _>>()?;
                b.host.push(HostOp::Return { results });
            }
            Opcode::FeConstant => {
                let ty = f.ty(op.result());
                let ordinal = constants.len() as u32;
                constants.push(ConstantEntry {
                    elem: ty.elem,
                    shape: ty.static_shape().expect("constants are static"),
                    bytes: op.blob_attr("value").unwrap_or_default().to_vec(),
                });
                let dst = b.next_breg;
                b.next_breg += 1;
                b.host.push(HostOp::BindConstant { dst, ordinal });
                b.bufs[op.result().index()] = Some(dst);
            }
            Opcode::LinalgFill => {
                let v = op.result();
                let needed = returned[v.index()] || users[v.index()].iter().any(|&u| reads_fill_data(f, u, v));
                if !needed {
                    continue;
                }
                let ty = f.ty(v);
                let rank = ty.rank();
                let bits = fill_value_bits(f, v).expect("fill");
                let root = GenericOp {
                    iterator_types: vec![IteratorKind::Parallel; rank],
                    indexing_maps: vec![AffineMap::identity(rank)],
                    num_ins: 0,
                    body: ScalarBody {
                        args: vec![ty.elem],
                        ops: vec![ScalarOp::Const { ty: ty.elem, bits }],
                        yields: vec![1],
                    },
                };
                let g = GenericRegion { root, ins: vec![], init: RootInit::None, consumers: vec![], output: 0 };
                let bindings = vec![Binding { elem: ty.elem, rank, access: Access::Write }];
                let extents: Vec<Option<DimExpr>> = b.dims[v.index()].iter().cloned().map(Some).collect();
                let region = make_region(id, format!("main_dispatch_{id}_fill"), RegionBody::Generic(g), bindings, &extents, tiles)?;
                let out = b.alloc(v);
                emit_dispatch(&mut b, &region, vec![out]);
                regions.push(region);
            }
            Opcode::TensorReshape => {
                let (src, dst) = (op.operands[0], op.result());
                let src_buf = b.buffer(src)?;
                let elem = f.ty(dst).elem;
                let bindings = vec![
                    Binding { elem, rank: f.ty(src).rank(), access: Access::Read },
                    Binding { elem, rank: f.ty(dst).rank(), access: Access::Write },
                ];
                let extents = vec![Some(DimExpr::product(&b.dims[dst.index()]))];
                let region = make_region(
                    id,
                    format!("main_dispatch_{id}_reshape"),
                    RegionBody::Copy { src: 0, dst: 1 },
                    bindings,
                    &extents,
                    tiles,
                )?;
                let out = b.alloc(dst);
                emit_dispatch(&mut b, &region, vec![src_buf, out]);
                regions.push(region);
            }
            Opcode::LinalgGeneric => {
                let Some(chain) = chains_by_last.get(&i) else { continue };
                let (region, binding_values, out_value) = generic_region(f, &b, chain, id, tiles)?;
                let mut regs = Vec::with_capacity(binding_values.len() + 1);
                for v in &binding_values {
                    regs.push(b.buffer(*v)?);
                }
                let out = b.alloc(out_value);
                regs.insert(region_output(&region), out);
                emit_dispatch(&mut b, &region, regs);
                regions.push(region);
            }
            other => {
                return Err(TransformError::NotSupported(format!("{other} cannot be dispatched; lower it first")))
            }
        }
    }
    let host = HostProgram { num_args: f.num_args as u32, ops: b.host };
    Ok(Partitioned { host, regions, constants })
}

fn reads_fill_data(f: &FuncOp, user: usize, v: ValueId) -> bool {
    let op = &f.body[user];
    if op.opcode == Opcode::LinalgGeneric {
        let g = GenericOp::from_op(op).expect("generic");
        // a reading root folds the fill into its init phase
        return op.operands[..g.num_ins].contains(&v);
    }
    reads_data(f, user, v)
}

fn region_output(region: &DispatchRegion) -> usize {
    match &region.body {
        RegionBody::Generic(g) => g.output,
        RegionBody::Copy { dst, .. } => *dst,
    }
}

fn emit_dispatch(b: &mut Builder<'_>, region: &DispatchRegion, bindings: Vec<u32>) {
    let grid = [0, 1, 2].map(|a| b.scalar(&region.grid[a]));
    b.host.push(HostOp::Dispatch { region: region.id, grid, bindings });
}

fn make_region(
    id: u32,
    name: String,
    body: RegionBody,
    bindings: Vec<Binding>,
    extents: &[Option<DimExpr>],
    tiles: &TileConfig,
) -> Result<DispatchRegion, TransformError> {
    let mut region = DispatchRegion {
        id,
        name,
        body,
        tile: TileSpec::untiled(0),
        bindings,
        grid: [DimExpr::Const(1), DimExpr::Const(1), DimExpr::Const(1)],
    };
    let iters = region.iterator_types();
    let tile = tiles.spec(id, &iters);
    tile.validate(&iters)?;
    for (axis, &d) in tile.grid_mapping.iter().enumerate() {
        let size = extents[d].clone().expect("parallel dims have result extents");
        region.grid[axis] = DimExpr::ceil_div(size, DimExpr::Const(tile.tile_sizes[d] as i64));
    }
    region.tile = tile;
    Ok(region)
}

/// Builds the region for `chain`. Returns the region, the values bound to
/// its non-output bindings (in binding order) and the output value.
fn generic_region(
    f: &FuncOp,
    b: &Builder<'_>,
    chain: &Chain,
    id: u32,
    tiles: &TileConfig,
) -> Result<(DispatchRegion, Vec<ValueId>, ValueId), TransformError> {
    let root_op = &f.body[chain.root];
    let root = GenericOp::from_op(root_op).expect("generic");
    let mut values: Vec<ValueId> = Vec::new();
    let mut bindings: Vec<Binding> = Vec::new();
    let bind = |v: ValueId, values: &mut Vec<ValueId>, bindings: &mut Vec<Binding>| -> usize {
        if let Some(k) = values.iter().position(|x| *x == v) {
            return k;
        }
        values.push(v);
        let ty = f.ty(v);
        bindings.push(Binding { elem: ty.elem, rank: ty.rank(), access: Access::Read });
        values.len() - 1
    };
    let ins: Vec<usize> = root_op.operands[..root.num_ins]
        .iter()
        .map(|v| bind(*v, &mut values, &mut bindings))
        .collect();
    let init_value = root_op.operands[root.num_ins];
    let init = if !root.reads_init() {
        RootInit::None
    } else if let Some(bits) = fill_value_bits(f, init_value) {
        RootInit::Fill(bits)
    } else {
        RootInit::Copy(bind(init_value, &mut values, &mut bindings))
    };
    let mut consumers = Vec::new();
    let mut cur = root_op.result();
    for &u in &chain.consumers {
        let op = &f.body[u];
        let g = GenericOp::from_op(op).expect("generic");
        let operands = op
            .operands
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let is_read = k < g.num_ins || g.reads_init();
                if *v == cur {
                    ChainOperand::Intermediate
                } else if is_read {
                    ChainOperand::Binding(bind(*v, &mut values, &mut bindings))
                } else {
                    // shape-only init: the output buffer stands in for it
                    ChainOperand::Intermediate
                }
            })
            .collect();
        consumers.push(FusedConsumer { op: g, operands });
        cur = op.result();
    }
    let out_value = cur;
    let output = bindings.len();
    let access = if root.has_reduction() || root.reads_init() || !consumers.is_empty() {
        Access::ReadWrite
    } else {
        Access::Write
    };
    bindings.push(Binding { elem: f.ty(out_value).elem, rank: f.ty(out_value).rank(), access });
    let extents = parallel_extents(&root, &b.dims[root_op.result().index()]);
    let kinds: String = root
        .iterator_types
        .iter()
        .map(|k| if *k == IteratorKind::Parallel { 'p' } else { 'r' })
        .collect();
    let name = format!("main_dispatch_{id}_generic_{kinds}");
    let g = GenericRegion { root, ins, init, consumers, output };
    let region = make_region(id, name, RegionBody::Generic(g), bindings, &extents, tiles)?;
    Ok((region, values, out_value))
}
