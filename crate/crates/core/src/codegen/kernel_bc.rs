//! Kernel bytecode: 32-bit little-endian words, each an opcode byte followed
//! by three operand bytes. Immediates and index lists ride in extension
//! words after their instruction.

use crate::ir::{BinaryOp, ElementType, IteratorKind};
use crate::transforms::{Access, Binding};

use super::kernel::{Extent, Index, KDim, KOp, LoopNestKernel, Reg, Stage, MAX_REGS};
use super::words::{pack_bytes, word, Reader};
use super::CodegenError;

pub const KERNEL_MAGIC: [u8; 4] = *b"TKB1";

const OP_BIND: u8 = 0x01;
const OP_DIM: u8 = 0x02;
const OP_CHECK: u8 = 0x03;
const OP_STAGE: u8 = 0x04;
const OP_EPILOGUE: u8 = 0x05;
const OP_END_STAGE: u8 = 0x06;
const OP_END: u8 = 0x07;
const OP_LOAD: u8 = 0x10;
const OP_STORE: u8 = 0x11;
const OP_VLOAD: u8 = 0x12;
const OP_VSTORE: u8 = 0x13;
const OP_SPLAT: u8 = 0x14;
// the element type code is added to these
const OP_CONST: u8 = 0x18;
// plus op code * 4 + element type code
const OP_BIN: u8 = 0x40;
const OP_VBIN: u8 = 0x80;

const FLAT: u8 = 0xFF;
const NO_AXIS: u8 = 0xFF;

fn extent_word(e: Extent) -> u32 {
    match e {
        Extent::Axis { binding, axis } => word(0, binding, axis, 0),
        Extent::Numel { binding } => word(1, binding, 0, 0),
    }
}

fn kind_code(k: IteratorKind) -> u8 {
    match k {
        IteratorKind::Parallel => 0,
        IteratorKind::Reduction => 1,
    }
}

fn emit_access(out: &mut Vec<u32>, opcode: u8, reg: Reg, binding: u8, index: &Index) {
    match index {
        Index::Map(m) => {
            out.push(word(opcode, reg, binding, m.len() as u8));
            out.extend(pack_bytes(m));
        }
        Index::Flat(d) => {
            out.push(word(opcode, reg, binding, FLAT));
            out.push(word(*d, 0, 0, 0));
        }
    }
}

/// Serializes `kernel` (without its name) to deterministic bytes.
pub fn serialize_kernel(kernel: &LoopNestKernel) -> Vec<u8> {
    let mut consts: Vec<u32> = Vec::new();
    let mut code: Vec<u32> = Vec::new();
    for b in &kernel.bindings {
        code.push(word(OP_BIND, b.elem.code(), b.rank as u8, b.access.code()));
    }
    for d in &kernel.dims {
        code.push(word(OP_DIM, kind_code(d.kind), d.grid_axis.unwrap_or(NO_AXIS), 0));
        code.push(extent_word(d.extent));
        code.push(d.tile);
    }
    for (a, b) in &kernel.checks {
        code.push(word(OP_CHECK, 0, 0, 0));
        code.push(extent_word(*a));
        code.push(extent_word(*b));
    }
    for s in &kernel.stages {
        code.push(word(OP_STAGE, s.loops.len() as u8, u8::from(s.epilogue.is_some()), 0));
        code.extend(pack_bytes(&s.loops));
        let mut ops = |body: &[KOp], code: &mut Vec<u32>| {
            for op in body {
                match op {
                    KOp::Load { dst, binding, index } => emit_access(code, OP_LOAD, *dst, *binding, index),
                    KOp::Store { src, binding, index } => emit_access(code, OP_STORE, *src, *binding, index),
                    KOp::VLoad { dst, binding, index } => emit_access(code, OP_VLOAD, *dst, *binding, index),
                    KOp::VStore { src, binding, index } => emit_access(code, OP_VSTORE, *src, *binding, index),
                    KOp::Splat { dst, src } => code.push(word(OP_SPLAT, *dst, *src, 0)),
                    KOp::Const { dst, ty, bits } => {
                        let slot = consts.iter().position(|c| c == bits).unwrap_or_else(|| {
                            consts.push(*bits);
                            consts.len() - 1
                        }) as u16;
                        let [lo, hi] = slot.to_le_bytes();
                        code.push(word(OP_CONST + ty.code(), *dst, lo, hi));
                    }
                    KOp::Bin { dst, op, ty, a, b } => code.push(word(OP_BIN + op.code() * 4 + ty.code(), *dst, *a, *b)),
                    KOp::VBin { dst, op, ty, a, b } => code.push(word(OP_VBIN + op.code() * 4 + ty.code(), *dst, *a, *b)),
                }
            }
        };
        ops(&s.body, &mut code);
        if let Some(ep) = &s.epilogue {
            code.push(word(OP_EPILOGUE, 0, 0, 0));
            ops(ep, &mut code);
        }
        code.push(word(OP_END_STAGE, 0, 0, 0));
    }
    code.push(word(OP_END, 0, 0, 0));

    let mut words = vec![
        u32::from_le_bytes(KERNEL_MAGIC),
        word(kernel.bindings.len() as u8, kernel.dims.len() as u8, kernel.checks.len() as u8, kernel.stages.len() as u8),
        kernel.num_regs as u32,
        consts.len() as u32,
    ];
    words.extend(consts);
    words.extend(code);
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

fn malformed(msg: impl Into<String>) -> CodegenError {
    CodegenError::MalformedBytecode(msg.into())
}

struct KernelReader<'a> {
    r: Reader<'a>,
    num_regs: usize,
    num_bindings: usize,
    ranks: Vec<usize>,
    num_dims: usize,
    consts: Vec<u32>,
}

impl KernelReader<'_> {
    fn reg(&self, r: u8) -> Result<Reg, CodegenError> {
        if (r as usize) < self.num_regs {
            Ok(r)
        } else {
            Err(malformed(format!("register r{r} outside a file of {}", self.num_regs)))
        }
    }

    fn binding(&self, b: u8) -> Result<u8, CodegenError> {
        if (b as usize) < self.num_bindings {
            Ok(b)
        } else {
            Err(malformed(format!("binding {b} out of range")))
        }
    }

    fn dim(&self, d: u8) -> Result<u8, CodegenError> {
        if (d as usize) < self.num_dims {
            Ok(d)
        } else {
            Err(malformed(format!("iteration dim {d} out of range")))
        }
    }

    fn extent(&mut self) -> Result<Extent, CodegenError> {
        let [kind, b, axis, _] = self.r.bytes()?;
        let binding = self.binding(b)?;
        match kind {
            0 if (axis as usize) < self.ranks[b as usize] => Ok(Extent::Axis { binding, axis }),
            1 => Ok(Extent::Numel { binding }),
            _ => Err(malformed("bad extent word")),
        }
    }

    fn index(&mut self, binding: u8, n: u8) -> Result<Index, CodegenError> {
        if n == FLAT {
            let [d, ..] = self.r.bytes()?;
            return Ok(Index::Flat(self.dim(d)?));
        }
        if n as usize != self.ranks[binding as usize] {
            return Err(malformed(format!("index of length {n} for binding {binding}")));
        }
        let ds = self.r.packed(n as usize)?;
        ds.iter().map(|&d| self.dim(d)).collect::<Result<_, _>>().map(Index::Map)
    }

    /// Reads ops up to (not including) `OP_EPILOGUE` or `OP_END_STAGE`.
    fn ops(&mut self) -> Result<(Vec<KOp>, u8), CodegenError> {
        let mut ops = Vec::new();
        loop {
            let [opc, x, y, z] = self.r.bytes()?;
            let op = match opc {
                OP_EPILOGUE | OP_END_STAGE => return Ok((ops, opc)),
                OP_LOAD | OP_STORE | OP_VLOAD | OP_VSTORE => {
                    let (reg, binding) = (self.reg(x)?, self.binding(y)?);
                    let index = self.index(binding, z)?;
                    match opc {
                        OP_LOAD => KOp::Load { dst: reg, binding, index },
                        OP_STORE => KOp::Store { src: reg, binding, index },
                        OP_VLOAD => KOp::VLoad { dst: reg, binding, index },
                        _ => KOp::VStore { src: reg, binding, index },
                    }
                }
                OP_SPLAT => KOp::Splat { dst: self.reg(x)?, src: self.reg(y)? },
                _ if (OP_CONST..OP_CONST + 3).contains(&opc) => {
                    let slot = u16::from_le_bytes([y, z]) as usize;
                    let bits = *self.consts.get(slot).ok_or_else(|| malformed("constant slot out of range"))?;
                    KOp::Const { dst: self.reg(x)?, ty: ElementType::from_code(opc - OP_CONST).expect("range"), bits }
                }
                _ if opc >= OP_BIN => {
                    let base = if opc >= OP_VBIN { OP_VBIN } else { OP_BIN };
                    let code = opc - base;
                    let (Some(op), Some(ty)) = (BinaryOp::from_code(code / 4), ElementType::from_code(code % 4)) else {
                        return Err(malformed(format!("bad opcode 0x{opc:02X}")));
                    };
                    let (dst, a, b) = (self.reg(x)?, self.reg(y)?, self.reg(z)?);
                    if base == OP_VBIN {
                        KOp::VBin { dst, op, ty, a, b }
                    } else {
                        KOp::Bin { dst, op, ty, a, b }
                    }
                }
                _ => return Err(malformed(format!("bad opcode 0x{opc:02X}"))),
            };
            ops.push(op);
        }
    }
}

/// Inverse of [`serialize_kernel`]. The kernel name is left empty.
pub fn deserialize_kernel(bytes: &[u8]) -> Result<LoopNestKernel, CodegenError> {
    let mut r = Reader::new(bytes)?;
    if r.bytes()? != KERNEL_MAGIC {
        return Err(malformed("bad kernel magic"));
    }
    let [nb, nd, nc, ns] = r.bytes()?;
    let num_regs = r.u32()? as usize;
    if num_regs > MAX_REGS {
        return Err(malformed(format!("{num_regs} registers exceed the {MAX_REGS}-entry file")));
    }
    let nconst = r.u32()? as usize;
    if nconst > r.remaining() {
        return Err(malformed("constant table runs past the end"));
    }
    let consts = (0..nconst).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    let mut k = KernelReader { r, num_regs, num_bindings: nb as usize, ranks: vec![], num_dims: nd as usize, consts };

    let mut bindings = Vec::with_capacity(nb as usize);
    for _ in 0..nb {
        let [opc, elem, rank, access] = k.r.bytes()?;
        let (Some(elem), Some(access)) = (ElementType::from_code(elem), Access::from_code(access)) else {
            return Err(malformed("bad binding descriptor"));
        };
        if opc != OP_BIND || rank as usize > crate::ir::MAX_RANK {
            return Err(malformed("bad binding descriptor"));
        }
        k.ranks.push(rank as usize);
        bindings.push(Binding { elem, rank: rank as usize, access });
    }
    let mut dims = Vec::with_capacity(nd as usize);
    for _ in 0..nd {
        let [opc, kind, axis, _] = k.r.bytes()?;
        let kind = match (opc, kind) {
            (OP_DIM, 0) => IteratorKind::Parallel,
            (OP_DIM, 1) => IteratorKind::Reduction,
            _ => return Err(malformed("bad dim descriptor")),
        };
        let grid_axis = match axis {
            NO_AXIS => None,
            0..=2 => Some(axis),
            _ => return Err(malformed("grid axis out of range")),
        };
        let extent = k.extent()?;
        let tile = k.r.u32()?;
        dims.push(KDim { kind, extent, tile, grid_axis });
    }
    let mut checks = Vec::with_capacity(nc as usize);
    for _ in 0..nc {
        if k.r.bytes()?[0] != OP_CHECK {
            return Err(malformed("expected a shape check"));
        }
        checks.push((k.extent()?, k.extent()?));
    }
    let mut stages = Vec::with_capacity(ns as usize);
    for _ in 0..ns {
        let [opc, nloops, vector, _] = k.r.bytes()?;
        if opc != OP_STAGE || vector > 1 {
            return Err(malformed("expected a stage header"));
        }
        let loops = k.r.packed(nloops as usize)?;
        for &d in &loops {
            k.dim(d)?;
        }
        let (body, end) = k.ops()?;
        let epilogue = match (vector, end) {
            (1, OP_EPILOGUE) => {
                let (ep, end) = k.ops()?;
                if end != OP_END_STAGE {
                    return Err(malformed("stage has two epilogues"));
                }
                Some(ep)
            }
            (0, OP_END_STAGE) => None,
            _ => return Err(malformed("epilogue marker disagrees with stage header")),
        };
        stages.push(Stage { loops, body, epilogue });
    }
    if k.r.bytes()?[0] != OP_END {
        return Err(malformed("missing END"));
    }
    if k.r.remaining() != 0 {
        return Err(malformed("trailing words after END"));
    }
    Ok(LoopNestKernel { name: String::new(), bindings, dims, checks, stages, num_regs: num_regs as u16 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::kernel::tests::kernels;
    use crate::codegen::vectorize;
    use crate::transforms::TileConfig;

    const MATMUL: &str = "module { func @main(%a: tensor<?x?xf32>, %b: tensor<?x?xf32>) -> (tensor<?x?xf32>) {
        %0 = fe.matmul(%a, %b) : (tensor<?x?xf32>, tensor<?x?xf32>) -> tensor<?x?xf32>
        return %0 : tensor<?x?xf32>
    } }";

    #[test]
    fn round_trip() {
        let k = kernels(MATMUL, &TileConfig::default()).remove(0);
        for k in [k.clone(), vectorize(&k, 4)] {
            let bytes = serialize_kernel(&k);
            assert_eq!(&bytes[..4], b"TKB1");
            let mut back = deserialize_kernel(&bytes).unwrap();
            back.name = k.name.clone();
            assert_eq!(back, k);
            assert_eq!(serialize_kernel(&back), bytes);
        }
    }

    #[test]
    fn truncation_and_bad_opcodes() {
        let bytes = serialize_kernel(&kernels(MATMUL, &TileConfig::default())[0]);
        for cut in [0, 3, 4, 17, bytes.len() - 4] {
            assert!(matches!(deserialize_kernel(&bytes[..cut]), Err(CodegenError::MalformedBytecode(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        let end = bad.len() - 4;
        bad[end] = 0x3F;
        assert!(matches!(deserialize_kernel(&bad), Err(CodegenError::MalformedBytecode(_))));
    }

    #[test]
    fn register_overflow_rejected() {
        let mut k = kernels(MATMUL, &TileConfig::default()).remove(0);
        k.num_regs = 1;
        assert!(matches!(deserialize_kernel(&serialize_kernel(&k)), Err(CodegenError::MalformedBytecode(m)) if m.contains("register")));
    }
}
