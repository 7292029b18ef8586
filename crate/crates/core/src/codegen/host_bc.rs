//! Host bytecode: same word format as kernels, one instruction per host op.

use crate::ir::{ElementType, MAX_RANK};
use crate::transforms::{HostOp, HostProgram};

use super::words::{pack_bytes, word, Reader};
use super::CodegenError;

pub const HOST_MAGIC: [u8; 4] = *b"THB1";

pub const OP_CONST_I64: u8 = 0x01;
pub const OP_DIM: u8 = 0x02;
pub const OP_MUL: u8 = 0x03;
pub const OP_CEILDIV: u8 = 0x04;
pub const OP_ALLOC_TRANSIENT: u8 = 0x05;
pub const OP_BIND_CONST: u8 = 0x06;
pub const OP_DISPATCH: u8 = 0x07;
pub const OP_RETURN: u8 = 0x08;

/// Host registers are addressed by one operand byte.
pub const MAX_HOST_REGS: u32 = 256;

fn reg(r: u32) -> Result<u8, CodegenError> {
    u8::try_from(r).map_err(|_| CodegenError::TooManyRegisters)
}

fn regs(rs: &[u32]) -> Result<Vec<u8>, CodegenError> {
    rs.iter().map(|r| reg(*r)).collect()
}

/// Encodes `host`. Fails only when a register index does not fit a byte.
pub fn generate_host_bytecode(host: &HostProgram) -> Result<Vec<u8>, CodegenError> {
    let mut w = vec![u32::from_le_bytes(HOST_MAGIC), host.num_args, host.ops.len() as u32];
    for op in &host.ops {
        match op {
            HostOp::ConstI64 { dst, value } => {
                w.push(word(OP_CONST_I64, reg(*dst)?, 0, 0));
                w.push(*value as u64 as u32);
                w.push((*value as u64 >> 32) as u32);
            }
            HostOp::Dim { dst, buf, axis } => w.push(word(OP_DIM, reg(*dst)?, reg(*buf)?, *axis as u8)),
            HostOp::Mul { dst, a, b } => w.push(word(OP_MUL, reg(*dst)?, reg(*a)?, reg(*b)?)),
            HostOp::CeilDiv { dst, a, b } => w.push(word(OP_CEILDIV, reg(*dst)?, reg(*a)?, reg(*b)?)),
            HostOp::AllocTransient { dst, elem, dims } => {
                w.push(word(OP_ALLOC_TRANSIENT, reg(*dst)?, elem.code(), dims.len() as u8));
                w.extend(pack_bytes(&regs(dims)?));
            }
            HostOp::BindConstant { dst, ordinal } => {
                w.push(word(OP_BIND_CONST, reg(*dst)?, 0, 0));
                w.push(*ordinal);
            }
            HostOp::Dispatch { region, grid, bindings } => {
                w.push(word(OP_DISPATCH, reg(grid[0])?, reg(grid[1])?, reg(grid[2])?));
                w.push(*region);
                w.push(bindings.len() as u32);
                w.extend(pack_bytes(&regs(bindings)?));
            }
            HostOp::Return { results } => {
                w.push(word(OP_RETURN, 0, 0, 0));
                w.push(results.len() as u32);
                w.extend(pack_bytes(&regs(results)?));
            }
        }
    }
    Ok(w.iter().flat_map(|x| x.to_le_bytes()).collect())
}

/// Incremental decoder: the interpreter pulls one instruction at a time.
pub struct HostBytecodeReader<'a> {
    r: Reader<'a>,
    pub num_args: u32,
    pub num_ops: u32,
}

impl<'a> HostBytecodeReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self, CodegenError> {
        let mut r = Reader::new(bytes)?;
        if r.bytes()? != HOST_MAGIC {
            return Err(CodegenError::MalformedBytecode("bad host magic".into()));
        }
        let num_args = r.u32()?;
        let num_ops = r.u32()?;
        Ok(Self { r, num_args, num_ops })
    }

    /// Word offset of the next instruction.
    pub fn pc(&self) -> usize {
        self.r.position()
    }

    pub fn next_op(&mut self) -> Result<HostOp, CodegenError> {
        let bad = |m: String| CodegenError::MalformedBytecode(m);
        let [opc, a, b, c] = self.r.bytes()?;
        let (a32, b32, c32) = (a as u32, b as u32, c as u32);
        Ok(match opc {
            OP_CONST_I64 => {
                let lo = self.r.u32()? as u64;
                let hi = self.r.u32()? as u64;
                HostOp::ConstI64 { dst: a32, value: (lo | hi << 32) as i64 }
            }
            OP_DIM => HostOp::Dim { dst: a32, buf: b32, axis: c32 },
            OP_MUL => HostOp::Mul { dst: a32, a: b32, b: c32 },
            OP_CEILDIV => HostOp::CeilDiv { dst: a32, a: b32, b: c32 },
            OP_ALLOC_TRANSIENT => {
                let elem = ElementType::from_code(b).ok_or_else(|| bad(format!("bad element type {b}")))?;
                if c as usize > MAX_RANK {
                    return Err(bad(format!("rank {c} exceeds {MAX_RANK}")));
                }
                let dims = self.r.packed(c as usize)?.into_iter().map(u32::from).collect();
                HostOp::AllocTransient { dst: a32, elem, dims }
            }
            OP_BIND_CONST => HostOp::BindConstant { dst: a32, ordinal: self.r.u32()? },
            OP_DISPATCH => {
                let region = self.r.u32()?;
                let n = self.r.u32()? as usize;
                let bindings = self.r.packed(n)?.into_iter().map(u32::from).collect();
                HostOp::Dispatch { region, grid: [a32, b32, c32], bindings }
            }
            OP_RETURN => {
                let n = self.r.u32()? as usize;
                HostOp::Return { results: self.r.packed(n)?.into_iter().map(u32::from).collect() }
            }
            _ => return Err(bad(format!("bad host opcode 0x{opc:02X} at word {}", self.pc() - 1))),
        })
    }
}

/// Decodes a whole host program and checks register safety.
pub fn decode_host_bytecode(bytes: &[u8]) -> Result<HostProgram, CodegenError> {
    let mut r = HostBytecodeReader::new(bytes)?;
    let mut ops = Vec::new();
    for _ in 0..r.num_ops {
        ops.push(r.next_op()?);
    }
    if r.r.remaining() != 0 {
        return Err(CodegenError::MalformedBytecode("trailing words after the last op".into()));
    }
    let host = HostProgram { num_args: r.num_args, ops };
    host.check_registers().map_err(|e| CodegenError::MalformedBytecode(e.to_string()))?;
    Ok(host)
}
