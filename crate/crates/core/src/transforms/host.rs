use std::fmt;

use thiserror::Error;

use crate::ir::ElementType;

/// Straight-line host program over scalar (`s`) and buffer (`b`) registers.
/// Buffer registers `b0..b{num_args}` hold the entry arguments on entry.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct HostProgram {
    pub num_args: u32,
    pub ops: Vec<HostOp>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum HostOp {
    ConstI64 { dst: u32, value: i64 },
    /// Runtime extent of `axis` of the buffer in `buf`.
    Dim { dst: u32, buf: u32, axis: u32 },
    Mul { dst: u32, a: u32, b: u32 },
    CeilDiv { dst: u32, a: u32, b: u32 },
    AllocTransient { dst: u32, elem: ElementType, dims: Vec<u32> },
    BindConstant { dst: u32, ordinal: u32 },
    Dispatch { region: u32, grid: [u32; 3], bindings: Vec<u32> },
    Return { results: Vec<u32> },
}

impl HostOp {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            HostOp::ConstI64 { .. } => "CONST_I64",
            HostOp::Dim { .. } => "DIM",
            HostOp::Mul { .. } => "MUL",
            HostOp::CeilDiv { .. } => "CEILDIV",
            HostOp::AllocTransient { .. } => "ALLOC_TRANSIENT",
            HostOp::BindConstant { .. } => "BIND_CONST",
            HostOp::Dispatch { .. } => "DISPATCH",
            HostOp::Return { .. } => "RETURN",
        }
    }

    /// (scalar registers read, buffer registers read)
    pub fn reads(&self) -> (Vec<u32>, Vec<u32>) {
        match self {
            HostOp::ConstI64 { .. } | HostOp::BindConstant { .. } => (vec![], vec![]),
            HostOp::Dim { buf, .. } => (vec![], vec![*buf]),
            HostOp::Mul { a, b, .. } | HostOp::CeilDiv { a, b, .. } => (vec![*a, *b], vec![]),
            HostOp::AllocTransient { dims, .. } => (dims.clone(), vec![]),
            HostOp::Dispatch { grid, bindings, .. } => (grid.to_vec(), bindings.clone()),
            HostOp::Return { results } => (vec![], results.clone()),
        }
    }

    /// (scalar register written, buffer register written)
    pub fn writes(&self) -> (Option<u32>, Option<u32>) {
        match self {
            HostOp::ConstI64 { dst, .. }
            | HostOp::Dim { dst, .. }
            | HostOp::Mul { dst, .. }
            | HostOp::CeilDiv { dst, .. } => (Some(*dst), None),
            HostOp::AllocTransient { dst, .. } | HostOp::BindConstant { dst, .. } => (None, Some(*dst)),
            HostOp::Dispatch { .. } | HostOp::Return { .. } => (None, None),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HostProgramError {
    #[error("op {op}: {kind} register {reg} read before it is written")]
    UnwrittenRegister { op: usize, kind: &'static str, reg: u32 },
    #[error("program must end with exactly one RETURN")]
    MissingReturn,
}

impl HostProgram {
    /// Linear scan: every register is written before it is read and the
    /// program ends in its only `RETURN`.
    pub fn check_registers(&self) -> Result<(), HostProgramError> {
        let mut scalars = std::collections::HashSet::new();
        let mut buffers: std::collections::HashSet<u32> = (0..self.num_args).collect();
        let returns = self.ops.iter().filter(|op| matches!(op, HostOp::Return { .. })).count();
        if returns != 1 || !matches!(self.ops.last(), Some(HostOp::Return { .. })) {
            return Err(HostProgramError::MissingReturn);
        }
        for (i, op) in self.ops.iter().enumerate() {
            let (s, b) = op.reads();
            if let Some(&reg) = s.iter().find(|r| !scalars.contains(*r)) {
                return Err(HostProgramError::UnwrittenRegister { op: i, kind: "scalar", reg });
            }
            if let Some(&reg) = b.iter().find(|r| !buffers.contains(*r)) {
                return Err(HostProgramError::UnwrittenRegister { op: i, kind: "buffer", reg });
            }
            let (ws, wb) = op.writes();
            scalars.extend(ws);
            buffers.extend(wb);
        }
        Ok(())
    }

    pub fn num_scalar_regs(&self) -> u32 {
        self.ops.iter().filter_map(|op| op.writes().0).map(|r| r + 1).max().unwrap_or(0)
    }

    pub fn num_buffer_regs(&self) -> u32 {
        self.ops
            .iter()
            .filter_map(|op| op.writes().1)
            .map(|r| r + 1)
            .max()
            .unwrap_or(0)
            .max(self.num_args)
    }

    pub fn dispatch_count(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, HostOp::Dispatch { .. })).count()
    }
}

fn regs(prefix: char, rs: &[u32]) -> String {
    rs.iter().map(|r| format!("%{prefix}{r}")).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for HostOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HostOp::ConstI64 { dst, value } => write!(f, "%s{dst} = vm.const_i64 {value}"),
            HostOp::Dim { dst, buf, axis } => write!(f, "%s{dst} = vm.dim %b{buf}, {axis}"),
            HostOp::Mul { dst, a, b } => write!(f, "%s{dst} = vm.mul %s{a}, %s{b}"),
            HostOp::CeilDiv { dst, a, b } => write!(f, "%s{dst} = vm.ceildiv %s{a}, %s{b}"),
            HostOp::AllocTransient { dst, elem, dims } => {
                write!(f, "%b{dst} = vm.alloc_transient {elem} [{}]", regs('s', dims))
            }
            HostOp::BindConstant { dst, ordinal } => write!(f, "%b{dst} = vm.bind_const {ordinal}"),
            HostOp::Dispatch { region, grid, bindings } => write!(
                f,
                "vm.dispatch @{region} grid({}) bindings({})",
                regs('s', grid),
                regs('b', bindings)
            ),
            HostOp::Return { results } => {
                f.write_str("vm.return")?;
                if !results.is_empty() {
                    write!(f, " {}", regs('b', results))?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for HostProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "vm.func @main(args = {}) {{", self.num_args)?;
        for op in &self.ops {
            writeln!(f, "  {op}")?;
        }
        writeln!(f, "}}")
    }
}
