//! SSA program representation shared by every dialect level.
//!
//! A [`ProgramModule`] holds functions; each [`FuncOp`] owns a flat list of
//! [`Operation`]s terminated by `return`. Values are dense per function:
//! arguments take ids `0..num_args`, op results follow in definition order.

mod affine;
mod body;
mod shape;
mod types;
mod verify;

use std::collections::BTreeMap;
use std::fmt;

pub use affine::{AffineMap, IteratorKind};
pub use body::{load_bits, max_f32, store_bits, BinaryOp, ScalarBody, ScalarOp};
pub use shape::{shape_infer, ShapeError};
pub use types::{Dim, ElementType, TensorType, MAX_RANK};
pub use verify::{verify_module, DiagKind, Diagnostic};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

impl ValueId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct SourceLocation {
    pub line: u32,
    pub column: u32,
}

impl fmt::Display for SourceLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Opcode {
    FeAdd,
    FeSub,
    FeMul,
    FeMax,
    FeBroadcast,
    FeMatmul,
    FeConv2d,
    FeConstant,
    FeReduceSum,
    /// Row-major reinterpretation; shared by the frontend and linalg levels.
    TensorReshape,
    LinalgGeneric,
    LinalgFill,
    Return,
}

impl Opcode {
    pub const ALL: [Opcode; 13] = [
        Opcode::FeAdd,
        Opcode::FeSub,
        Opcode::FeMul,
        Opcode::FeMax,
        Opcode::FeBroadcast,
        Opcode::FeMatmul,
        Opcode::FeConv2d,
        Opcode::FeConstant,
        Opcode::FeReduceSum,
        Opcode::TensorReshape,
        Opcode::LinalgGeneric,
        Opcode::LinalgFill,
        Opcode::Return,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Opcode::FeAdd => "fe.add",
            Opcode::FeSub => "fe.sub",
            Opcode::FeMul => "fe.mul",
            Opcode::FeMax => "fe.max",
            Opcode::FeBroadcast => "fe.broadcast",
            Opcode::FeMatmul => "fe.matmul",
            Opcode::FeConv2d => "fe.conv2d",
            Opcode::FeConstant => "fe.constant",
            Opcode::FeReduceSum => "fe.reduce_sum",
            Opcode::TensorReshape => "tensor.reshape",
            Opcode::LinalgGeneric => "linalg.generic",
            Opcode::LinalgFill => "linalg.fill",
            Opcode::Return => "return",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Opcode::ALL.into_iter().find(|op| op.name() == name)
    }

    /// Element-wise binary frontend op, with its scalar counterpart.
    pub fn elementwise(self) -> Option<BinaryOp> {
        match self {
            Opcode::FeAdd => Some(BinaryOp::Add),
            Opcode::FeSub => Some(BinaryOp::Sub),
            Opcode::FeMul => Some(BinaryOp::Mul),
            Opcode::FeMax => Some(BinaryOp::Max),
            _ => None,
        }
    }

    /// Fixed operand count, or `None` when variadic.
    pub fn arity(self) -> Option<usize> {
        match self {
            Opcode::FeAdd | Opcode::FeSub | Opcode::FeMul | Opcode::FeMax => Some(2),
            Opcode::FeBroadcast | Opcode::FeMatmul | Opcode::FeConv2d => Some(2),
            Opcode::FeConstant => Some(0),
            Opcode::FeReduceSum | Opcode::TensorReshape => Some(1),
            Opcode::LinalgGeneric | Opcode::LinalgFill | Opcode::Return => None,
        }
    }

    pub fn is_frontend(self) -> bool {
        self.name().starts_with("fe.")
    }

    pub fn is_pure(self) -> bool {
        self != Opcode::Return
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Attr {
    Int(i64),
    Ints(Vec<i64>),
    Maps(Vec<AffineMap>),
    Iterators(Vec<IteratorKind>),
    /// Raw little-endian element payload.
    Blob(Vec<u8>),
}

/// Attribute keys, kept sorted for deterministic printing.
pub type Attrs = BTreeMap<String, Attr>;

#[derive(Clone, Debug)]
pub struct Operation {
    pub opcode: Opcode,
    pub operands: Vec<ValueId>,
    pub results: Vec<ValueId>,
    pub attrs: Attrs,
    /// Scalar region; only `linalg.generic` carries one.
    pub body: Option<ScalarBody>,
    pub loc: Option<SourceLocation>,
}

// Locations are not part of an op's identity.
impl PartialEq for Operation {
    fn eq(&self, other: &Self) -> bool {
        self.opcode == other.opcode
            && self.operands == other.operands
            && self.results == other.results
            && self.attrs == other.attrs
            && self.body == other.body
    }
}

impl Eq for Operation {}

impl Operation {
    pub fn new(opcode: Opcode, operands: Vec<ValueId>, results: Vec<ValueId>) -> Self {
        Self { opcode, operands, results, attrs: Attrs::new(), body: None, loc: None }
    }

    pub fn with_attr(mut self, key: &str, value: Attr) -> Self {
        self.attrs.insert(key.to_string(), value);
        self
    }

    pub fn int_attr(&self, key: &str) -> Option<i64> {
        match self.attrs.get(key) {
            Some(Attr::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn ints_attr(&self, key: &str) -> Option<&[i64]> {
        match self.attrs.get(key) {
            Some(Attr::Ints(v)) => Some(v),
            _ => None,
        }
    }

    pub fn maps_attr(&self, key: &str) -> Option<&[AffineMap]> {
        match self.attrs.get(key) {
            Some(Attr::Maps(v)) => Some(v),
            _ => None,
        }
    }

    pub fn iterators_attr(&self, key: &str) -> Option<&[IteratorKind]> {
        match self.attrs.get(key) {
            Some(Attr::Iterators(v)) => Some(v),
            _ => None,
        }
    }

    pub fn blob_attr(&self, key: &str) -> Option<&[u8]> {
        match self.attrs.get(key) {
            Some(Attr::Blob(v)) => Some(v),
            _ => None,
        }
    }

    pub fn result(&self) -> ValueId {
        self.results[0]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuncOp {
    pub name: String,
    pub num_args: usize,
    pub result_types: Vec<TensorType>,
    /// Ops in program order; the last one is `return`.
    pub body: Vec<Operation>,
    /// Type of every value, indexed by `ValueId`.
    pub value_types: Vec<TensorType>,
}

impl FuncOp {
    pub fn arg_types(&self) -> &[TensorType] {
        &self.value_types[..self.num_args.min(self.value_types.len())]
    }

    pub fn args(&self) -> impl Iterator<Item = ValueId> {
        (0..self.num_args as u32).map(ValueId)
    }

    pub fn ty(&self, v: ValueId) -> &TensorType {
        &self.value_types[v.index()]
    }

    pub fn return_op(&self) -> Option<&Operation> {
        self.body.last().filter(|op| op.opcode == Opcode::Return)
    }

    pub fn returned_values(&self) -> &[ValueId] {
        self.return_op().map(|op| op.operands.as_slice()).unwrap_or(&[])
    }

    /// Index of the op defining `v`, or `None` for arguments.
    pub fn defining_op(&self, v: ValueId) -> Option<usize> {
        self.body.iter().position(|op| op.results.contains(&v))
    }

    /// Number of uses of each value (by position in `value_types`).
    pub fn use_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.value_types.len()];
        for op in &self.body {
            for v in &op.operands {
                if let Some(c) = counts.get_mut(v.index()) {
                    *c += 1;
                }
            }
        }
        counts
    }

    /// Replaces every use of `from` with `to`.
    pub fn replace_uses(&mut self, from: ValueId, to: ValueId) {
        for op in &mut self.body {
            for v in &mut op.operands {
                if *v == from {
                    *v = to;
                }
            }
        }
    }

    /// Reassigns value ids densely in definition order and drops stale types.
    pub fn compact(&mut self) {
        let mut remap: Vec<Option<ValueId>> = vec![None; self.value_types.len()];
        let mut types = Vec::with_capacity(self.value_types.len());
        for a in 0..self.num_args {
            remap[a] = Some(ValueId(a as u32));
            types.push(self.value_types[a].clone());
        }
        for op in &mut self.body {
            for v in &mut op.operands {
                if let Some(Some(n)) = remap.get(v.index()) {
                    *v = *n;
                }
            }
            for r in &mut op.results {
                let n = ValueId(types.len() as u32);
                types.push(self.value_types[r.index()].clone());
                remap[r.index()] = Some(n);
                *r = n;
            }
        }
        self.value_types = types;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ProgramModule {
    pub funcs: Vec<FuncOp>,
}

impl ProgramModule {
    pub fn new(funcs: Vec<FuncOp>) -> Self {
        Self { funcs }
    }

    pub fn main(&self) -> Option<&FuncOp> {
        self.funcs.iter().find(|f| f.name == "main")
    }

    pub fn main_mut(&mut self) -> Option<&mut FuncOp> {
        self.funcs.iter_mut().find(|f| f.name == "main")
    }

    pub fn op_count(&self) -> usize {
        self.funcs.iter().map(|f| f.body.len()).sum()
    }
}

/// Incremental construction of a single function.
#[derive(Debug)]
pub struct FuncBuilder {
    func: FuncOp,
}

impl FuncBuilder {
    pub fn new(name: &str, arg_types: Vec<TensorType>) -> Self {
        let num_args = arg_types.len();
        Self {
            func: FuncOp {
                name: name.to_string(),
                num_args,
                result_types: vec![],
                body: vec![],
                value_types: arg_types,
            },
        }
    }

    pub fn arg(&self, i: usize) -> ValueId {
        assert!(i < self.func.num_args);
        ValueId(i as u32)
    }

    pub fn ty(&self, v: ValueId) -> &TensorType {
        self.func.ty(v)
    }

    pub fn new_value(&mut self, ty: TensorType) -> ValueId {
        self.func.value_types.push(ty);
        ValueId(self.func.value_types.len() as u32 - 1)
    }

    /// Appends `op` with a fresh result of type `ty`.
    pub fn push(&mut self, mut op: Operation, ty: TensorType) -> ValueId {
        let v = self.new_value(ty);
        op.results = vec![v];
        self.func.body.push(op);
        v
    }

    /// Appends an op whose result type is inferred from its operands.
    pub fn build(
        &mut self,
        opcode: Opcode,
        operands: &[ValueId],
        attrs: Attrs,
        declared: Option<TensorType>,
    ) -> Result<ValueId, ShapeError> {
        let mut op = Operation::new(opcode, operands.to_vec(), vec![]);
        op.attrs = attrs;
        let operand_types: Vec<TensorType> = operands.iter().map(|v| self.ty(*v).clone()).collect();
        let ty = shape_infer(&op, &operand_types, declared.as_ref())?;
        Ok(self.push(op, ty))
    }

    pub fn binary(&mut self, opcode: Opcode, a: ValueId, b: ValueId) -> Result<ValueId, ShapeError> {
        self.build(opcode, &[a, b], Attrs::new(), None)
    }

    pub fn finish(mut self, results: &[ValueId]) -> FuncOp {
        self.func.result_types = results.iter().map(|v| self.func.ty(*v).clone()).collect();
        self.func
            .body
            .push(Operation::new(Opcode::Return, results.to_vec(), vec![]));
        self.func
    }
}

pub fn attrs<const N: usize>(items: [(&str, Attr); N]) -> Attrs {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
