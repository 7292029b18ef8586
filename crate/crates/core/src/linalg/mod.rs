//! The loop-level dialect: `linalg.generic` ops described by iterator kinds,
//! projected-permutation indexing maps and a scalar body.

mod eval;
mod lower;

use thiserror::Error;

use crate::ir::{
    Attr, ElementType, IteratorKind, Opcode, Operation, ScalarBody, TensorType, ValueId,
};

pub use crate::ir::AffineMap;
pub(crate) use eval::fill_bits;
pub use eval::{evaluate_generic, evaluate_module, resolve_iteration_space, IterationSpace};
pub use lower::lower_to_linalg;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinalgError {
    #[error("not supported: {0}")]
    NotSupported(String),
    #[error("inconsistent shapes: {0}")]
    InconsistentShapes(String),
    #[error("module has no @main")]
    NoMain,
}

/// Typed view of a `linalg.generic` op. Operands are `ins` followed by one
/// `outs` operand; the op's single result has the `outs` type.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GenericOp {
    pub iterator_types: Vec<IteratorKind>,
    /// One map per `ins` operand, then the `outs` map.
    pub indexing_maps: Vec<AffineMap>,
    pub num_ins: usize,
    pub body: ScalarBody,
}

impl GenericOp {
    pub fn from_op(op: &Operation) -> Option<GenericOp> {
        if op.opcode != Opcode::LinalgGeneric || op.operands.is_empty() {
            return None;
        }
        Some(GenericOp {
            iterator_types: op.iterators_attr("iterator_types")?.to_vec(),
            indexing_maps: op.maps_attr("indexing_maps")?.to_vec(),
            num_ins: op.operands.len() - 1,
            body: op.body.clone()?,
        })
    }

    pub fn to_op(&self, ins: &[ValueId], out: ValueId, result: ValueId) -> Operation {
        debug_assert_eq!(ins.len(), self.num_ins);
        let mut operands = ins.to_vec();
        operands.push(out);
        let mut op = Operation::new(Opcode::LinalgGeneric, operands, vec![result])
            .with_attr("indexing_maps", Attr::Maps(self.indexing_maps.clone()))
            .with_attr("iterator_types", Attr::Iterators(self.iterator_types.clone()));
        op.body = Some(self.body.clone());
        op
    }

    pub fn num_dims(&self) -> usize {
        self.iterator_types.len()
    }

    pub fn out_map(&self) -> &AffineMap {
        &self.indexing_maps[self.num_ins]
    }

    pub fn is_all_parallel(&self) -> bool {
        self.iterator_types.iter().all(|k| *k == IteratorKind::Parallel)
    }

    pub fn parallel_dims(&self) -> Vec<usize> {
        (0..self.num_dims())
            .filter(|&d| self.iterator_types[d] == IteratorKind::Parallel)
            .collect()
    }

    pub fn has_reduction(&self) -> bool {
        !self.is_all_parallel()
    }

    /// Whether the body reads the accumulator (`outs`) block argument.
    pub fn reads_init(&self) -> bool {
        self.body.reads_arg(self.num_ins)
    }

    pub fn out_elem(&self) -> ElementType {
        self.body.args[self.num_ins]
    }
}

/// Structural problems of a generic op given its operand types.
pub(crate) fn generic_problems(op: &Operation, operand_types: &[TensorType]) -> Vec<String> {
    let mut errs = Vec::new();
    let Some(iters) = op.iterators_attr("iterator_types") else {
        return vec!["generic needs `iterator_types`".into()];
    };
    let Some(maps) = op.maps_attr("indexing_maps") else {
        return vec!["generic needs `indexing_maps`".into()];
    };
    let Some(body) = op.body.as_ref() else {
        return vec!["generic needs a body".into()];
    };
    if operand_types.is_empty() {
        return vec!["generic needs an outs operand".into()];
    }
    if maps.len() != operand_types.len() {
        return vec![format!(
            "generic has {} indexing maps for {} operands",
            maps.len(),
            operand_types.len()
        )];
    }
    let n = iters.len();
    for (i, (m, t)) in maps.iter().zip(operand_types).enumerate() {
        if m.num_dims != n || !m.is_well_formed() {
            errs.push(format!("indexing map {i} does not range over the {n} iteration dims"));
        } else if m.num_results() != t.rank() {
            errs.push(format!("indexing map {i} has {} results for a rank-{} operand", m.num_results(), t.rank()));
        }
    }
    if !errs.is_empty() {
        return errs;
    }

    let out = maps.last().expect("non-empty");
    if out.results.iter().any(|&d| iters[d] == IteratorKind::Reduction) {
        errs.push("result indexing map references a reduction dim".into());
    } else {
        let parallel: Vec<usize> = (0..n).filter(|&d| iters[d] == IteratorKind::Parallel).collect();
        let mut used = out.results.clone();
        used.sort_unstable();
        if used != parallel {
            errs.push("result indexing map must index every parallel dim exactly once".into());
        }
    }

    for d in 0..n {
        if !maps.iter().any(|m| m.uses_dim(d)) {
            errs.push(format!("iteration dim {d} is not indexed by any operand"));
            continue;
        }
        let mut extent = None;
        for (m, t) in maps.iter().zip(operand_types) {
            for (p, _) in m.results.iter().enumerate().filter(|(_, &r)| r == d) {
                if let Some(e) = t.shape[p].as_static() {
                    match extent {
                        None => extent = Some(e),
                        Some(prev) if prev != e => {
                            errs.push(format!("iteration dim {d} has conflicting extents {prev} and {e}"));
                        }
                        _ => {}
                    }
                }
            }
        }
    }

    if body.args.len() != operand_types.len() {
        errs.push(format!("body has {} arguments for {} operands", body.args.len(), operand_types.len()));
    } else if body.args.iter().zip(operand_types).any(|(a, t)| *a != t.elem) {
        errs.push("body argument types do not match operand element types".into());
    }
    errs.extend(body.check());
    if body.yields.len() != 1 {
        errs.push("body must yield exactly one value".into());
    } else if body.value_type(body.yields[0]) != operand_types.last().map(|t| t.elem) {
        errs.push("yielded type does not match the result element type".into());
    }
    errs
}
