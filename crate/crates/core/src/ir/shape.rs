use thiserror::Error;

use super::types::{Dim, TensorType, MAX_RANK};
use super::{Opcode, Operation};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("incompatible shapes: {0}")]
    IncompatibleShapes(String),
    #[error("malformed op: {0}")]
    Malformed(String),
}

fn incompatible(msg: impl Into<String>) -> ShapeError {
    ShapeError::IncompatibleShapes(msg.into())
}

fn malformed(msg: impl Into<String>) -> ShapeError {
    ShapeError::Malformed(msg.into())
}

fn mul_dims(a: Dim, b: Dim) -> Dim {
    match (a, b) {
        (Dim::Static(x), Dim::Static(y)) => Dim::Static(x * y),
        _ => Dim::Dynamic,
    }
}

/// Result type of `op` given its operand types.
///
/// `declared` supplies the result type for ops whose shape is not derivable
/// from operands (`fe.constant`, `tensor.reshape`) and the element type of
/// `linalg.fill`; it is ignored elsewhere.
pub fn shape_infer(
    op: &Operation,
    operands: &[TensorType],
    declared: Option<&TensorType>,
) -> Result<TensorType, ShapeError> {
    if let Some(n) = op.opcode.arity() {
        if operands.len() != n {
            return Err(malformed(format!(
                "{} expects {n} operands, got {}",
                op.opcode,
                operands.len()
            )));
        }
    }
    let result = match op.opcode {
        Opcode::FeAdd | Opcode::FeSub | Opcode::FeMul | Opcode::FeMax => {
            if operands[0] != operands[1] {
                return Err(incompatible(format!(
                    "{} operand types differ: {} vs {}",
                    op.opcode, operands[0], operands[1]
                )));
            }
            operands[0].clone()
        }
        Opcode::FeBroadcast => broadcast(op, &operands[0], &operands[1])?,
        Opcode::FeMatmul => {
            let (a, b) = (&operands[0], &operands[1]);
            if a.rank() != 2 || b.rank() != 2 {
                return Err(incompatible("matmul operands must be rank 2"));
            }
            if a.elem != b.elem {
                return Err(incompatible("matmul element types differ"));
            }
            if !a.shape[1].compatible(b.shape[0]) {
                return Err(incompatible(format!(
                    "matmul inner dims differ: {} vs {}",
                    a.shape[1], b.shape[0]
                )));
            }
            TensorType::new(vec![a.shape[0], b.shape[1]], a.elem)
        }
        Opcode::FeConv2d => conv2d(op, &operands[0], &operands[1])?,
        Opcode::FeConstant => {
            let ty = declared.ok_or_else(|| malformed("constant needs a declared type"))?;
            let numel = ty
                .num_elements()
                .ok_or_else(|| incompatible("constant type must be static"))?;
            let blob = op
                .blob_attr("value")
                .ok_or_else(|| malformed("constant needs a `value` blob"))?;
            if blob.len() as u64 != numel * ty.elem.byte_width() as u64 {
                return Err(incompatible(format!(
                    "constant payload is {} bytes, {ty} needs {}",
                    blob.len(),
                    numel * ty.elem.byte_width() as u64
                )));
            }
            ty.clone()
        }
        Opcode::FeReduceSum => {
            let x = &operands[0];
            let axis = op.int_attr("axis").ok_or_else(|| malformed("reduce_sum needs `axis`"))?;
            if axis < 0 || axis as usize >= x.rank() {
                return Err(malformed(format!("reduce axis {axis} out of range for {x}")));
            }
            let mut shape = x.shape.clone();
            shape.remove(axis as usize);
            TensorType::new(shape, x.elem)
        }
        Opcode::TensorReshape => reshape(&operands[0], declared)?,
        Opcode::LinalgFill => {
            let elem = declared
                .map(|t| t.elem)
                .ok_or_else(|| malformed("fill needs a declared element type"))?;
            op.int_attr("value").ok_or_else(|| malformed("fill needs `value`"))?;
            let dims = op.ints_attr("dims").ok_or_else(|| malformed("fill needs `dims`"))?;
            if dims.len() % 2 != 0 {
                return Err(malformed("fill `dims` must hold (operand, axis) pairs"));
            }
            let mut shape = Vec::with_capacity(dims.len() / 2);
            for pair in dims.chunks(2) {
                let src = operands
                    .get(pair[0] as usize)
                    .filter(|_| pair[0] >= 0)
                    .ok_or_else(|| malformed(format!("fill dim source operand {} missing", pair[0])))?;
                let d = src
                    .shape
                    .get(pair[1] as usize)
                    .filter(|_| pair[1] >= 0)
                    .ok_or_else(|| malformed(format!("fill dim source axis {} out of range", pair[1])))?;
                shape.push(*d);
            }
            TensorType::new(shape, elem)
        }
        Opcode::LinalgGeneric => operands
            .last()
            .cloned()
            .ok_or_else(|| malformed("generic needs an outs operand"))?,
        Opcode::Return => return Err(malformed("return has no result")),
    };
    if result.rank() > MAX_RANK {
        return Err(malformed(format!("rank {} exceeds the limit of {MAX_RANK}", result.rank())));
    }
    Ok(result)
}

fn broadcast(op: &Operation, x: &TensorType, like: &TensorType) -> Result<TensorType, ShapeError> {
    let dims = op.ints_attr("dims").ok_or_else(|| malformed("broadcast needs `dims`"))?;
    if dims.len() != x.rank() {
        return Err(malformed(format!(
            "broadcast `dims` has {} entries for a rank-{} input",
            dims.len(),
            x.rank()
        )));
    }
    let mut prev = -1i64;
    for (k, &d) in dims.iter().enumerate() {
        if d <= prev || d as usize >= like.rank() {
            return Err(malformed("broadcast `dims` must be increasing and within the result rank"));
        }
        prev = d;
        let (src, dst) = (x.shape[k], like.shape[d as usize]);
        if !(src.compatible(dst) || src == Dim::Static(1)) {
            return Err(incompatible(format!("cannot broadcast extent {src} to {dst}")));
        }
    }
    Ok(TensorType::new(like.shape.clone(), x.elem))
}

fn conv2d(op: &Operation, x: &TensorType, w: &TensorType) -> Result<TensorType, ShapeError> {
    if x.rank() != 4 || w.rank() != 4 {
        return Err(incompatible("conv2d takes an NHWC input and an HWCF filter"));
    }
    if x.elem != w.elem {
        return Err(incompatible("conv2d element types differ"));
    }
    let stride = op.ints_attr("stride").unwrap_or(&[1, 1]);
    let pad = op.ints_attr("pad").unwrap_or(&[0, 0, 0, 0]);
    if stride.len() != 2 || stride.iter().any(|&s| s <= 0) {
        return Err(malformed("conv2d `stride` must be two positive integers"));
    }
    if pad.len() != 4 || pad.iter().any(|&p| p < 0) {
        return Err(malformed("conv2d `pad` must be four non-negative integers"));
    }
    if !x.shape[3].compatible(w.shape[2]) {
        return Err(incompatible(format!(
            "conv2d channel mismatch: {} vs {}",
            x.shape[3], w.shape[2]
        )));
    }
    let out_extent = |input: Dim, kernel: Dim, lo: i64, hi: i64, s: i64| -> Result<Dim, ShapeError> {
        match (input, kernel) {
            (Dim::Static(i), Dim::Static(k)) => {
                let padded = i as i64 + lo + hi;
                if padded < k as i64 {
                    return Err(incompatible("conv2d window larger than padded input"));
                }
                Ok(Dim::Static(((padded - k as i64) / s + 1) as u64))
            }
            _ => Ok(Dim::Dynamic),
        }
    };
    let oh = out_extent(x.shape[1], w.shape[0], pad[0], pad[1], stride[0])?;
    let ow = out_extent(x.shape[2], w.shape[1], pad[2], pad[3], stride[1])?;
    Ok(TensorType::new(vec![x.shape[0], oh, ow, w.shape[3]], x.elem))
}

fn reshape(x: &TensorType, declared: Option<&TensorType>) -> Result<TensorType, ShapeError> {
    let ty = declared.ok_or_else(|| malformed("reshape needs a declared result type"))?;
    if ty.elem != x.elem {
        return Err(incompatible("reshape cannot change the element type"));
    }
    let dynamic = ty.shape.iter().filter(|d| d.is_dynamic()).count();
    if dynamic > 1 {
        return Err(incompatible("reshape result may have at most one dynamic dim"));
    }
    if let Some(total) = x.num_elements() {
        let known = ty.shape.iter().fold(Dim::Static(1), |acc, d| mul_dims(acc, *d));
        match known {
            Dim::Static(n) if n != total => {
                return Err(incompatible(format!("reshape from {x} to {ty} changes the element count")))
            }
            Dim::Dynamic => {
                let partial: u64 = ty.shape.iter().filter_map(|d| d.as_static()).product();
                if partial == 0 || total % partial != 0 {
                    return Err(incompatible(format!("reshape from {x} to {ty} is not exact")));
                }
            }
            _ => {}
        }
    }
    Ok(ty.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{attrs, Attr, ElementType, Operation, ValueId};

    fn matmul_type(a: &TensorType, b: &TensorType) -> Result<TensorType, ShapeError> {
        let op = Operation::new(Opcode::FeMatmul, vec![ValueId(0), ValueId(1)], vec![ValueId(2)]);
        shape_infer(&op, &[a.clone(), b.clone()], None)
    }

    fn t(shape: &[Option<u64>]) -> TensorType {
        TensorType::new(
            shape.iter().map(|d| d.map(Dim::Static).unwrap_or(Dim::Dynamic)).collect(),
            ElementType::F32,
        )
    }

    #[test]
    fn matmul_static() {
        let r = matmul_type(&t(&[Some(2), Some(3)]), &t(&[Some(3), Some(4)])).unwrap();
        assert_eq!(r, t(&[Some(2), Some(4)]));
    }

    #[test]
    fn matmul_dynamic_propagates() {
        let r = matmul_type(&t(&[None, Some(3)]), &t(&[Some(3), None])).unwrap();
        assert_eq!(r.to_string(), "tensor<?x?xf32>");
    }

    #[test]
    fn matmul_inner_conflict() {
        let e = matmul_type(&t(&[Some(2), Some(3)]), &t(&[Some(4), Some(5)])).unwrap_err();
        assert!(matches!(e, ShapeError::IncompatibleShapes(_)));
    }

    #[test]
    fn conv_output_extent() {
        let mut op = Operation::new(Opcode::FeConv2d, vec![ValueId(0), ValueId(1)], vec![]);
        op.attrs = attrs([("stride", Attr::Ints(vec![2, 2])), ("pad", Attr::Ints(vec![1, 1, 1, 1]))]);
        let r = shape_infer(&op, &[t(&[Some(1), Some(8), Some(8), Some(3)]), t(&[Some(3), Some(3), Some(3), Some(5)])], None)
            .unwrap();
        assert_eq!(r, t(&[Some(1), Some(4), Some(4), Some(5)]));
    }

    #[test]
    fn reshape_rules() {
        let op = Operation::new(Opcode::TensorReshape, vec![ValueId(0)], vec![]);
        let src = t(&[Some(2), Some(3), Some(4)]);
        assert!(shape_infer(&op, std::slice::from_ref(&src), Some(&t(&[None, Some(4)]))).is_ok());
        assert!(shape_infer(&op, std::slice::from_ref(&src), Some(&t(&[None, Some(5)]))).is_err());
        assert!(shape_infer(&op, &[src], Some(&t(&[None, None]))).is_err());
    }
}
