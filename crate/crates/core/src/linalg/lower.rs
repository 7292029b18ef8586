use crate::ir::{
    attrs, AffineMap, Attr, BinaryOp, Dim, ElementType, FuncBuilder, FuncOp, IteratorKind, Opcode, Operation,
    ProgramModule, ScalarBody, ScalarOp, TensorType, ValueId,
};

use super::{GenericOp, LinalgError};

/// Lowers every frontend tensor op to `linalg.generic` (plus `linalg.fill`
/// for accumulator inits). Constants and reshapes carry over unchanged.
///
/// `fe.conv2d` must already have been rewritten; any survivor is reported
/// as `NotSupported`.
pub fn lower_to_linalg(module: &ProgramModule) -> Result<ProgramModule, LinalgError> {
    let funcs = module.funcs.iter().map(lower_func).collect::<Result<_, _>>()?;
    Ok(ProgramModule::new(funcs))
}

fn binary_body(op: BinaryOp, elem: ElementType, num_args: usize, lhs: u32, rhs: u32) -> ScalarBody {
    ScalarBody {
        args: vec![elem; num_args],
        ops: vec![ScalarOp::Binary { op, ty: elem, lhs, rhs }],
        yields: vec![num_args as u32],
    }
}

fn lower_func(f: &FuncOp) -> Result<FuncOp, LinalgError> {
    let mut b = FuncBuilder::new(&f.name, f.arg_types().to_vec());
    let mut map: Vec<Option<ValueId>> = vec![None; f.value_types.len()];
    for a in f.args() {
        map[a.index()] = Some(a);
    }
    let get = |map: &[Option<ValueId>], v: ValueId| map[v.index()].expect("verified module");

    for op in &f.body {
        if op.opcode == Opcode::Return {
            let results: Vec<ValueId> = op.operands.iter().map(|v| get(&map, *v)).collect();
            return Ok(b.finish(&results));
        }
        let ty = f.ty(op.result()).clone();
        let ins: Vec<ValueId> = op.operands.iter().map(|v| get(&map, *v)).collect();
        let new = match op.opcode {
            Opcode::FeAdd | Opcode::FeSub | Opcode::FeMul | Opcode::FeMax => {
                let bin = op.opcode.elementwise().expect("element-wise opcode");
                let rank = ty.rank();
                let g = GenericOp {
                    iterator_types: vec![IteratorKind::Parallel; rank],
                    indexing_maps: vec![AffineMap::identity(rank); 3],
                    num_ins: 2,
                    body: binary_body(bin, ty.elem, 3, 0, 1),
                };
                // The init operand only supplies the shape; the body never reads it.
                push_generic(&mut b, &g, &ins, ins[0], ty)
            }
            Opcode::FeMatmul => {
                let init = push_fill(&mut b, &ins, &[0, 0, 1, 1], ty.clone());
                let g = GenericOp {
                    iterator_types: vec![IteratorKind::Parallel, IteratorKind::Parallel, IteratorKind::Reduction],
                    indexing_maps: vec![
                        AffineMap::new(3, vec![0, 2]),
                        AffineMap::new(3, vec![2, 1]),
                        AffineMap::new(3, vec![0, 1]),
                    ],
                    num_ins: 2,
                    body: ScalarBody {
                        args: vec![ty.elem; 3],
                        ops: vec![
                            ScalarOp::Binary { op: BinaryOp::Mul, ty: ty.elem, lhs: 0, rhs: 1 },
                            ScalarOp::Binary { op: BinaryOp::Add, ty: ty.elem, lhs: 2, rhs: 3 },
                        ],
                        yields: vec![4],
                    },
                };
                push_generic(&mut b, &g, &ins, init, ty)
            }
            Opcode::FeReduceSum => {
                let axis = op.int_attr("axis").expect("verified") as usize;
                let x_ty = f.ty(op.operands[0]);
                let rank = x_ty.rank();
                let kept: Vec<usize> = (0..rank).filter(|&d| d != axis).collect();
                let dims: Vec<i64> = kept.iter().flat_map(|&d| [0, d as i64]).collect();
                let init = push_fill(&mut b, &ins, &dims, ty.clone());
                let mut iters = vec![IteratorKind::Parallel; rank];
                iters[axis] = IteratorKind::Reduction;
                let g = GenericOp {
                    iterator_types: iters,
                    indexing_maps: vec![AffineMap::identity(rank), AffineMap::new(rank, kept)],
                    num_ins: 1,
                    body: binary_body(BinaryOp::Add, ty.elem, 2, 1, 0),
                };
                push_generic(&mut b, &g, &ins, init, ty)
            }
            Opcode::FeBroadcast => lower_broadcast(&mut b, op, f.ty(op.operands[0]), &ins, ty)?,
            Opcode::FeConstant | Opcode::TensorReshape | Opcode::LinalgGeneric | Opcode::LinalgFill => {
                let mut copy = op.clone();
                copy.operands = ins;
                copy.loc = None;
                b.push(copy, ty)
            }
            Opcode::FeConv2d => {
                return Err(LinalgError::NotSupported(
                    "conv2d other than 1x1 / stride 1 / no padding".into(),
                ))
            }
            Opcode::Return => unreachable!(),
        };
        map[op.result().index()] = Some(new);
    }
    Err(LinalgError::NotSupported(format!("@{} has no return", f.name)))
}

fn push_generic(b: &mut FuncBuilder, g: &GenericOp, ins: &[ValueId], init: ValueId, ty: TensorType) -> ValueId {
    let op = g.to_op(&ins[..g.num_ins], init, ValueId(0));
    b.push(op, ty)
}

fn push_fill(b: &mut FuncBuilder, srcs: &[ValueId], dims: &[i64], ty: TensorType) -> ValueId {
    let mut op = Operation::new(Opcode::LinalgFill, srcs.to_vec(), vec![]);
    op.attrs = attrs([("dims", Attr::Ints(dims.to_vec())), ("value", Attr::Int(0))]);
    b.push(op, ty)
}

/// `fe.broadcast(x, like)` becomes a generic over `like`'s shape whose input
/// map drops the added dims. Stretched unit dims cannot be expressed by a
/// projected permutation, so they are first removed with a reshape.
fn lower_broadcast(
    b: &mut FuncBuilder,
    op: &Operation,
    x_ty: &TensorType,
    ins: &[ValueId],
    ty: TensorType,
) -> Result<ValueId, LinalgError> {
    let dims = op.ints_attr("dims").expect("verified");
    let like_ty = b.ty(ins[1]).clone();
    let mut kept_axes = Vec::new();
    let mut results = Vec::new();
    for (k, &d) in dims.iter().enumerate() {
        let stretched = x_ty.shape[k] == Dim::Static(1) && like_ty.shape[d as usize] != Dim::Static(1);
        if !stretched {
            kept_axes.push(k);
            results.push(d as usize);
        }
    }
    let mut x = ins[0];
    if kept_axes.len() != x_ty.rank() {
        let shape: Vec<Dim> = kept_axes.iter().map(|&k| x_ty.shape[k]).collect();
        if shape.iter().filter(|d| d.is_dynamic()).count() > 1 {
            return Err(LinalgError::NotSupported(
                "broadcast stretching a unit dim of an input with several dynamic dims".into(),
            ));
        }
        let reshape = Operation::new(Opcode::TensorReshape, vec![x], vec![]);
        x = b.push(reshape, TensorType::new(shape, x_ty.elem));
    }
    let rank = ty.rank();
    let g = GenericOp {
        iterator_types: vec![IteratorKind::Parallel; rank],
        indexing_maps: vec![AffineMap::new(rank, results), AffineMap::identity(rank)],
        num_ins: 1,
        body: ScalarBody { args: vec![ty.elem, like_ty.elem], ops: vec![], yields: vec![0] },
    };
    Ok(push_generic(b, &g, &[x], ins[1], ty))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::verify_module;
    use crate::linalg::evaluate_module;
    use crate::refinterp::interpret;
    use crate::tensor::TensorData;

    fn f32t(shape: &[u64]) -> TensorType {
        TensorType::fixed(shape, ElementType::F32)
    }

    #[test]
    fn matmul_lowers_to_reduction_generic() {
        let mut b = FuncBuilder::new("main", vec![f32t(&[2, 3]), f32t(&[3, 4])]);
        let r = b.binary(Opcode::FeMatmul, b.arg(0), b.arg(1)).unwrap();
        let m = ProgramModule::new(vec![b.finish(&[r])]);
        let l = lower_to_linalg(&m).unwrap();
        assert!(verify_module(&l).is_empty(), "{:?}", verify_module(&l));
        let f = l.main().unwrap();
        let g = f
            .body
            .iter()
            .find_map(GenericOp::from_op)
            .expect("one generic");
        assert_eq!(g, crate::linalg::tests::matmul_generic(ElementType::F32));
    }

    #[test]
    fn bias_broadcast_map_drops_row_dim() {
        let dyn2 = TensorType::new(vec![Dim::Dynamic, Dim::Dynamic], ElementType::F32);
        let dyn1 = TensorType::new(vec![Dim::Dynamic], ElementType::F32);
        let mut b = FuncBuilder::new("main", vec![dyn2.clone(), dyn2, dyn1]);
        let mm = b.binary(Opcode::FeMatmul, b.arg(0), b.arg(1)).unwrap();
        let bias = b
            .build(Opcode::FeBroadcast, &[b.arg(2), mm], attrs([("dims", Attr::Ints(vec![1]))]), None)
            .unwrap();
        let out = b.binary(Opcode::FeAdd, mm, bias).unwrap();
        let m = ProgramModule::new(vec![b.finish(&[out])]);
        let l = lower_to_linalg(&m).unwrap();
        assert!(verify_module(&l).is_empty());
        let generics: Vec<GenericOp> = l.main().unwrap().body.iter().filter_map(GenericOp::from_op).collect();
        assert_eq!(generics.len(), 3);
        assert_eq!(generics[1].indexing_maps[0], AffineMap::new(2, vec![1]));
        assert!(generics[2].indexing_maps.iter().all(|m| m.is_identity()));

        let a = TensorData::from_f32(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = TensorData::from_f32(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let c = TensorData::from_f32(&[2], &[0.5, -1.0]);
        let inputs = [a, w, c];
        assert_eq!(evaluate_module(&l, &inputs).unwrap(), interpret(&m, &inputs).unwrap());
    }

    #[test]
    fn stretched_unit_dim_goes_through_reshape() {
        let mut b = FuncBuilder::new("main", vec![f32t(&[3, 1]), f32t(&[3, 4])]);
        let r = b
            .build(Opcode::FeBroadcast, &[b.arg(0), b.arg(1)], attrs([("dims", Attr::Ints(vec![0, 1]))]), None)
            .unwrap();
        let m = ProgramModule::new(vec![b.finish(&[r])]);
        let l = lower_to_linalg(&m).unwrap();
        assert!(verify_module(&l).is_empty());
        let x = TensorData::from_f32(&[3, 1], &[1.0, 2.0, 3.0]);
        let like = TensorData::zeros(ElementType::F32, &[3, 4]);
        let inputs = [x, like];
        assert_eq!(evaluate_module(&l, &inputs).unwrap(), interpret(&m, &inputs).unwrap());
    }

    #[test]
    fn general_conv_not_supported() {
        let mut b = FuncBuilder::new("main", vec![f32t(&[1, 4, 4, 2]), f32t(&[3, 3, 2, 1])]);
        let r = b.binary(Opcode::FeConv2d, b.arg(0), b.arg(1)).unwrap();
        let m = ProgramModule::new(vec![b.finish(&[r])]);
        assert!(matches!(lower_to_linalg(&m), Err(LinalgError::NotSupported(_))));
    }
}
