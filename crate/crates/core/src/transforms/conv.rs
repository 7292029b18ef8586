use crate::ir::{Dim, FuncOp, Opcode, Operation, ProgramModule, TensorType, ValueId};

/// Rewrites 1x1 / stride-1 / unpadded `fe.conv2d` into
/// reshape → matmul → reshape. Other convolutions are left untouched.
///
/// The rewrite also requires a static channel count and at most one dynamic
/// extent among N, H, W, F, since each reshape may resolve only one
/// dynamic dimension at run time.
pub fn rewrite_conv1x1_to_matmul(module: &ProgramModule) -> ProgramModule {
    ProgramModule::new(module.funcs.iter().map(rewrite_func).collect())
}

fn is_rewritable(f: &FuncOp, op: &Operation) -> bool {
    if op.opcode != Opcode::FeConv2d {
        return false;
    }
    let stride = op.ints_attr("stride").unwrap_or(&[1, 1]);
    let pad = op.ints_attr("pad").unwrap_or(&[0, 0, 0, 0]);
    let (x, w) = (f.ty(op.operands[0]), f.ty(op.operands[1]));
    let unit_kernel = w.shape[0] == Dim::Static(1) && w.shape[1] == Dim::Static(1);
    let channels = x.shape[3].as_static().or(w.shape[2].as_static()).is_some();
    let dynamic = [x.shape[0], x.shape[1], x.shape[2], w.shape[3]]
        .iter()
        .filter(|d| d.is_dynamic())
        .count();
    unit_kernel && stride == [1, 1] && pad.iter().all(|&p| p == 0) && channels && dynamic <= 1
}

fn product(dims: &[Dim]) -> Dim {
    dims.iter().fold(Dim::Static(1), |acc, d| match (acc, d) {
        (Dim::Static(a), Dim::Static(b)) => Dim::Static(a * b),
        _ => Dim::Dynamic,
    })
}

fn rewrite_func(f: &FuncOp) -> FuncOp {
    let mut f = f.clone();
    let mut body = Vec::with_capacity(f.body.len());
    for op in std::mem::take(&mut f.body) {
        if !is_rewritable(&f, &op) {
            body.push(op);
            continue;
        }
        let x_ty = f.ty(op.operands[0]).clone();
        let w_ty = f.ty(op.operands[1]).clone();
        let elem = x_ty.elem;
        let c = x_ty.shape[3].as_static().or(w_ty.shape[2].as_static()).map(Dim::Static).expect("guarded");
        let rows = product(&x_ty.shape[..3]);
        let mut fresh = |ty: TensorType| {
            f.value_types.push(ty);
            ValueId(f.value_types.len() as u32 - 1)
        };
        let lhs = fresh(TensorType::new(vec![rows, c], elem));
        let rhs = fresh(TensorType::new(vec![c, w_ty.shape[3]], elem));
        let mm = fresh(TensorType::new(vec![rows, w_ty.shape[3]], elem));
        body.push(Operation::new(Opcode::TensorReshape, vec![op.operands[0]], vec![lhs]));
        body.push(Operation::new(Opcode::TensorReshape, vec![op.operands[1]], vec![rhs]));
        body.push(Operation::new(Opcode::FeMatmul, vec![lhs, rhs], vec![mm]));
        // the final reshape keeps the conv's own result value
        body.push(Operation::new(Opcode::TensorReshape, vec![mm], op.results.clone()));
    }
    f.body = body;
    f.compact();
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{attrs, verify_module, Attr, ElementType, FuncBuilder};
    use crate::refinterp::interpret;
    use crate::tensor::TensorData;

    fn conv_module(x: &[u64], w: &[u64], stride: i64) -> ProgramModule {
        let mut b = FuncBuilder::new(
            "main",
            vec![TensorType::fixed(x, ElementType::F32), TensorType::fixed(w, ElementType::F32)],
        );
        let r = b
            .build(
                Opcode::FeConv2d,
                &[b.arg(0), b.arg(1)],
                attrs([("stride", Attr::Ints(vec![stride, stride]))]),
                None,
            )
            .unwrap();
        ProgramModule::new(vec![b.finish(&[r])])
    }

    #[test]
    fn unit_conv_becomes_matmul() {
        let m = conv_module(&[1, 4, 4, 3], &[1, 1, 3, 8], 1);
        let r = rewrite_conv1x1_to_matmul(&m);
        assert!(verify_module(&r).is_empty(), "{:?}", verify_module(&r));
        let f = r.main().unwrap();
        let mm = f.body.iter().find(|op| op.opcode == Opcode::FeMatmul).unwrap();
        assert_eq!(f.ty(mm.operands[0]).to_string(), "tensor<16x3xf32>");
        assert_eq!(f.ty(mm.operands[1]).to_string(), "tensor<3x8xf32>");

        let x: Vec<f32> = (0..48).map(|i| (i as f32 * 0.37).sin()).collect();
        let w: Vec<f32> = (0..24).map(|i| (i as f32 * 1.3).cos()).collect();
        let inputs = [TensorData::from_f32(&[1, 4, 4, 3], &x), TensorData::from_f32(&[1, 1, 3, 8], &w)];
        assert_eq!(interpret(&r, &inputs).unwrap(), interpret(&m, &inputs).unwrap());
    }

    #[test]
    fn other_convs_untouched() {
        let m = conv_module(&[1, 5, 5, 2], &[3, 3, 2, 4], 1);
        assert_eq!(rewrite_conv1x1_to_matmul(&m), m);
        let m = conv_module(&[1, 5, 5, 2], &[1, 1, 2, 4], 2);
        assert_eq!(rewrite_conv1x1_to_matmul(&m), m);
    }
}
