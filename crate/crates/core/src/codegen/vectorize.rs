use crate::ir::IteratorKind;

use super::kernel::{KOp, LoopNestKernel, Stage, VECTOR_WIDTH};

/// Rewrites each stage whose innermost loop is parallel and walks every
/// access with unit stride (or not at all) into width-4 vector form with a
/// scalar epilogue. Accesses that ignore the innermost dim are loaded once
/// and splatted. Other stages are left alone.
pub fn vectorize(kernel: &LoopNestKernel, width: usize) -> LoopNestKernel {
    assert_eq!(width, VECTOR_WIDTH, "only width {VECTOR_WIDTH} is supported");
    let mut k = kernel.clone();
    for stage in &mut k.stages {
        if let Some(v) = vectorize_stage(kernel, stage) {
            *stage = v;
        }
    }
    k
}

fn vectorize_stage(kernel: &LoopNestKernel, stage: &Stage) -> Option<Stage> {
    if stage.epilogue.is_some() {
        return None;
    }
    let &d = stage.loops.last()?;
    if kernel.dims[d as usize].kind != IteratorKind::Parallel {
        return None;
    }
    let mut body = Vec::with_capacity(stage.body.len() + 2);
    for op in &stage.body {
        match op {
            KOp::Load { dst, binding, index } if index.unit_stride_in(d) => {
                body.push(KOp::VLoad { dst: *dst, binding: *binding, index: index.clone() })
            }
            KOp::Load { dst, index, .. } if !index.uses(d) => {
                body.push(op.clone());
                body.push(KOp::Splat { dst: *dst, src: *dst });
            }
            KOp::Store { src, binding, index } if index.unit_stride_in(d) => {
                body.push(KOp::VStore { src: *src, binding: *binding, index: index.clone() })
            }
            KOp::Bin { dst, op, ty, a, b } => body.push(KOp::VBin { dst: *dst, op: *op, ty: *ty, a: *a, b: *b }),
            KOp::Const { .. } => body.push(op.clone()),
            _ => return None,
        }
    }
    Some(Stage { loops: stage.loops.clone(), body, epilogue: Some(stage.body.clone()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::kernel::tests::kernels;
    use crate::transforms::TileConfig;

    #[test]
    fn elementwise_gets_vector_body() {
        let src = "module { func @main(%a: tensor<10xf32>, %b: tensor<10xf32>) -> (tensor<10xf32>) {
            %0 = fe.add(%a, %b) : (tensor<10xf32>, tensor<10xf32>) -> tensor<10xf32>
            return %0 : tensor<10xf32>
        } }";
        let k = &kernels(src, &TileConfig::default())[0];
        let v = vectorize(k, 4);
        assert!(v.is_vectorized());
        let s = &v.stages[0];
        assert!(matches!(s.body[0], KOp::VLoad { .. }));
        assert!(matches!(s.body.last(), Some(KOp::VStore { .. })));
        assert_eq!(s.epilogue.as_ref(), Some(&k.stages[0].body));
    }

    #[test]
    fn reduction_innermost_unchanged() {
        let src = "module { func @main(%a: tensor<4x6xi32>, %b: tensor<6x5xi32>) -> (tensor<4x5xi32>) {
            %0 = fe.matmul(%a, %b) : (tensor<4x6xi32>, tensor<6x5xi32>) -> tensor<4x5xi32>
            return %0 : tensor<4x5xi32>
        } }";
        let k = &kernels(src, &TileConfig::default())[0];
        let v = vectorize(k, 4);
        // only the init stage (innermost j) is vectorizable
        assert!(v.stages[0].epilogue.is_some());
        assert_eq!(v.stages[1], k.stages[1]);
    }

    #[test]
    fn broadcast_operand_is_splatted() {
        let src = "module { func @main(%x: tensor<3x8xf32>, %c: tensor<3xf32>) -> (tensor<3x8xf32>) {
            %0 = fe.broadcast(%c, %x) {dims = [0]} : (tensor<3xf32>, tensor<3x8xf32>) -> tensor<3x8xf32>
            %1 = fe.add(%x, %0) : (tensor<3x8xf32>, tensor<3x8xf32>) -> tensor<3x8xf32>
            return %1 : tensor<3x8xf32>
        } }";
        let k = &kernels(src, &TileConfig::default())[0];
        let v = vectorize(k, 4);
        assert!(v.stages[0].body.iter().any(|op| matches!(op, KOp::Splat { .. })));
    }
}
