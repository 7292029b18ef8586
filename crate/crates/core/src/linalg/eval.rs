use crate::ir::{Opcode, ProgramModule};
use crate::refinterp::resolve_reshape;
use crate::tensor::{num_elements, row_major_strides, TensorData};

use super::{GenericOp, LinalgError};

/// Resolved extent of every iteration dim.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IterationSpace {
    pub sizes: Vec<usize>,
}

impl IterationSpace {
    pub fn num_points(&self) -> usize {
        num_elements(&self.sizes)
    }
}

/// Derives iteration-dim extents from operand shapes through the indexing maps.
pub fn resolve_iteration_space(op: &GenericOp, shapes: &[Vec<usize>]) -> Result<IterationSpace, LinalgError> {
    if shapes.len() != op.indexing_maps.len() {
        return Err(LinalgError::InconsistentShapes(format!(
            "{} shapes for {} operands",
            shapes.len(),
            op.indexing_maps.len()
        )));
    }
    let mut sizes: Vec<Option<usize>> = vec![None; op.num_dims()];
    for (operand, (map, shape)) in op.indexing_maps.iter().zip(shapes).enumerate() {
        if map.num_results() != shape.len() {
            return Err(LinalgError::InconsistentShapes(format!(
                "operand {operand} has rank {} but its map has {} results",
                shape.len(),
                map.num_results()
            )));
        }
        for (&d, &extent) in map.results.iter().zip(shape) {
            match sizes[d] {
                None => sizes[d] = Some(extent),
                Some(prev) if prev != extent => {
                    return Err(LinalgError::InconsistentShapes(format!(
                        "iteration dim {d} is {prev} from one operand and {extent} from operand {operand}"
                    )))
                }
                _ => {}
            }
        }
    }
    let sizes = sizes
        .into_iter()
        .enumerate()
        .map(|(d, s)| s.ok_or_else(|| LinalgError::InconsistentShapes(format!("dim {d} is unconstrained"))))
        .collect::<Result<_, _>>()?;
    Ok(IterationSpace { sizes })
}

/// Per-iteration-dim element stride of an operand accessed through `map`.
fn dim_strides(map: &super::AffineMap, shape: &[usize]) -> Vec<usize> {
    let strides = row_major_strides(shape);
    let mut out = vec![0; map.num_dims];
    for (p, &d) in map.results.iter().enumerate() {
        out[d] += strides[p];
    }
    out
}

/// Evaluates a generic op point by point in lexicographic order of the
/// declared iterators (leftmost slowest). Each point reads the operands
/// through their maps, runs the body and writes the yield into the result.
pub fn evaluate_generic(op: &GenericOp, inputs: &[&TensorData], init: &TensorData) -> Result<TensorData, LinalgError> {
    if inputs.len() != op.num_ins {
        return Err(LinalgError::InconsistentShapes(format!(
            "{} inputs for {} ins",
            inputs.len(),
            op.num_ins
        )));
    }
    let mut shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape.clone()).collect();
    shapes.push(init.shape.clone());
    let space = resolve_iteration_space(op, &shapes)?;
    let strides: Vec<Vec<usize>> = op
        .indexing_maps
        .iter()
        .zip(&shapes)
        .map(|(m, s)| dim_strides(m, s))
        .collect();

    let mut out = init.clone();
    if space.num_points() == 0 {
        return Ok(out);
    }
    let n = op.num_dims();
    let mut point = vec![0usize; n];
    let mut args = vec![0u32; op.num_ins + 1];
    let mut scratch = Vec::new();
    let mut yielded = [0u32];
    loop {
        for (i, t) in inputs.iter().enumerate() {
            let off: usize = point.iter().zip(&strides[i]).map(|(a, b)| a * b).sum();
            args[i] = t.bits(off);
        }
        let out_off: usize = point.iter().zip(&strides[op.num_ins]).map(|(a, b)| a * b).sum();
        args[op.num_ins] = out.bits(out_off);
        op.body.eval(&args, &mut scratch, &mut yielded);
        out.set_bits(out_off, yielded[0]);

        // odometer increment, innermost (rightmost) dim fastest
        let mut d = n;
        loop {
            if d == 0 {
                return Ok(out);
            }
            d -= 1;
            point[d] += 1;
            if point[d] < space.sizes[d] {
                break;
            }
            point[d] = 0;
        }
    }
}

/// Runs `@main` of a linalg-level module (generics, fills, reshapes, constants).
pub fn evaluate_module(module: &ProgramModule, inputs: &[TensorData]) -> Result<Vec<TensorData>, LinalgError> {
    let f = module.main().ok_or(LinalgError::NoMain)?;
    if inputs.len() != f.num_args {
        return Err(LinalgError::InconsistentShapes(format!("expected {} inputs", f.num_args)));
    }
    let mut values: Vec<Option<TensorData>> = vec![None; f.value_types.len()];
    for (i, t) in inputs.iter().enumerate() {
        values[i] = Some(t.clone());
    }
    let get = |values: &Vec<Option<TensorData>>, v: crate::ir::ValueId| values[v.index()].clone().expect("verified");
    for op in &f.body {
        let result = match op.opcode {
            Opcode::Return => return Ok(op.operands.iter().map(|v| get(&values, *v)).collect()),
            Opcode::LinalgGeneric => {
                let g = GenericOp::from_op(op).expect("verified generic");
                let ins: Vec<TensorData> = op.operands[..g.num_ins].iter().map(|v| get(&values, *v)).collect();
                let init = get(&values, *op.operands.last().expect("outs"));
                let refs: Vec<&TensorData> = ins.iter().collect();
                evaluate_generic(&g, &refs, &init)?
            }
            Opcode::LinalgFill => {
                let ty = f.ty(op.result());
                let dims = op.ints_attr("dims").unwrap_or_default();
                let shape: Vec<usize> = dims
                    .chunks(2)
                    .map(|p| get(&values, op.operands[p[0] as usize]).shape[p[1] as usize])
                    .collect();
                let mut t = TensorData::zeros(ty.elem, &shape);
                let bits = fill_bits(ty.elem, op.int_attr("value").unwrap_or(0));
                for i in 0..t.len() {
                    t.set_bits(i, bits);
                }
                t
            }
            Opcode::TensorReshape => {
                let x = get(&values, op.operands[0]);
                let shape = resolve_reshape(f.ty(op.result()), x.len())
                    .ok_or_else(|| LinalgError::InconsistentShapes("reshape".into()))?;
                TensorData { elem: x.elem, shape, bytes: x.bytes }
            }
            Opcode::FeConstant => {
                let ty = f.ty(op.result());
                TensorData {
                    elem: ty.elem,
                    shape: ty.static_shape().expect("static constant"),
                    bytes: op.blob_attr("value").unwrap_or_default().to_vec(),
                }
            }
            other => return Err(LinalgError::NotSupported(format!("{other} at linalg level"))),
        };
        values[op.result().index()] = Some(result);
    }
    Ok(vec![])
}

/// Element bits of an integer fill value.
pub(crate) fn fill_bits(elem: crate::ir::ElementType, value: i64) -> u32 {
    use crate::ir::ElementType;
    match elem {
        ElementType::F32 => (value as f32).to_bits(),
        ElementType::I32 => value as i32 as u32,
        ElementType::I8 => value as i8 as u8 as u32,
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::matmul_generic;
    use super::*;
    use crate::ir::{AffineMap, BinaryOp, ElementType, IteratorKind, ScalarBody, ScalarOp};

    /// Brute-force oracle: every (map, position) pair pins its dim's extent.
    fn oracle_sizes(maps: &[AffineMap], shapes: &[Vec<usize>], n: usize) -> Vec<usize> {
        (0..n)
            .map(|d| {
                let mut found = vec![];
                for (m, s) in maps.iter().zip(shapes) {
                    for p in 0..m.results.len() {
                        if m.results[p] == d {
                            found.push(s[p]);
                        }
                    }
                }
                found.dedup();
                assert_eq!(found.len(), 1);
                found[0]
            })
            .collect()
    }

    #[test]
    fn matmul_iteration_space() {
        let g = matmul_generic(ElementType::F32);
        let shapes = vec![vec![2, 3], vec![3, 4], vec![2, 4]];
        let space = resolve_iteration_space(&g, &shapes).unwrap();
        assert_eq!(space.sizes, oracle_sizes(&g.indexing_maps, &shapes, 3));
        assert_eq!(space.sizes, vec![2, 4, 3]);
    }

    #[test]
    fn elementwise_iteration_space() {
        let g = GenericOp {
            iterator_types: vec![IteratorKind::Parallel; 2],
            indexing_maps: vec![AffineMap::identity(2); 2],
            num_ins: 1,
            body: ScalarBody { args: vec![ElementType::F32; 2], ops: vec![], yields: vec![0] },
        };
        assert_eq!(resolve_iteration_space(&g, &[vec![5, 7], vec![5, 7]]).unwrap().sizes, vec![5, 7]);
    }

    #[test]
    fn conflicting_inner_dim() {
        let g = matmul_generic(ElementType::F32);
        let err = resolve_iteration_space(&g, &[vec![2, 3], vec![4, 5], vec![2, 5]]).unwrap_err();
        assert!(matches!(err, LinalgError::InconsistentShapes(_)));
    }

    #[test]
    fn matmul_values() {
        let g = matmul_generic(ElementType::F32);
        let a = TensorData::from_f32(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = TensorData::from_f32(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let c = TensorData::zeros(ElementType::F32, &[2, 2]);
        let d = evaluate_generic(&g, &[&a, &b], &c).unwrap();
        assert_eq!(d.to_f32(), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn add_zero_and_sum() {
        let add = GenericOp {
            iterator_types: vec![IteratorKind::Parallel],
            indexing_maps: vec![AffineMap::identity(1); 3],
            num_ins: 2,
            body: ScalarBody {
                args: vec![ElementType::F32; 3],
                ops: vec![ScalarOp::Binary { op: BinaryOp::Add, ty: ElementType::F32, lhs: 0, rhs: 1 }],
                yields: vec![3],
            },
        };
        let x = TensorData::from_f32(&[3], &[1.0, -2.5, 3.25]);
        let z = TensorData::zeros(ElementType::F32, &[3]);
        assert_eq!(evaluate_generic(&add, &[&x, &z], &z).unwrap(), x);

        let sum = GenericOp {
            iterator_types: vec![IteratorKind::Reduction],
            indexing_maps: vec![AffineMap::identity(1), AffineMap::new(1, vec![])],
            num_ins: 1,
            body: ScalarBody {
                args: vec![ElementType::F32; 2],
                ops: vec![ScalarOp::Binary { op: BinaryOp::Add, ty: ElementType::F32, lhs: 1, rhs: 0 }],
                yields: vec![2],
            },
        };
        let v = TensorData::from_f32(&[4], &[1.0, 2.0, 3.0, 4.0]);
        let init = TensorData::zeros(ElementType::F32, &[]);
        assert_eq!(evaluate_generic(&sum, &[&v], &init).unwrap().to_f32(), vec![10.0]);
    }
}
