use crate::ir::{AffineMap, FuncOp, Opcode, ProgramModule, ScalarBody, ScalarOp, ValueId};
use crate::linalg::GenericOp;

use super::dce;

/// Fuses all-parallel producer generics into all-parallel consumer generics.
///
/// Legality depends only on iterator kinds and indexing maps: a parallel
/// producer's result map is a permutation, so every producer iteration point
/// can be recovered from the consumer point that reads it. The producer body
/// is inlined ahead of the consumer body and the producer's operands are read
/// through the composed maps. Producers with other users are duplicated and
/// dead ones removed at the end.
pub fn fuse_elementwise(module: &ProgramModule) -> ProgramModule {
    let fused = ProgramModule::new(module.funcs.iter().map(fuse_func).collect());
    dce(&fused)
}

fn fuse_func(f: &FuncOp) -> FuncOp {
    let mut f = f.clone();
    while let Some((ci, pi)) = find_pair(&f) {
        let consumer = GenericOp::from_op(&f.body[ci]).expect("generic");
        let producer = GenericOp::from_op(&f.body[pi]).expect("generic");
        let fused = fuse_pair(
            &consumer,
            &f.body[ci].operands,
            &producer,
            &f.body[pi].operands,
            f.body[pi].result(),
        );
        let (g, operands) = fused;
        let result = f.body[ci].result();
        let n = g.num_ins;
        let mut op = g.to_op(&operands[..n], operands[n], result);
        op.loc = f.body[ci].loc;
        f.body[ci] = op;
    }
    f
}

fn parallel_generic(f: &FuncOp, i: usize) -> Option<GenericOp> {
    GenericOp::from_op(&f.body[i]).filter(GenericOp::is_all_parallel)
}

/// First (consumer, producer) op-index pair that can be fused.
fn find_pair(f: &FuncOp) -> Option<(usize, usize)> {
    for (ci, op) in f.body.iter().enumerate() {
        let Some(c) = parallel_generic(f, ci) else { continue };
        let reads = op
            .operands
            .iter()
            .enumerate()
            .filter(|(k, _)| *k < c.num_ins || c.reads_init());
        for (_, v) in reads {
            if let Some(pi) = f.defining_op(*v) {
                if parallel_generic(f, pi).is_some() {
                    return Some((ci, pi));
                }
            }
        }
    }
    None
}

/// Where a consumer operand's scalar comes from after fusion.
#[derive(Clone, Copy)]
enum Source {
    Arg(u32),
    ProducerYield,
}

fn fuse_pair(
    c: &GenericOp,
    c_operands: &[ValueId],
    p: &GenericOp,
    p_operands: &[ValueId],
    p_result: ValueId,
) -> (GenericOp, Vec<ValueId>) {
    let n = c.num_dims();
    // producer dim d is driven by consumer dim rename[d]
    let read_map = c_operands
        .iter()
        .zip(&c.indexing_maps)
        .find(|(v, _)| **v == p_result)
        .map(|(_, m)| m.clone())
        .expect("consumer reads the producer");
    let p_out = p.out_map();
    let rename: Vec<usize> = (0..p.num_dims())
        .map(|d| read_map.results[p_out.position_of(d).expect("parallel result map is a permutation")])
        .collect();

    // New operand list: (value, map, element type).
    let mut ins: Vec<(ValueId, AffineMap, crate::ir::ElementType)> = Vec::new();
    let mut c_src = Vec::with_capacity(c.num_ins + 1);
    let fuses = |k: usize| c_operands[k] == p_result && c.indexing_maps[k] == read_map;
    for k in 0..c.num_ins {
        if fuses(k) {
            c_src.push(Source::ProducerYield);
        } else {
            c_src.push(Source::Arg(ins.len() as u32));
            ins.push((c_operands[k], c.indexing_maps[k].clone(), c.body.args[k]));
        }
    }
    let mut p_src = Vec::with_capacity(p.num_ins + 1);
    for k in 0..p.num_ins {
        p_src.push(Source::Arg(ins.len() as u32));
        ins.push((p_operands[k], p.indexing_maps[k].rename_dims(&rename, n), p.body.args[k]));
    }
    if p.reads_init() {
        p_src.push(Source::Arg(ins.len() as u32));
        ins.push((p_operands[p.num_ins], p_out.rename_dims(&rename, n), p.out_elem()));
    } else {
        p_src.push(Source::Arg(u32::MAX));
    }
    let c_out_value = c_operands[c.num_ins];
    let out_value = if c_out_value == p_result && !c.reads_init() {
        // the init only supplies the shape, which the producer's init shares
        c_src.push(Source::Arg(u32::MAX - 1));
        p_operands[p.num_ins]
    } else if fuses(c.num_ins) {
        c_src.push(Source::ProducerYield);
        p_operands[p.num_ins]
    } else {
        c_src.push(Source::Arg(u32::MAX - 1));
        c_out_value
    };

    // Merge duplicate reads and drop inputs nobody reads.
    let body_reads = |src: &[Source], body: &ScalarBody, a: u32| match src[a as usize] {
        Source::Arg(_) => body.reads_arg(a as usize),
        Source::ProducerYield => false,
    };
    let mut keep: Vec<Option<u32>> = vec![None; ins.len()];
    let mut kept: Vec<(ValueId, AffineMap, crate::ir::ElementType)> = Vec::new();
    let mut used = vec![false; ins.len()];
    for (a, s) in c_src.iter().enumerate().take(c.num_ins) {
        if let Source::Arg(i) = s {
            used[*i as usize] |= body_reads(&c_src, &c.body, a as u32);
        }
    }
    for (a, s) in p_src.iter().enumerate() {
        if let Source::Arg(i) = s {
            if (*i as usize) < ins.len() {
                used[*i as usize] |= p.body.reads_arg(a);
            }
        }
    }
    for (i, item) in ins.iter().enumerate() {
        if !used[i] {
            continue;
        }
        match kept.iter().position(|k| k.0 == item.0 && k.1 == item.1) {
            Some(j) => keep[i] = Some(j as u32),
            None => {
                keep[i] = Some(kept.len() as u32);
                kept.push(item.clone());
            }
        }
    }
    let num_ins = kept.len() as u32;
    let out_arg = num_ins;

    // Body: producer ops first, then consumer ops.
    let num_args = num_ins as usize + 1;
    let p_base = num_args as u32;
    let c_base = p_base + p.body.ops.len() as u32;
    let resolve_arg = |s: Source| -> u32 {
        match s {
            Source::Arg(i) if (i as usize) < keep.len() => keep[i as usize].unwrap_or(u32::MAX),
            Source::Arg(_) => out_arg,
            Source::ProducerYield => unreachable!("resolved by caller"),
        }
    };
    let p_val = |v: u32| -> u32 {
        if (v as usize) < p.body.args.len() {
            resolve_arg(p_src[v as usize])
        } else {
            p_base + (v - p.body.args.len() as u32)
        }
    };
    let p_yield = p_val(p.body.yields[0]);
    let c_val = |v: u32| -> u32 {
        if (v as usize) < c.body.args.len() {
            match c_src[v as usize] {
                Source::ProducerYield => p_yield,
                s => resolve_arg(s),
            }
        } else {
            c_base + (v - c.body.args.len() as u32)
        }
    };
    let remap = |op: &ScalarOp, f: &dyn Fn(u32) -> u32| match *op {
        ScalarOp::Binary { op, ty, lhs, rhs } => ScalarOp::Binary { op, ty, lhs: f(lhs), rhs: f(rhs) },
        c @ ScalarOp::Const { .. } => c,
    };
    let mut ops: Vec<ScalarOp> = p.body.ops.iter().map(|o| remap(o, &p_val)).collect();
    ops.extend(c.body.ops.iter().map(|o| remap(o, &c_val)));
    let yields = c.body.yields.iter().map(|&y| c_val(y)).collect();

    let mut args: Vec<_> = kept.iter().map(|k| k.2).collect();
    args.push(c.out_elem());
    let mut maps: Vec<AffineMap> = kept.iter().map(|k| k.1.clone()).collect();
    maps.push(c.out_map().clone());
    let mut operands: Vec<ValueId> = kept.iter().map(|k| k.0).collect();
    operands.push(out_value);

    let g = GenericOp {
        iterator_types: c.iterator_types.clone(),
        indexing_maps: maps,
        num_ins: num_ins as usize,
        body: ScalarBody { args, ops, yields },
    };
    (g, operands)
}

/// Number of `linalg.generic` ops in `@main`.
pub fn generic_count(module: &ProgramModule) -> usize {
    module
        .main()
        .map(|f| f.body.iter().filter(|op| op.opcode == Opcode::LinalgGeneric).count())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::verify_module;
    use crate::linalg::{evaluate_module, lower_to_linalg};
    use crate::tensor::TensorData;
    use crate::text::parse_module;

    fn check(src: &str, expected_generics: usize, inputs: &[TensorData]) {
        let m = lower_to_linalg(&parse_module(src).unwrap()).unwrap();
        let fused = fuse_elementwise(&m);
        assert!(verify_module(&fused).is_empty(), "{:?}", verify_module(&fused));
        assert_eq!(generic_count(&fused), expected_generics, "{}", crate::text::print_module(&fused));
        assert_eq!(evaluate_module(&fused, inputs).unwrap(), evaluate_module(&m, inputs).unwrap());
    }

    #[test]
    fn add_then_mul_fuses() {
        let src = "module { func @main(%a: tensor<2x3xf32>, %b: tensor<2x3xf32>) -> (tensor<2x3xf32>) {
            %0 = fe.add(%a, %b) : (tensor<2x3xf32>, tensor<2x3xf32>) -> tensor<2x3xf32>
            %1 = fe.mul(%0, %b) : (tensor<2x3xf32>, tensor<2x3xf32>) -> tensor<2x3xf32>
            return %1 : tensor<2x3xf32>
        } }";
        let a = TensorData::from_f32(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = TensorData::from_f32(&[2, 3], &[0.5, -1.0, 2.0, 0.25, 3.0, -2.0]);
        check(src, 1, &[a, b]);
    }

    #[test]
    fn broadcast_producer_fuses() {
        let src = "module { func @main(%x: tensor<2x3xi32>, %c: tensor<3xi32>) -> (tensor<2x3xi32>) {
            %0 = fe.broadcast(%c, %x) {dims = [1]} : (tensor<3xi32>, tensor<2x3xi32>) -> tensor<2x3xi32>
            %1 = fe.add(%x, %0) : (tensor<2x3xi32>, tensor<2x3xi32>) -> tensor<2x3xi32>
            return %1 : tensor<2x3xi32>
        } }";
        let x = TensorData::from_i32(&[2, 3], &[1, 2, 3, 4, 5, 6]);
        let c = TensorData::from_i32(&[3], &[10, 20, 30]);
        check(src, 1, &[x, c]);
    }

    #[test]
    fn matmul_producer_not_fused() {
        let src = "module { func @main(%a: tensor<2x2xf32>, %b: tensor<2x2xf32>) -> (tensor<2x2xf32>) {
            %0 = fe.matmul(%a, %b) : (tensor<2x2xf32>, tensor<2x2xf32>) -> tensor<2x2xf32>
            %1 = fe.add(%0, %b) : (tensor<2x2xf32>, tensor<2x2xf32>) -> tensor<2x2xf32>
            return %1 : tensor<2x2xf32>
        } }";
        let a = TensorData::from_f32(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = TensorData::from_f32(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        check(src, 2, &[a, b]);
    }

    #[test]
    fn shared_producer_duplicated() {
        let src = "module { func @main(%a: tensor<4xi8>) -> (tensor<4xi8>) {
            %0 = fe.mul(%a, %a) : (tensor<4xi8>, tensor<4xi8>) -> tensor<4xi8>
            %1 = fe.add(%0, %a) : (tensor<4xi8>, tensor<4xi8>) -> tensor<4xi8>
            %2 = fe.sub(%0, %a) : (tensor<4xi8>, tensor<4xi8>) -> tensor<4xi8>
            %3 = fe.max(%1, %2) : (tensor<4xi8>, tensor<4xi8>) -> tensor<4xi8>
            return %3 : tensor<4xi8>
        } }";
        check(src, 1, &[TensorData::from_i8(&[4], &[-128, -3, 7, 127])]);
    }
}
