//! Reference interpreter for frontend programs.
//!
//! Deliberately naive: every op is evaluated with plain nested loops over
//! native Rust arithmetic. Matmul, conv and reductions accumulate from zero in
//! ascending index order, which is the order every compiled path reproduces.

use thiserror::Error;

use crate::ir::{BinaryOp, Dim, ElementType, FuncOp, Opcode, Operation, ProgramModule, TensorType};
use crate::tensor::{num_elements, row_major_strides, TensorData};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InterpError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("module has no @main")]
    NoMain,
    #[error("op {0} is not a frontend op")]
    NotSupported(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Num {
    F(f32),
    I(i32),
    B(i8),
}

fn read(t: &TensorData, i: usize) -> Num {
    match t.elem {
        ElementType::F32 => {
            let b = &t.bytes[i * 4..i * 4 + 4];
            Num::F(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        }
        ElementType::I32 => {
            let b = &t.bytes[i * 4..i * 4 + 4];
            Num::I(i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        }
        ElementType::I8 => Num::B(t.bytes[i] as i8),
    }
}

fn write(t: &mut TensorData, i: usize, v: Num) {
    match v {
        Num::F(x) => t.bytes[i * 4..i * 4 + 4].copy_from_slice(&x.to_le_bytes()),
        Num::I(x) => t.bytes[i * 4..i * 4 + 4].copy_from_slice(&x.to_le_bytes()),
        Num::B(x) => t.bytes[i] = x as u8,
    }
}

fn zero(elem: ElementType) -> Num {
    match elem {
        ElementType::F32 => Num::F(0.0),
        ElementType::I32 => Num::I(0),
        ElementType::I8 => Num::B(0),
    }
}

fn arith(op: BinaryOp, a: Num, b: Num) -> Num {
    match (a, b) {
        (Num::F(x), Num::F(y)) => Num::F(match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Max => {
                if x.is_nan() || (!y.is_nan() && x >= y) {
                    x
                } else {
                    y
                }
            }
        }),
        (Num::I(x), Num::I(y)) => Num::I(match op {
            BinaryOp::Add => x.wrapping_add(y),
            BinaryOp::Sub => x.wrapping_sub(y),
            BinaryOp::Mul => x.wrapping_mul(y),
            BinaryOp::Max => x.max(y),
        }),
        (Num::B(x), Num::B(y)) => Num::B(match op {
            BinaryOp::Add => x.wrapping_add(y),
            BinaryOp::Sub => x.wrapping_sub(y),
            BinaryOp::Mul => x.wrapping_mul(y),
            BinaryOp::Max => x.max(y),
        }),
        _ => unreachable!("verified programs never mix element types"),
    }
}

fn mismatch(msg: impl Into<String>) -> InterpError {
    InterpError::ShapeMismatch(msg.into())
}

/// Runs `@main` of a verified frontend module.
pub fn interpret(module: &ProgramModule, inputs: &[TensorData]) -> Result<Vec<TensorData>, InterpError> {
    let f = module.main().ok_or(InterpError::NoMain)?;
    interpret_func(f, inputs)
}

pub fn interpret_func(f: &FuncOp, inputs: &[TensorData]) -> Result<Vec<TensorData>, InterpError> {
    if inputs.len() != f.num_args {
        return Err(mismatch(format!("expected {} inputs, got {}", f.num_args, inputs.len())));
    }
    let mut values: Vec<Option<TensorData>> = vec![None; f.value_types.len()];
    for (i, (t, ty)) in inputs.iter().zip(f.arg_types()).enumerate() {
        if t.elem != ty.elem || !ty.admits(&t.shape) {
            return Err(mismatch(format!("input {i} of shape {:?} does not match {ty}", t.shape)));
        }
        values[i] = Some(t.clone());
    }
    for op in &f.body {
        if op.opcode == Opcode::Return {
            return Ok(op
                .operands
                .iter()
                .map(|v| values[v.index()].clone().expect("verified"))
                .collect());
        }
        let args: Vec<&TensorData> = op
            .operands
            .iter()
            .map(|v| values[v.index()].as_ref().expect("verified"))
            .collect();
        let arg_types: Vec<&TensorType> = op.operands.iter().map(|v| f.ty(*v)).collect();
        let result = eval_op(op, &args, &arg_types, f.ty(op.result()))?;
        values[op.result().index()] = Some(result);
    }
    Ok(vec![])
}

fn eval_op(
    op: &Operation,
    args: &[&TensorData],
    arg_types: &[&TensorType],
    result_ty: &TensorType,
) -> Result<TensorData, InterpError> {
    if let Some(bin) = op.opcode.elementwise() {
        let (a, b) = (args[0], args[1]);
        if a.shape != b.shape {
            return Err(mismatch(format!("{} on {:?} and {:?}", op.opcode, a.shape, b.shape)));
        }
        let mut out = TensorData::zeros(a.elem, &a.shape);
        for i in 0..a.len() {
            write(&mut out, i, arith(bin, read(a, i), read(b, i)));
        }
        return Ok(out);
    }
    match op.opcode {
        Opcode::FeMatmul => matmul(args[0], args[1]),
        Opcode::FeBroadcast => broadcast(op, args[0], arg_types[0], args[1]),
        Opcode::FeConv2d => conv2d(op, args[0], args[1]),
        Opcode::FeReduceSum => reduce_sum(args[0], op.int_attr("axis").unwrap_or(0) as usize),
        Opcode::FeConstant => {
            let shape = result_ty.static_shape().expect("constants are static");
            Ok(TensorData {
                elem: result_ty.elem,
                shape,
                bytes: op.blob_attr("value").unwrap_or_default().to_vec(),
            })
        }
        Opcode::TensorReshape => reshape(args[0], result_ty),
        other => Err(InterpError::NotSupported(other.name().into())),
    }
}

fn matmul(a: &TensorData, b: &TensorData) -> Result<TensorData, InterpError> {
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(mismatch(format!("matmul inner dims {k} vs {k2}")));
    }
    let mut out = TensorData::zeros(a.elem, &[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = zero(a.elem);
            for p in 0..k {
                acc = arith(BinaryOp::Add, acc, arith(BinaryOp::Mul, read(a, i * k + p), read(b, p * n + j)));
            }
            write(&mut out, i * n + j, acc);
        }
    }
    Ok(out)
}

fn broadcast(op: &Operation, x: &TensorData, x_ty: &TensorType, like: &TensorData) -> Result<TensorData, InterpError> {
    let dims: Vec<usize> = op.ints_attr("dims").unwrap_or_default().iter().map(|&d| d as usize).collect();
    for (k, &d) in dims.iter().enumerate() {
        let stretched = x_ty.shape[k] == Dim::Static(1);
        if x.shape[k] != like.shape[d] && !stretched {
            return Err(mismatch(format!("broadcast extent {} to {}", x.shape[k], like.shape[d])));
        }
    }
    let out_shape = like.shape.clone();
    let mut out = TensorData::zeros(x.elem, &out_shape);
    let x_strides = row_major_strides(&x.shape);
    let mut idx = vec![0usize; out_shape.len()];
    for flat in 0..num_elements(&out_shape) {
        unravel(flat, &out_shape, &mut idx);
        let mut src = 0;
        for (k, &d) in dims.iter().enumerate() {
            let coord = if x.shape[k] == 1 { 0 } else { idx[d] };
            src += coord * x_strides[k];
        }
        write(&mut out, flat, read(x, src));
    }
    Ok(out)
}

fn conv2d(op: &Operation, x: &TensorData, w: &TensorData) -> Result<TensorData, InterpError> {
    let stride = op.ints_attr("stride").unwrap_or(&[1, 1]);
    let pad = op.ints_attr("pad").unwrap_or(&[0, 0, 0, 0]);
    let (n, h, wd, c) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (kh, kw, c2, f) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    if c != c2 {
        return Err(mismatch(format!("conv2d channels {c} vs {c2}")));
    }
    let (sh, sw) = (stride[0], stride[1]);
    let (pt, pb, pl, pr) = (pad[0], pad[1], pad[2], pad[3]);
    let padded_h = h as i64 + pt + pb;
    let padded_w = wd as i64 + pl + pr;
    if padded_h < kh as i64 || padded_w < kw as i64 {
        return Err(mismatch("conv2d window larger than padded input"));
    }
    let oh = ((padded_h - kh as i64) / sh + 1) as usize;
    let ow = ((padded_w - kw as i64) / sw + 1) as usize;
    let mut out = TensorData::zeros(x.elem, &[n, oh, ow, f]);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for fo in 0..f {
                    let mut acc = zero(x.elem);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = oy as i64 * sh + ky as i64 - pt;
                            let ix = ox as i64 * sw + kx as i64 - pl;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                continue;
                            }
                            for ci in 0..c {
                                let xi = ((b * h + iy as usize) * wd + ix as usize) * c + ci;
                                let wi = ((ky * kw + kx) * c + ci) * f + fo;
                                acc = arith(BinaryOp::Add, acc, arith(BinaryOp::Mul, read(x, xi), read(w, wi)));
                            }
                        }
                    }
                    write(&mut out, ((b * oh + oy) * ow + ox) * f + fo, acc);
                }
            }
        }
    }
    Ok(out)
}

fn reduce_sum(x: &TensorData, axis: usize) -> Result<TensorData, InterpError> {
    let mut out_shape = x.shape.clone();
    out_shape.remove(axis);
    let outer: usize = x.shape[..axis].iter().product();
    let len = x.shape[axis];
    let inner: usize = x.shape[axis + 1..].iter().product();
    let mut out = TensorData::zeros(x.elem, &out_shape);
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = zero(x.elem);
            for r in 0..len {
                acc = arith(BinaryOp::Add, acc, read(x, (o * len + r) * inner + i));
            }
            write(&mut out, o * inner + i, acc);
        }
    }
    Ok(out)
}

/// Resolves a reshape target against a runtime element count.
pub fn resolve_reshape(target: &TensorType, numel: usize) -> Option<Vec<usize>> {
    let known: usize = target.shape.iter().filter_map(|d| d.as_static()).map(|n| n as usize).product();
    let mut shape = Vec::with_capacity(target.rank());
    for d in &target.shape {
        shape.push(match d.as_static() {
            Some(n) => n as usize,
            None => {
                if known == 0 || !numel.is_multiple_of(known) {
                    return None;
                }
                numel / known
            }
        });
    }
    (num_elements(&shape) == numel).then_some(shape)
}

fn reshape(x: &TensorData, target: &TensorType) -> Result<TensorData, InterpError> {
    let shape = resolve_reshape(target, x.len())
        .ok_or_else(|| mismatch(format!("cannot reshape {:?} to {target}", x.shape)))?;
    Ok(TensorData { elem: x.elem, shape, bytes: x.bytes.clone() })
}

fn unravel(mut flat: usize, shape: &[usize], idx: &mut [usize]) {
    for d in (0..shape.len()).rev() {
        idx[d] = flat % shape[d];
        flat /= shape[d];
    }
}
