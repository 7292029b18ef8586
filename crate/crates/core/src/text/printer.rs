use std::fmt::Write;

use crate::ir::{
    Attr, ElementType, FuncOp, IteratorKind, Opcode, Operation, ProgramModule, ScalarBody,
    ScalarOp, ValueId,
};

/// Prints `module` one op per line. The output reparses to an equal module.
pub fn print_module(module: &ProgramModule) -> String {
    let mut out = String::from("module {\n");
    for f in &module.funcs {
        print_func(&mut out, f);
    }
    out.push_str("}\n");
    out
}

fn value_name(f: &FuncOp, v: ValueId) -> String {
    if v.index() < f.num_args {
        format!("%arg{}", v.0)
    } else {
        format!("%{}", v.index() - f.num_args)
    }
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(", ")
}

fn print_func(out: &mut String, f: &FuncOp) {
    let args = join(&f.arg_types().iter().enumerate().collect::<Vec<_>>(), |(i, t)| format!("%arg{i}: {t}"));
    let results = join(&f.result_types, |t| t.to_string());
    let _ = writeln!(out, "  func @{}({args}) -> ({results}) {{", f.name);
    for op in &f.body {
        out.push_str("    ");
        print_op(out, f, op);
        out.push('\n');
    }
    out.push_str("  }\n");
}

fn operand_list(f: &FuncOp, vs: &[ValueId]) -> String {
    join(vs, |v| value_name(f, *v))
}

fn type_list(f: &FuncOp, vs: &[ValueId]) -> String {
    join(vs, |v| f.ty(*v).to_string())
}

fn print_op(out: &mut String, f: &FuncOp, op: &Operation) {
    if op.opcode == Opcode::Return {
        out.push_str("return");
        if !op.operands.is_empty() {
            let _ = write!(out, " {} : {}", operand_list(f, &op.operands), type_list(f, &op.operands));
        }
        return;
    }
    let results = operand_list(f, &op.results);
    let result_ty = op.results.first().map(|r| f.ty(*r).to_string()).unwrap_or_default();
    if op.opcode == Opcode::LinalgGeneric {
        let (ins, outs) = op.operands.split_at(op.operands.len().saturating_sub(1));
        let _ = write!(out, "{results} = linalg.generic {}", generic_attrs(op));
        let _ = write!(out, " ins({}", operand_list(f, ins));
        if !ins.is_empty() {
            let _ = write!(out, " : {}", type_list(f, ins));
        }
        let _ = writeln!(out, ") outs({} : {}) {{", operand_list(f, outs), type_list(f, outs));
        if let Some(body) = &op.body {
            print_body(out, body);
        }
        let _ = write!(out, "    }} -> {result_ty}");
        return;
    }
    let _ = write!(out, "{results} = {}({})", op.opcode, operand_list(f, &op.operands));
    if !op.attrs.is_empty() {
        let items: Vec<String> = op.attrs.iter().map(|(k, v)| format!("{k} = {}", attr_text(v))).collect();
        let _ = write!(out, " {{{}}}", items.join(", "));
    }
    let _ = write!(out, " : ({}) -> {result_ty}", type_list(f, &op.operands));
}

/// Generic attributes in the conventional order: iterators, maps, then the rest.
fn generic_attrs(op: &Operation) -> String {
    let mut items = Vec::new();
    for key in ["iterator_types", "indexing_maps"] {
        if let Some(v) = op.attrs.get(key) {
            items.push(format!("{key} = {}", attr_text(v)));
        }
    }
    for (k, v) in &op.attrs {
        if k != "iterator_types" && k != "indexing_maps" {
            items.push(format!("{k} = {}", attr_text(v)));
        }
    }
    format!("{{{}}}", items.join(", "))
}

pub(crate) fn attr_text(a: &Attr) -> String {
    match a {
        Attr::Int(v) => v.to_string(),
        Attr::Ints(vs) => format!("[{}]", join(vs, |v| v.to_string())),
        Attr::Maps(ms) => format!("[{}]", join(ms, |m| m.to_string())),
        Attr::Iterators(its) => format!("[{}]", join(its, |k: &IteratorKind| format!("\"{}\"", k.name()))),
        Attr::Blob(bytes) => {
            let mut s = String::from("dense<\"0x");
            for b in bytes {
                let _ = write!(s, "{b:02X}");
            }
            s.push_str("\">");
            s
        }
    }
}

fn scalar_name(body: &ScalarBody, v: u32) -> String {
    if (v as usize) < body.args.len() {
        format!("%a{v}")
    } else {
        format!("%s{v}")
    }
}

pub(crate) fn scalar_const_text(ty: ElementType, bits: u32) -> String {
    match ty {
        ElementType::F32 => {
            let x = f32::from_bits(bits);
            if x.is_finite() {
                format!("{x:?}")
            } else {
                format!("0x{bits:08X}")
            }
        }
        ElementType::I32 => (bits as i32).to_string(),
        ElementType::I8 => (bits as u8 as i8).to_string(),
    }
}

fn print_body(out: &mut String, body: &ScalarBody) {
    let args = join(&body.args.iter().enumerate().collect::<Vec<_>>(), |(i, t)| format!("%a{i}: {t}"));
    let _ = writeln!(out, "    ^bb0({args}):");
    for (i, op) in body.ops.iter().enumerate() {
        let v = (body.args.len() + i) as u32;
        let name = scalar_name(body, v);
        match *op {
            ScalarOp::Binary { op, ty, lhs, rhs } => {
                let suffix = if ty.is_float() { "f" } else { "i" };
                let _ = writeln!(
                    out,
                    "      {name} = arith.{}{suffix} {}, {} : {ty}",
                    op.stem(),
                    scalar_name(body, lhs),
                    scalar_name(body, rhs)
                );
            }
            ScalarOp::Const { ty, bits } => {
                let _ = writeln!(out, "      {name} = arith.constant {} : {ty}", scalar_const_text(ty, bits));
            }
        }
    }
    let ys = join(&body.yields, |y| scalar_name(body, *y));
    let tys = join(&body.yields, |y| body.value_type(*y).map(|t| t.to_string()).unwrap_or_else(|| "?".into()));
    let _ = writeln!(out, "      linalg.yield {ys} : {tys}");
}
