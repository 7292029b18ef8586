use std::fmt;

use super::{shape_infer, FuncOp, Opcode, ProgramModule, SourceLocation, TensorType, MAX_RANK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiagKind {
    /// A value used before (or without) its definition.
    Dominance,
    /// Operand/result types violate the opcode's signature.
    TypeMismatch,
    /// Entry-point or function-signature problem.
    Signature,
    /// Malformed op structure (terminators, attributes, regions).
    Structure,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagKind,
    pub func: String,
    pub op_index: Option<usize>,
    pub loc: Option<SourceLocation>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.func)?;
        if let Some(i) = self.op_index {
            write!(f, " op #{i}")?;
        }
        if let Some(loc) = self.loc {
            write!(f, " ({loc})")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Checks every structural invariant; returns all problems found.
pub fn verify_module(module: &ProgramModule) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mains = module.funcs.iter().filter(|f| f.name == "main").count();
    if mains != 1 {
        diags.push(Diagnostic {
            kind: DiagKind::Signature,
            func: "main".into(),
            op_index: None,
            loc: None,
            message: format!("module must define exactly one @main, found {mains}"),
        });
    }
    for (i, f) in module.funcs.iter().enumerate() {
        if module.funcs[..i].iter().any(|g| g.name == f.name) {
            diags.push(Diagnostic {
                kind: DiagKind::Structure,
                func: f.name.clone(),
                op_index: None,
                loc: None,
                message: "duplicate function name".into(),
            });
        }
        verify_func(f, &mut diags);
    }
    diags
}

fn verify_func(f: &FuncOp, diags: &mut Vec<Diagnostic>) {
    let mut push = |kind, op_index: Option<usize>, message: String| {
        let loc = op_index.and_then(|i| f.body.get(i)).and_then(|op| op.loc);
        diags.push(Diagnostic { kind, func: f.name.clone(), op_index, loc, message });
    };

    if f.value_types.len() < f.num_args {
        push(DiagKind::Structure, None, "argument types missing".into());
        return;
    }
    for (a, t) in f.arg_types().iter().enumerate() {
        if t.rank() > MAX_RANK {
            push(DiagKind::Signature, None, format!("argument {a} exceeds rank {MAX_RANK}"));
        }
    }

    // Definition site of each value: None = undefined, Some(None) = argument.
    let mut def_site: Vec<Option<Option<usize>>> = vec![None; f.value_types.len()];
    for slot in def_site.iter_mut().take(f.num_args) {
        *slot = Some(None);
    }
    for (i, op) in f.body.iter().enumerate() {
        for r in &op.results {
            match def_site.get_mut(r.index()) {
                None => push(DiagKind::Structure, Some(i), format!("result %{} has no type", r.0)),
                Some(slot @ None) => *slot = Some(Some(i)),
                Some(Some(_)) => push(DiagKind::Structure, Some(i), format!("value %{} defined twice", r.0)),
            }
        }
    }

    match f.body.last() {
        Some(op) if op.opcode == Opcode::Return => {}
        _ => push(DiagKind::Structure, None, "function body must end in `return`".into()),
    }

    for (i, op) in f.body.iter().enumerate() {
        if op.opcode == Opcode::Return && i + 1 != f.body.len() {
            push(DiagKind::Structure, Some(i), "`return` must be the last op".into());
        }
        let mut operands_ok = true;
        for v in &op.operands {
            match def_site.get(v.index()) {
                Some(Some(None)) => {}
                Some(Some(Some(j))) if *j < i => {}
                Some(Some(Some(_))) => {
                    operands_ok = false;
                    push(DiagKind::Dominance, Some(i), format!("%{} used before its definition", v.0));
                }
                _ => {
                    operands_ok = false;
                    push(DiagKind::Dominance, Some(i), format!("%{} is never defined", v.0));
                }
            }
        }
        if !operands_ok {
            continue;
        }
        let operand_types: Vec<TensorType> = op.operands.iter().map(|v| f.ty(*v).clone()).collect();

        if op.opcode == Opcode::Return {
            if !op.results.is_empty() {
                push(DiagKind::Structure, Some(i), "`return` has no results".into());
            }
            if operand_types != f.result_types {
                push(
                    DiagKind::Signature,
                    Some(i),
                    "returned types do not match the function signature".into(),
                );
            }
            continue;
        }
        if op.results.len() != 1 {
            push(DiagKind::Structure, Some(i), format!("{} must define exactly one result", op.opcode));
            continue;
        }
        if op.body.is_some() != (op.opcode == Opcode::LinalgGeneric) {
            push(DiagKind::Structure, Some(i), "only linalg.generic carries a region".into());
            continue;
        }
        let declared = f.ty(op.results[0]);
        match shape_infer(op, &operand_types, Some(declared)) {
            Ok(t) if &t == declared => {}
            Ok(t) => push(
                DiagKind::TypeMismatch,
                Some(i),
                format!("{} result declared {declared} but inferred {t}", op.opcode),
            ),
            Err(e) => push(DiagKind::TypeMismatch, Some(i), format!("{}: {e}", op.opcode)),
        }
        if op.opcode == Opcode::LinalgGeneric {
            for msg in crate::linalg::generic_problems(op, &operand_types) {
                push(DiagKind::Structure, Some(i), msg);
            }
        }
    }
}
