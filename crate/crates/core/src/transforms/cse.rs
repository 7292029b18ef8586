use std::collections::HashMap;

use crate::ir::{Attrs, FuncOp, Opcode, ProgramModule, ScalarBody, TensorType, ValueId};

type OpKey = (Opcode, Vec<ValueId>, Attrs, Option<ScalarBody>, TensorType);

/// Merges structurally identical pure ops; later duplicates are redirected
/// to the first occurrence and removed.
pub fn cse(module: &ProgramModule) -> ProgramModule {
    ProgramModule::new(module.funcs.iter().map(cse_func).collect())
}

fn cse_func(f: &FuncOp) -> FuncOp {
    let mut f = f.clone();
    let mut seen: HashMap<OpKey, ValueId> = HashMap::new();
    let mut body = Vec::with_capacity(f.body.len());
    let mut redirect: Vec<Option<ValueId>> = vec![None; f.value_types.len()];
    for mut op in std::mem::take(&mut f.body) {
        for v in &mut op.operands {
            if let Some(to) = redirect[v.index()] {
                *v = to;
            }
        }
        if !op.opcode.is_pure() || op.results.len() != 1 {
            body.push(op);
            continue;
        }
        let key = (
            op.opcode,
            op.operands.clone(),
            op.attrs.clone(),
            op.body.clone(),
            f.value_types[op.result().index()].clone(),
        );
        match seen.get(&key) {
            Some(&first) => redirect[op.result().index()] = Some(first),
            None => {
                seen.insert(key, op.result());
                body.push(op);
            }
        }
    }
    f.body = body;
    f.compact();
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{ElementType, FuncBuilder};

    fn t() -> TensorType {
        TensorType::fixed(&[2, 2], ElementType::F32)
    }

    #[test]
    fn duplicate_add_merged() {
        let mut b = FuncBuilder::new("main", vec![t(), t()]);
        let a1 = b.binary(Opcode::FeAdd, b.arg(0), b.arg(1)).unwrap();
        let a2 = b.binary(Opcode::FeAdd, b.arg(0), b.arg(1)).unwrap();
        let r = b.binary(Opcode::FeMul, a1, a2).unwrap();
        let m = ProgramModule::new(vec![b.finish(&[r])]);
        let out = cse(&m);
        let f = out.main().unwrap();
        assert_eq!(f.body.len(), 3);
        assert_eq!(f.body[1].operands, vec![f.body[0].result(), f.body[0].result()]);
        assert_eq!(cse(&out), out);
    }

    #[test]
    fn no_duplicates_is_fixpoint() {
        let mut b = FuncBuilder::new("main", vec![t(), t()]);
        let a = b.binary(Opcode::FeAdd, b.arg(0), b.arg(1)).unwrap();
        let s = b.binary(Opcode::FeSub, b.arg(0), b.arg(1)).unwrap();
        let r = b.binary(Opcode::FeMul, a, s).unwrap();
        let m = ProgramModule::new(vec![b.finish(&[r])]);
        assert_eq!(cse(&m), m);
    }
}
