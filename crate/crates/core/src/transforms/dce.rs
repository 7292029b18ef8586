use crate::ir::{FuncOp, ProgramModule};

/// Removes pure ops whose results never reach `return`.
pub fn dce(module: &ProgramModule) -> ProgramModule {
    ProgramModule::new(module.funcs.iter().map(dce_func).collect())
}

fn dce_func(f: &FuncOp) -> FuncOp {
    let mut f = f.clone();
    let mut live = vec![false; f.value_types.len()];
    let mut keep = vec![false; f.body.len()];
    // single block: one backward sweep reaches the fixpoint
    for (i, op) in f.body.iter().enumerate().rev() {
        let needed = !op.opcode.is_pure() || op.results.iter().any(|r| live.get(r.index()).copied().unwrap_or(false));
        if needed {
            keep[i] = true;
            for v in &op.operands {
                if let Some(l) = live.get_mut(v.index()) {
                    *l = true;
                }
            }
        }
    }
    let mut k = keep.iter();
    f.body.retain(|_| *k.next().expect("one flag per op"));
    f.compact();
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{ElementType, FuncBuilder, Opcode, TensorType};

    fn t() -> TensorType {
        TensorType::fixed(&[3], ElementType::I32)
    }

    #[test]
    fn dead_chain_removed() {
        let mut b = FuncBuilder::new("main", vec![t()]);
        let x = b.arg(0);
        let mut v = x;
        for _ in 0..5 {
            v = b.binary(Opcode::FeAdd, v, x).unwrap();
        }
        let live = b.binary(Opcode::FeMul, x, x).unwrap();
        let m = ProgramModule::new(vec![b.finish(&[live])]);
        let out = dce(&m);
        assert_eq!(out.main().unwrap().body.len(), 2);
        assert_eq!(dce(&out), out);
    }

    #[test]
    fn live_module_unchanged() {
        let mut b = FuncBuilder::new("main", vec![t()]);
        let a = b.binary(Opcode::FeAdd, b.arg(0), b.arg(0)).unwrap();
        let m = ProgramModule::new(vec![b.finish(&[a])]);
        assert_eq!(dce(&m), m);
    }
}
