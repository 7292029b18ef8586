//! Scalar region bodies for generic ops and the shared element arithmetic.

use super::types::ElementType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Max,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Max];

    /// Mnemonic without the `f`/`i` suffix.
    pub fn stem(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Max => "max",
        }
    }

    pub fn from_stem(s: &str) -> Option<Self> {
        BinaryOp::ALL.into_iter().find(|op| op.stem() == s)
    }

    pub fn code(self) -> u8 {
        match self {
            BinaryOp::Add => 0,
            BinaryOp::Sub => 1,
            BinaryOp::Mul => 2,
            BinaryOp::Max => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        BinaryOp::ALL.get(c as usize).copied()
    }

    /// Evaluates on raw element bits. Integers wrap at their own width;
    /// f32 follows IEEE round-to-nearest-even with no contraction.
    pub fn eval_bits(self, ty: ElementType, a: u32, b: u32) -> u32 {
        match ty {
            ElementType::F32 => {
                let (x, y) = (f32::from_bits(a), f32::from_bits(b));
                let r = match self {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                    BinaryOp::Max => max_f32(x, y),
                };
                r.to_bits()
            }
            ElementType::I32 => {
                let (x, y) = (a as i32, b as i32);
                let r = match self {
                    BinaryOp::Add => x.wrapping_add(y),
                    BinaryOp::Sub => x.wrapping_sub(y),
                    BinaryOp::Mul => x.wrapping_mul(y),
                    BinaryOp::Max => x.max(y),
                };
                r as u32
            }
            ElementType::I8 => {
                let (x, y) = (a as u8 as i8, b as u8 as i8);
                let r = match self {
                    BinaryOp::Add => x.wrapping_add(y),
                    BinaryOp::Sub => x.wrapping_sub(y),
                    BinaryOp::Mul => x.wrapping_mul(y),
                    BinaryOp::Max => x.max(y),
                };
                r as u8 as u32
            }
        }
    }
}

/// NaN-propagating maximum; ties (including `-0` vs `+0`) keep the left operand.
pub fn max_f32(x: f32, y: f32) -> f32 {
    if x.is_nan() {
        x
    } else if y.is_nan() {
        y
    } else if x >= y {
        x
    } else {
        y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalarOp {
    Binary {
        op: BinaryOp,
        ty: ElementType,
        lhs: u32,
        rhs: u32,
    },
    /// Constant element; `bits` holds the element value (low byte for `i8`).
    Const { ty: ElementType, bits: u32 },
}

impl ScalarOp {
    pub fn ty(&self) -> ElementType {
        match self {
            ScalarOp::Binary { ty, .. } | ScalarOp::Const { ty, .. } => *ty,
        }
    }

    pub fn operands(&self) -> Vec<u32> {
        match self {
            ScalarOp::Binary { lhs, rhs, .. } => vec![*lhs, *rhs],
            ScalarOp::Const { .. } => vec![],
        }
    }
}

/// Single-block scalar region. Value `v` names block argument `v` when
/// `v < args.len()`, otherwise the result of `ops[v - args.len()]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ScalarBody {
    pub args: Vec<ElementType>,
    pub ops: Vec<ScalarOp>,
    pub yields: Vec<u32>,
}

impl ScalarBody {
    pub fn num_values(&self) -> usize {
        self.args.len() + self.ops.len()
    }

    pub fn value_type(&self, v: u32) -> Option<ElementType> {
        let v = v as usize;
        if v < self.args.len() {
            Some(self.args[v])
        } else {
            self.ops.get(v - self.args.len()).map(|op| op.ty())
        }
    }

    /// Whether any op or yield reads block argument `arg`.
    pub fn reads_arg(&self, arg: usize) -> bool {
        let a = arg as u32;
        self.yields.contains(&a) || self.ops.iter().any(|op| op.operands().contains(&a))
    }

    /// Structural problems, in op order. Empty when the body is well formed.
    pub fn check(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (i, op) in self.ops.iter().enumerate() {
            let own = (self.args.len() + i) as u32;
            for v in op.operands() {
                if v >= own {
                    errs.push(format!("scalar op {i} uses value {v} before its definition"));
                } else if self.value_type(v) != Some(op.ty()) {
                    errs.push(format!("scalar op {i} operand {v} has the wrong element type"));
                }
            }
        }
        if self.yields.is_empty() {
            errs.push("body has no yield".into());
        }
        for &y in &self.yields {
            if y as usize >= self.num_values() {
                errs.push(format!("yield of undefined value {y}"));
            }
        }
        errs
    }

    /// Evaluates the body on argument bits, writing one value per yield.
    pub fn eval(&self, args: &[u32], scratch: &mut Vec<u32>, out: &mut [u32]) {
        scratch.clear();
        scratch.extend_from_slice(args);
        for op in &self.ops {
            let v = match *op {
                ScalarOp::Binary { op, ty, lhs, rhs } => {
                    op.eval_bits(ty, scratch[lhs as usize], scratch[rhs as usize])
                }
                ScalarOp::Const { bits, .. } => bits,
            };
            scratch.push(v);
        }
        for (o, &y) in out.iter_mut().zip(&self.yields) {
            *o = scratch[y as usize];
        }
    }
}

/// Canonical 32-bit register form of an element read from memory.
pub fn load_bits(ty: ElementType, bytes: &[u8]) -> u32 {
    match ty {
        ElementType::F32 | ElementType::I32 => u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
        ElementType::I8 => bytes[0] as u32,
    }
}

pub fn store_bits(ty: ElementType, bits: u32, bytes: &mut [u8]) {
    match ty {
        ElementType::F32 | ElementType::I32 => bytes[..4].copy_from_slice(&bits.to_le_bytes()),
        ElementType::I8 => bytes[0] = bits as u8,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_ops_wrap_at_width() {
        assert_eq!(BinaryOp::Add.eval_bits(ElementType::I8, 127, 1), 0x80);
        assert_eq!(BinaryOp::Max.eval_bits(ElementType::I8, 0x80, 1), 1);
        assert_eq!(BinaryOp::Mul.eval_bits(ElementType::I32, i32::MAX as u32, 2), (-2i32) as u32);
    }

    #[test]
    fn max_keeps_left_on_ties() {
        assert_eq!(max_f32(-0.0, 0.0).to_bits(), (-0.0f32).to_bits());
        assert!(max_f32(f32::NAN, 1.0).is_nan());
        assert!(max_f32(1.0, f32::NAN).is_nan());
    }

    #[test]
    fn body_eval_mul_add() {
        let body = ScalarBody {
            args: vec![ElementType::F32; 3],
            ops: vec![
                ScalarOp::Binary { op: BinaryOp::Mul, ty: ElementType::F32, lhs: 0, rhs: 1 },
                ScalarOp::Binary { op: BinaryOp::Add, ty: ElementType::F32, lhs: 2, rhs: 3 },
            ],
            yields: vec![4],
        };
        assert!(body.check().is_empty());
        let mut scratch = Vec::new();
        let mut out = [0u32];
        body.eval(&[2f32.to_bits(), 3f32.to_bits(), 1f32.to_bits()], &mut scratch, &mut out);
        assert_eq!(f32::from_bits(out[0]), 7.0);
        assert!(body.reads_arg(2));
    }
}
