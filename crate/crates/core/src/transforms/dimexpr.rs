use std::fmt;

/// Symbolic tensor extent in terms of `@main` argument dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum DimExpr {
    Const(i64),
    /// Runtime extent of `axis` of argument `arg`.
    ArgDim { arg: u32, axis: u32 },
    Mul(Box<DimExpr>, Box<DimExpr>),
    CeilDiv(Box<DimExpr>, Box<DimExpr>),
}

impl DimExpr {
    pub fn times(a: DimExpr, b: DimExpr) -> DimExpr {
        DimExpr::Mul(Box::new(a), Box::new(b))
    }

    pub fn ceil_div(a: DimExpr, b: DimExpr) -> DimExpr {
        DimExpr::CeilDiv(Box::new(a), Box::new(b))
    }

    /// Product of `dims`; the empty product is `Const(1)`.
    pub fn product(dims: &[DimExpr]) -> DimExpr {
        let mut it = dims.iter().cloned();
        match it.next() {
            None => DimExpr::Const(1),
            Some(first) => it.fold(first, DimExpr::times),
        }
    }

    /// Evaluates against concrete argument shapes. `None` on a missing
    /// argument/axis or division by zero.
    pub fn eval(&self, arg_shapes: &[Vec<usize>]) -> Option<i64> {
        Some(match self {
            DimExpr::Const(c) => *c,
            DimExpr::ArgDim { arg, axis } => *arg_shapes.get(*arg as usize)?.get(*axis as usize)? as i64,
            DimExpr::Mul(a, b) => a.eval(arg_shapes)?.checked_mul(b.eval(arg_shapes)?)?,
            DimExpr::CeilDiv(a, b) => ceil_div(a.eval(arg_shapes)?, b.eval(arg_shapes)?)?,
        })
    }
}

/// Ceiling division of non-negative `a` by positive `b`.
pub fn ceil_div(a: i64, b: i64) -> Option<i64> {
    if b <= 0 || a < 0 {
        return None;
    }
    Some(a / b + i64::from(a % b != 0))
}

impl fmt::Display for DimExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimExpr::Const(c) => write!(f, "{c}"),
            DimExpr::ArgDim { arg, axis } => write!(f, "dim(%arg{arg}, {axis})"),
            DimExpr::Mul(a, b) => write!(f, "({a} * {b})"),
            DimExpr::CeilDiv(a, b) => write!(f, "ceildiv({a}, {b})"),
        }
    }
}
