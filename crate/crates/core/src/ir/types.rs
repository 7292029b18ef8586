use std::fmt;

/// Highest tensor rank the compiler and runtime accept.
pub const MAX_RANK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementType {
    F32,
    I32,
    I8,
}

impl ElementType {
    pub const ALL: [ElementType; 3] = [ElementType::F32, ElementType::I32, ElementType::I8];

    pub fn byte_width(self) -> usize {
        match self {
            ElementType::F32 | ElementType::I32 => 4,
            ElementType::I8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementType::F32 => "f32",
            ElementType::I32 => "i32",
            ElementType::I8 => "i8",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "f32" => Some(ElementType::F32),
            "i32" => Some(ElementType::I32),
            "i8" => Some(ElementType::I8),
            _ => None,
        }
    }

    /// Stable numeric code used by the binary formats.
    pub fn code(self) -> u8 {
        match self {
            ElementType::F32 => 0,
            ElementType::I32 => 1,
            ElementType::I8 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ElementType::F32),
            1 => Some(ElementType::I32),
            2 => Some(ElementType::I8),
            _ => None,
        }
    }

    pub fn is_float(self) -> bool {
        self == ElementType::F32
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One tensor extent; `Dynamic` prints as `?`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dim {
    Static(u64),
    Dynamic,
}

impl Dim {
    pub fn as_static(self) -> Option<u64> {
        match self {
            Dim::Static(n) => Some(n),
            Dim::Dynamic => None,
        }
    }

    pub fn is_dynamic(self) -> bool {
        matches!(self, Dim::Dynamic)
    }

    /// Two dims are compatible unless both are static and differ.
    pub fn compatible(self, other: Dim) -> bool {
        match (self, other) {
            (Dim::Static(a), Dim::Static(b)) => a == b,
            _ => true,
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Static(n) => write!(f, "{n}"),
            Dim::Dynamic => f.write_str("?"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TensorType {
    pub shape: Vec<Dim>,
    pub elem: ElementType,
}

impl TensorType {
    pub fn new(shape: Vec<Dim>, elem: ElementType) -> Self {
        Self { shape, elem }
    }

    pub fn fixed(shape: &[u64], elem: ElementType) -> Self {
        Self::new(shape.iter().map(|&n| Dim::Static(n)).collect(), elem)
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_static(&self) -> bool {
        self.shape.iter().all(|d| !d.is_dynamic())
    }

    pub fn static_shape(&self) -> Option<Vec<usize>> {
        self.shape
            .iter()
            .map(|d| d.as_static().map(|n| n as usize))
            .collect()
    }

    pub fn num_elements(&self) -> Option<u64> {
        self.shape
            .iter()
            .try_fold(1u64, |acc, d| d.as_static().and_then(|n| acc.checked_mul(n)))
    }

    /// True when `shape` (runtime extents) is an instance of this type.
    pub fn admits(&self, shape: &[usize]) -> bool {
        shape.len() == self.rank()
            && self
                .shape
                .iter()
                .zip(shape)
                .all(|(d, &n)| d.as_static().is_none_or(|s| s as usize == n))
    }
}

impl fmt::Display for TensorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("tensor<")?;
        for d in &self.shape {
            write!(f, "{d}x")?;
        }
        write!(f, "{}>", self.elem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_widths() {
        assert_eq!(ElementType::F32.byte_width(), 4);
        assert_eq!(ElementType::I32.byte_width(), 4);
        assert_eq!(ElementType::I8.byte_width(), 1);
    }

    #[test]
    fn tensor_type_display() {
        let t = TensorType::new(vec![Dim::Static(2), Dim::Dynamic], ElementType::F32);
        assert_eq!(t.to_string(), "tensor<2x?xf32>");
        assert_eq!(TensorType::fixed(&[], ElementType::I8).to_string(), "tensor<i8>");
        assert_eq!(TensorType::fixed(&[3, 4], ElementType::I32).num_elements(), Some(12));
        assert_eq!(t.num_elements(), None);
    }

    #[test]
    fn admits_runtime_shapes() {
        let t = TensorType::new(vec![Dim::Dynamic, Dim::Static(3)], ElementType::F32);
        assert!(t.admits(&[7, 3]));
        assert!(!t.admits(&[7, 4]));
        assert!(!t.admits(&[7]));
    }
}
