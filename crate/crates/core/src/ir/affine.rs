use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IteratorKind {
    Parallel,
    Reduction,
}

impl IteratorKind {
    pub fn name(self) -> &'static str {
        match self {
            IteratorKind::Parallel => "parallel",
            IteratorKind::Reduction => "reduction",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "parallel" => Some(IteratorKind::Parallel),
            "reduction" => Some(IteratorKind::Reduction),
            _ => None,
        }
    }
}

/// A projected permutation: every result is a single iteration dimension.
///
/// `results[p] = d` means position `p` of the operand's data space is indexed
/// by iteration dimension `d`. Dropped dims express broadcasts, reordered dims
/// express permutations.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AffineMap {
    pub num_dims: usize,
    pub results: Vec<usize>,
}

pub(crate) const DIM_NAMES: [&str; 4] = ["i", "j", "k", "l"];

pub(crate) fn dim_name(d: usize) -> String {
    DIM_NAMES
        .get(d)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("d{d}"))
}

impl AffineMap {
    pub fn new(num_dims: usize, results: Vec<usize>) -> Self {
        Self { num_dims, results }
    }

    pub fn identity(num_dims: usize) -> Self {
        Self::new(num_dims, (0..num_dims).collect())
    }

    pub fn num_results(&self) -> usize {
        self.results.len()
    }

    pub fn is_identity(&self) -> bool {
        self.results.len() == self.num_dims && self.results.iter().enumerate().all(|(p, &d)| p == d)
    }

    /// Every result indexes a valid domain dim.
    pub fn is_well_formed(&self) -> bool {
        self.results.iter().all(|&d| d < self.num_dims)
    }

    /// Each domain dim appears exactly once among the results.
    pub fn is_permutation(&self) -> bool {
        if self.results.len() != self.num_dims {
            return false;
        }
        let mut seen = vec![false; self.num_dims];
        for &d in &self.results {
            if d >= self.num_dims || seen[d] {
                return false;
            }
            seen[d] = true;
        }
        true
    }

    pub fn uses_dim(&self, d: usize) -> bool {
        self.results.contains(&d)
    }

    /// Position of `d` among the results, if present.
    pub fn position_of(&self, d: usize) -> Option<usize> {
        self.results.iter().position(|&r| r == d)
    }

    pub fn apply(&self, point: &[usize], out: &mut Vec<usize>) {
        out.clear();
        out.extend(self.results.iter().map(|&d| point[d]));
    }

    /// Rewrites the domain through `old_dim -> new_dim`, keeping results in place.
    pub fn rename_dims(&self, rename: &[usize], new_num_dims: usize) -> AffineMap {
        AffineMap::new(new_num_dims, self.results.iter().map(|&d| rename[d]).collect())
    }
}

impl fmt::Display for AffineMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = (0..self.num_dims).map(dim_name).collect();
        let results: Vec<String> = self.results.iter().map(|&d| dim_name(d)).collect();
        write!(f, "affine_map<({}) -> ({})>", dims.join(", "), results.join(", "))
    }
}
