//! Typed variable universe for second-order jet-space expressions.
//!
//! A universe fixes the ordered list of variables every polynomial in it may
//! mention: the base variables `x[1]..x[n]`, the dependent variable `y`, the
//! gradient variables `dy[1]..dy[n]`, the Hessian variables `d2y[i][j]`
//! (stored with `i <= j`), and optionally a tail of named symbolic constants.
//! The position in that list is also the variable's rank in the monomial
//! order.

use std::fmt;
use std::sync::Arc;

use crate::symcore::SymError;

/// What a variable stands for. Indices are 1-based as in the usual notation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    /// Independent variable `x[i]`.
    Base(usize),
    /// Dependent variable `y`.
    Dependent,
    /// Gradient entry `dy[i]`, the first-order jet variable.
    Jet1(usize),
    /// Hessian entry `d2y[i][j]` with `i <= j`, the second-order jet variable.
    Jet2(usize, usize),
    /// Auxiliary symbolic constant, used by internal derivations and tests.
    Param(usize),
}

/// Handle to a variable of some universe: its position in the variable list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The ordered variable list of a jet space with `n` independent variables.
#[derive(Debug, PartialEq, Eq)]
pub struct VarUniverse {
    n: usize,
    kinds: Vec<VarKind>,
    names: Vec<String>,
}

impl VarUniverse {
    /// Universe `x[1..n], y, dy[1..n], d2y[i][j]` without parameters.
    pub fn new(n: usize) -> Arc<Self> {
        Self::with_params(n, &[])
    }

    /// Universe with a tail of named symbolic constants appended after the
    /// jet variables.
    pub fn with_params(n: usize, params: &[&str]) -> Arc<Self> {
        assert!(n >= 2, "universe requires n >= 2");
        let mut kinds = Vec::new();
        let mut names = Vec::new();
        for i in 1..=n {
            kinds.push(VarKind::Base(i));
            names.push(format!("x[{i}]"));
        }
        kinds.push(VarKind::Dependent);
        names.push("y".to_string());
        for i in 1..=n {
            kinds.push(VarKind::Jet1(i));
            names.push(format!("dy[{i}]"));
        }
        for i in 1..=n {
            for j in i..=n {
                kinds.push(VarKind::Jet2(i, j));
                names.push(format!("d2y[{i}][{j}]"));
            }
        }
        for (p, name) in params.iter().enumerate() {
            kinds.push(VarKind::Param(p + 1));
            names.push((*name).to_string());
        }
        let uni = VarUniverse { n, kinds, names };
        debug_assert!(uni.names.iter().collect::<std::collections::BTreeSet<_>>().len() == uni.names.len());
        Arc::new(uni)
    }

    /// A copy of this universe with extra parameters appended.
    pub fn extend_params(self: &Arc<Self>, params: &[&str]) -> Arc<Self> {
        let existing: Vec<&str> = self
            .kinds
            .iter()
            .zip(&self.names)
            .filter(|(k, _)| matches!(k, VarKind::Param(_)))
            .map(|(_, n)| n.as_str())
            .collect();
        let mut all = existing;
        all.extend_from_slice(params);
        Self::with_params(self.n, &all)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of variables.
    pub fn width(&self) -> usize {
        self.kinds.len()
    }

    pub fn kind(&self, v: Var) -> VarKind {
        self.kinds[v.0]
    }

    pub fn name(&self, v: Var) -> &str {
        &self.names[v.0]
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + Clone + '_ {
        (0..self.width()).map(Var)
    }

    pub fn x(&self, i: usize) -> Var {
        assert!((1..=self.n).contains(&i), "x index {i} out of 1..={}", self.n);
        Var(i - 1)
    }

    pub fn y(&self) -> Var {
        Var(self.n)
    }

    /// The base variable `x[i]` for `i <= n`, or `y` for `i = n + 1`.
    ///
    /// This is the index aliasing used throughout when indices range over
    /// `1..=n+1`.
    pub fn x_or_y(&self, i: usize) -> Var {
        if i == self.n + 1 {
            self.y()
        } else {
            self.x(i)
        }
    }

    pub fn jet1(&self, i: usize) -> Var {
        assert!((1..=self.n).contains(&i), "dy index {i} out of 1..={}", self.n);
        Var(self.n + 1 + (i - 1))
    }

    /// Hessian variable for the unordered pair `(i, j)`.
    pub fn jet2(&self, i: usize, j: usize) -> Var {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        assert!((1..=self.n).contains(&i) && j <= self.n, "d2y index ({i},{j}) out of range");
        // Row-major upper triangle: pairs (1,1)..(1,n), (2,2)..(2,n), ...
        let before = (i - 1) * (2 * self.n + 2 - i) / 2;
        Var(2 * self.n + 1 + before + (j - i))
    }

    pub fn param(&self, p: usize) -> Var {
        let v = self
            .kinds
            .iter()
            .position(|k| *k == VarKind::Param(p))
            .expect("parameter not present in universe");
        Var(v)
    }

    pub fn lookup(&self, name: &str) -> Result<Var, SymError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(Var)
            .ok_or_else(|| SymError::UnknownVariable(name.to_string()))
    }

    pub fn jet1_vars(&self) -> impl Iterator<Item = Var> + Clone + '_ {
        (1..=self.n).map(|i| self.jet1(i))
    }

    pub fn jet2_vars(&self) -> impl Iterator<Item = Var> + Clone + '_ {
        (2 * self.n + 1..2 * self.n + 1 + self.n * (self.n + 1) / 2).map(Var)
    }

    pub fn is_jet1(&self, v: Var) -> bool {
        matches!(self.kind(v), VarKind::Jet1(_))
    }

    pub fn is_jet2(&self, v: Var) -> bool {
        matches!(self.kind(v), VarKind::Jet2(_, _))
    }

    /// True when `self`'s variable list is an initial segment of `other`'s.
    /// Expressions then embed by zero-padding exponent vectors.
    pub fn is_prefix_of(&self, other: &VarUniverse) -> bool {
        self.n == other.n
            && self.width() <= other.width()
            && self.kinds[..] == other.kinds[..self.width()]
            && self.names[..] == other.names[..self.width()]
    }
}

/// Cheap universe identity check used by every binary operation.
pub fn same_universe(a: &Arc<VarUniverse>, b: &Arc<VarUniverse>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

impl fmt::Display for VarUniverse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "universe(n={}, vars=[", self.n)?;
        for (i, name) in self.names.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{name}")?;
        }
        write!(f, "])")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet2_indexing_is_triangular_and_symmetric() {
        let u = VarUniverse::new(3);
        assert_eq!(u.width(), 3 + 1 + 3 + 6);
        assert_eq!(u.jet2(1, 2), u.jet2(2, 1));
        let mut seen = std::collections::BTreeSet::new();
        for i in 1..=3 {
            for j in i..=3 {
                assert!(seen.insert(u.jet2(i, j)));
                assert_eq!(u.kind(u.jet2(i, j)), VarKind::Jet2(i, j));
            }
        }
    }

    #[test]
    fn alias_maps_top_index_to_dependent() {
        let u = VarUniverse::new(2);
        assert_eq!(u.x_or_y(3), u.y());
        assert_eq!(u.x_or_y(1), u.x(1));
    }

    #[test]
    fn prefix_embedding_with_params() {
        let u = VarUniverse::new(2);
        let v = u.extend_params(&["a", "b"]);
        assert!(u.is_prefix_of(&v));
        assert!(!v.is_prefix_of(&u));
        assert_eq!(v.name(v.param(2)), "b");
    }

    #[test]
    fn lookup_unknown_is_an_error() {
        let u = VarUniverse::new(2);
        assert!(u.lookup("x[1]").is_ok());
        assert!(matches!(u.lookup("z"), Err(SymError::UnknownVariable(_))));
    }
}
