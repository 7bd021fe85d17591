//! Sparse multivariate polynomials over arbitrary-precision rationals.
//!
//! Terms are kept in a `BTreeMap` ordered by the graded-lexicographic order
//! on exponent vectors (total degree first, then lexicographic with earlier
//! variables weighing more), so iteration order, leading terms and printing
//! are all deterministic.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::symcore::vars::{same_universe, Var, VarUniverse};

/// Exact rational number; the coefficient type of every polynomial.
pub type Scalar = BigRational;

pub fn scalar(num: i64, den: i64) -> Scalar {
    Scalar::new(BigInt::from(num), BigInt::from(den))
}

pub fn scalar_int(num: i64) -> Scalar {
    Scalar::from(BigInt::from(num))
}

/// Exponent vector, one entry per universe variable.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Mono(Box<[u32]>);

impl Mono {
    pub fn unit(width: usize) -> Self {
        Mono(vec![0; width].into_boxed_slice())
    }

    pub fn var(width: usize, v: Var, e: u32) -> Self {
        let mut m = vec![0; width];
        m[v.0] = e;
        Mono(m.into_boxed_slice())
    }

    pub(crate) fn from_boxed(exps: Box<[u32]>) -> Mono {
        Mono(exps)
    }

    pub fn exp(&self, v: Var) -> u32 {
        self.0[v.0]
    }

    pub fn exps(&self) -> &[u32] {
        &self.0
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_unit(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Mono) -> Mono {
        Mono(self.0.iter().zip(other.0.iter()).map(|(a, b)| a + b).collect())
    }

    /// Componentwise quotient, when `other` divides `self`.
    pub fn div(&self, other: &Mono) -> Option<Mono> {
        let mut out = Vec::with_capacity(self.0.len());
        for (a, b) in self.0.iter().zip(other.0.iter()) {
            if a < b {
                return None;
            }
            out.push(a - b);
        }
        Some(Mono(out.into_boxed_slice()))
    }

    fn padded(&self, width: usize) -> Mono {
        let mut m = self.0.to_vec();
        m.resize(width, 0);
        Mono(m.into_boxed_slice())
    }

    fn truncated(&self, width: usize) -> Option<Mono> {
        if self.0[width..].iter().any(|&e| e != 0) {
            return None;
        }
        Some(Mono(self.0[..width].to_vec().into_boxed_slice()))
    }
}

impl Ord for Mono {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.total_degree().cmp(&other.total_degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        for (a, b) in self.0.iter().zip(other.0.iter()) {
            match a.cmp(b) {
                Ordering::Equal => {}
                ord => return ord,
            }
        }
        Ordering::Equal
    }
}

impl PartialOrd for Mono {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse polynomial; invariant: no stored coefficient is zero.
#[derive(Clone)]
pub struct Polynomial {
    uni: Arc<VarUniverse>,
    terms: BTreeMap<Mono, Scalar>,
}

impl PartialEq for Polynomial {
    fn eq(&self, other: &Self) -> bool {
        same_universe(&self.uni, &other.uni) && self.terms == other.terms
    }
}

impl Eq for Polynomial {}

impl Polynomial {
    pub fn zero(uni: &Arc<VarUniverse>) -> Self {
        Polynomial { uni: Arc::clone(uni), terms: BTreeMap::new() }
    }

    pub fn one(uni: &Arc<VarUniverse>) -> Self {
        Self::constant(uni, Scalar::one())
    }

    pub fn constant(uni: &Arc<VarUniverse>, c: Scalar) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(Mono::unit(uni.width()), c);
        }
        Polynomial { uni: Arc::clone(uni), terms }
    }

    pub fn var(uni: &Arc<VarUniverse>, v: Var) -> Self {
        Self::var_pow(uni, v, 1)
    }

    pub fn var_pow(uni: &Arc<VarUniverse>, v: Var, e: u32) -> Self {
        assert!(v.0 < uni.width(), "variable outside universe");
        if e == 0 {
            return Self::one(uni);
        }
        let mut terms = BTreeMap::new();
        terms.insert(Mono::var(uni.width(), v, e), Scalar::one());
        Polynomial { uni: Arc::clone(uni), terms }
    }

    pub fn from_terms(uni: &Arc<VarUniverse>, it: impl IntoIterator<Item = (Mono, Scalar)>) -> Self {
        let mut p = Self::zero(uni);
        for (m, c) in it {
            p.add_term(m, c);
        }
        p
    }

    pub fn universe(&self) -> &Arc<VarUniverse> {
        &self.uni
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Mono, &Scalar)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.as_constant().map(|c| c.is_one()).unwrap_or(false)
    }

    /// `Some(c)` when the polynomial is the constant `c` (including zero).
    pub fn as_constant(&self) -> Option<Scalar> {
        match self.terms.len() {
            0 => Some(Scalar::zero()),
            1 => {
                let (m, c) = self.terms.iter().next().unwrap();
                m.is_unit().then(|| c.clone())
            }
            _ => None,
        }
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(Mono::total_degree).max().unwrap_or(0)
    }

    pub fn degree_in(&self, v: Var) -> u32 {
        self.terms.keys().map(|m| m.exp(v)).max().unwrap_or(0)
    }

    pub fn mentions(&self, v: Var) -> bool {
        self.terms.keys().any(|m| m.exp(v) > 0)
    }

    pub fn mentions_any(&self, mut vars: impl Iterator<Item = Var>) -> bool {
        vars.any(|v| self.mentions(v))
    }

    /// Greatest term in the graded-lex order.
    pub fn leading(&self) -> Option<(&Mono, &Scalar)> {
        self.terms.iter().next_back()
    }

    pub fn leading_coeff(&self) -> Scalar {
        self.leading().map(|(_, c)| c.clone()).unwrap_or_else(Scalar::zero)
    }

    pub fn coeff(&self, m: &Mono) -> Scalar {
        self.terms.get(m).cloned().unwrap_or_else(Scalar::zero)
    }

    pub fn add_term(&mut self, m: Mono, c: Scalar) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                let sum = e.get() + &c;
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
        }
    }

    pub fn scale(&self, c: &Scalar) -> Polynomial {
        if c.is_zero() {
            return Self::zero(&self.uni);
        }
        let terms = self.terms.iter().map(|(m, a)| (m.clone(), a * c)).collect();
        Polynomial { uni: Arc::clone(&self.uni), terms }
    }

    pub fn mul_mono(&self, m: &Mono, c: &Scalar) -> Polynomial {
        if c.is_zero() {
            return Self::zero(&self.uni);
        }
        let terms = self.terms.iter().map(|(t, a)| (t.mul(m), a * c)).collect();
        Polynomial { uni: Arc::clone(&self.uni), terms }
    }

    pub fn pow(&self, e: u32) -> Polynomial {
        let mut acc = Self::one(&self.uni);
        for _ in 0..e {
            acc = &acc * self;
        }
        acc
    }

    /// Partial derivative with respect to `v`.
    pub fn derivative(&self, v: Var) -> Polynomial {
        let mut out = Self::zero(&self.uni);
        for (m, c) in &self.terms {
            let e = m.exp(v);
            if e == 0 {
                continue;
            }
            let mut exps = m.0.to_vec();
            exps[v.0] = e - 1;
            out.add_term(Mono(exps.into_boxed_slice()), c * Scalar::from(BigInt::from(e)));
        }
        out
    }

    /// Exact division; `None` when `d` does not divide `self`.
    pub fn div_exact(&self, d: &Polynomial) -> Option<Polynomial> {
        assert!(same_universe(&self.uni, &d.uni), "universe mismatch");
        assert!(!d.is_zero(), "division by zero polynomial");
        if self.is_zero() {
            return Some(Self::zero(&self.uni));
        }
        if let Some(c) = d.as_constant() {
            return Some(self.scale(&(Scalar::one() / c)));
        }
        let (dm, dc) = d.leading().unwrap();
        let dm = dm.clone();
        let dc = dc.clone();
        let mut rem = self.clone();
        let mut quo = Self::zero(&self.uni);
        while let Some((rm, rc)) = rem.leading() {
            let qm = rm.div(&dm)?;
            let qc = rc / &dc;
            let t = d.mul_mono(&qm, &qc);
            quo.add_term(qm, qc);
            rem = &rem - &t;
        }
        Some(quo)
    }

    /// View in `other`'s universe, which must extend this polynomial's.
    pub fn embed(&self, target: &Arc<VarUniverse>) -> Polynomial {
        if same_universe(&self.uni, target) {
            return self.clone();
        }
        assert!(self.uni.is_prefix_of(target), "universe is not a prefix of target");
        let w = target.width();
        let terms = self.terms.iter().map(|(m, c)| (m.padded(w), c.clone())).collect();
        Polynomial { uni: Arc::clone(target), terms }
    }

    /// View in a prefix universe; `None` if a dropped variable is used.
    pub fn restrict(&self, target: &Arc<VarUniverse>) -> Option<Polynomial> {
        if same_universe(&self.uni, target) {
            return Some(self.clone());
        }
        assert!(target.is_prefix_of(&self.uni), "target is not a prefix universe");
        let w = target.width();
        let mut terms = BTreeMap::new();
        for (m, c) in &self.terms {
            terms.insert(m.truncated(w)?, c.clone());
        }
        Some(Polynomial { uni: Arc::clone(target), terms })
    }

    /// Substitute polynomials for variables, all at once.
    pub fn substitute_polys(&self, bindings: &BTreeMap<Var, Polynomial>) -> Polynomial {
        let mut out = Self::zero(&self.uni);
        for (m, c) in &self.terms {
            let mut term = Self::constant(&self.uni, c.clone());
            for v in self.uni.vars() {
                let e = m.exp(v);
                if e == 0 {
                    continue;
                }
                match bindings.get(&v) {
                    Some(img) => term = &term * &img.pow(e),
                    None => term = term.mul_mono(&Mono::var(self.uni.width(), v, e), &Scalar::one()),
                }
            }
            out = &out + &term;
        }
        out
    }

    /// Gcd of all integer numerators over lcm of all denominators; the
    /// positive rational `c` such that `self / c` has coprime integer
    /// coefficients. Zero for the zero polynomial.
    pub fn rational_content(&self) -> Scalar {
        use num_integer::Integer;
        let mut num_gcd = BigInt::zero();
        let mut den_lcm = BigInt::one();
        for c in self.terms.values() {
            num_gcd = num_gcd.gcd(c.numer());
            den_lcm = den_lcm.lcm(c.denom());
        }
        if num_gcd.is_zero() {
            return Scalar::zero();
        }
        Scalar::new(num_gcd, den_lcm)
    }

    /// `self / rational_content`, with sign chosen so the leading
    /// coefficient is positive. Returns `(primitive, content)` with
    /// `self = primitive * content`.
    pub fn primitive_part(&self) -> (Polynomial, Scalar) {
        if self.is_zero() {
            return (self.clone(), Scalar::zero());
        }
        let mut c = self.rational_content();
        if self.leading_coeff().is_negative() {
            c = -c;
        }
        (self.scale(&(Scalar::one() / c.clone())), c)
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert!(same_universe(&self.uni, &rhs.uni), "universe mismatch");
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        assert!(same_universe(&self.uni, &rhs.uni), "universe mismatch");
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        let terms = self.terms.iter().map(|(m, c)| (m.clone(), -c.clone())).collect();
        Polynomial { uni: Arc::clone(&self.uni), terms }
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert!(same_universe(&self.uni, &rhs.uni), "universe mismatch");
        let mut out = Polynomial::zero(&self.uni);
        if self.is_zero() || rhs.is_zero() {
            return out;
        }
        // Iterate over the shorter operand.
        let (small, large) = if self.terms.len() <= rhs.terms.len() { (self, rhs) } else { (rhs, self) };
        for (m, c) in &small.terms {
            for (m2, c2) in &large.terms {
                out.add_term(m.mul(m2), c * c2);
            }
        }
        out
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Polynomial {
    /// Renders in the CLI expression grammar; see the workspace README.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        // Leading (largest) term first.
        for (m, c) in self.terms.iter().rev() {
            let neg = c.is_negative();
            let abs = c.abs();
            if first {
                if neg {
                    write!(f, "-")?;
                }
                first = false;
            } else if neg {
                write!(f, "-")?;
            } else {
                write!(f, "+")?;
            }
            let mut printed = false;
            if !abs.is_one() || m.is_unit() {
                if abs.denom().is_one() {
                    write!(f, "{}", abs.numer())?;
                } else {
                    write!(f, "{}/{}", abs.numer(), abs.denom())?;
                }
                printed = true;
            }
            for v in self.uni.vars() {
                let e = m.exp(v);
                if e == 0 {
                    continue;
                }
                if printed {
                    write!(f, "*")?;
                }
                write!(f, "{}", self.uni.name(v))?;
                if e > 1 {
                    write!(f, "^{e}")?;
                }
                printed = true;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u2() -> Arc<VarUniverse> {
        VarUniverse::new(2)
    }

    #[test]
    fn graded_lex_orders_by_degree_then_first_variable() {
        let u = u2();
        let x1 = Mono::var(u.width(), u.x(1), 1);
        let x2 = Mono::var(u.width(), u.x(2), 1);
        let x1sq = Mono::var(u.width(), u.x(1), 2);
        assert!(x1sq > x1);
        assert!(x1 > x2);
        assert!(x2 > Mono::unit(u.width()));
    }

    #[test]
    fn arithmetic_and_exact_division() {
        let u = u2();
        let x = Polynomial::var(&u, u.x(1));
        let one = Polynomial::one(&u);
        // (x^2 - 1) / (x - 1) = x + 1
        let p = &(&x * &x) - &one;
        let d = &x - &one;
        let q = p.div_exact(&d).unwrap();
        assert_eq!(q, &x + &one);
        assert!(p.div_exact(&(&x + &(&one + &one))).is_none());
    }

    #[test]
    fn derivative_power_rule() {
        let u = u2();
        let x = Polynomial::var(&u, u.x(1));
        let p = x.pow(3);
        assert_eq!(p.derivative(u.x(1)), x.pow(2).scale(&scalar_int(3)));
        assert!(p.derivative(u.y()).is_zero());
    }

    #[test]
    fn primitive_part_normalizes_sign_and_content() {
        let u = u2();
        let x = Polynomial::var(&u, u.x(1));
        let p = x.scale(&scalar(-6, 4)); // -3/2 x
        let (prim, cont) = p.primitive_part();
        assert_eq!(prim, x);
        assert_eq!(cont, scalar(-3, 2));
    }

    #[test]
    fn display_renders_leading_term_first() {
        let u = u2();
        let x = Polynomial::var(&u, u.x(1));
        let p = &x.pow(2) - &Polynomial::one(&u);
        assert_eq!(p.to_string(), "x[1]^2-1");
    }
}
